//! Bias-compensated bundle adjustment for satellite images described by
//! rational polynomial camera (RPC) models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjust;
pub mod cli;
pub mod error;
pub mod geo;
pub mod kv;
pub mod matching;
pub mod raster;
pub mod rectify;
pub mod rpc;
pub mod synth;
pub mod tracks;

pub use error::{Error, Result};
pub use rpc::{BiasCorrection, GroundPoint, ImagePoint, RpcModel};
