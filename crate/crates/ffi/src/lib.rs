//! C interface to the bias adjustment library.
//!
//! Objects are opaque handles created by `*_new`/`*_read` functions and
//! released with the matching `*_free`. Every fallible function returns a
//! [`SatbaStatus`]; the message of the last failure on the calling thread is
//! available from [`satba_last_error`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use satba::adjust::{self, AdjustParams};
use satba::tracks::Track;
use satba::{BiasCorrection, Error, GroundPoint, ImagePoint, RpcModel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SatbaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Data = 5,
    Numerical = 6,
    Panic = 7,
}

/// Opaque RPC camera model.
pub struct SatbaRpc {
    model: RpcModel,
}

/// Opaque bias adjustment problem and, after a run, its solution.
pub struct SatbaAdjustment {
    rpcs: Vec<RpcModel>,
    tracks: Vec<Track>,
    gcps: BTreeMap<usize, GroundPoint>,
    solution: Option<Solution>,
}

struct Solution {
    biases: Vec<BiasCorrection>,
    before_avg_xy: f64,
    after_avg_xy: f64,
    iterations: usize,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(e: &Error) -> SatbaStatus {
    match e {
        Error::Io { .. } => SatbaStatus::Io,
        Error::Parse { .. } => SatbaStatus::Parse,
        e if e.is_numerical() => SatbaStatus::Numerical,
        _ => SatbaStatus::Data,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SatbaStatus, String)>) -> SatbaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SatbaStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SatbaStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (SatbaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SatbaStatus, String) {
    (SatbaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: String) -> (SatbaStatus, String) {
    (SatbaStatus::InvalidArgument, message)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SatbaStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (SatbaStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn satba_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn satba_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// RPC models

/// Reads an RPC text file (`KEY: value` lines).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn satba_rpc_read(path: *const c_char, out: *mut *mut SatbaRpc) -> SatbaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = RpcModel::read(str_arg(path, "path")?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SatbaRpc { model }));
        Ok(())
    })
}

/// Parses RPC text held in memory.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn satba_rpc_parse(text: *const c_char, out: *mut *mut SatbaRpc) -> SatbaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = RpcModel::parse(str_arg(text, "text")?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SatbaRpc { model }));
        Ok(())
    })
}

/// # Safety
/// `rpc` must come from `satba_rpc_read`/`satba_rpc_parse` and not be used
/// afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn satba_rpc_free(rpc: *mut SatbaRpc) {
    if !rpc.is_null() {
        drop(Box::from_raw(rpc));
    }
}

/// Projects a ground point (degrees, meters) to pixel coordinates, with the
/// bias subtracted from the raw projection.
///
/// # Safety
/// `rpc` must be a live handle; `row` and `col` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn satba_rpc_project(
    rpc: *const SatbaRpc,
    d_row: f64,
    d_col: f64,
    lat: f64,
    lon: f64,
    hei: f64,
    row: *mut f64,
    col: *mut f64,
) -> SatbaStatus {
    guard(|| {
        let rpc = rpc.as_ref().ok_or_else(|| null("rpc"))?;
        let (row, col) = (out_arg(row, "row")?, out_arg(col, "col")?);
        let p =
            rpc.model.project(&BiasCorrection::new(d_row, d_col), &GroundPoint::new(lat, lon, hei)).map_err(lib_err)?;
        (*row, *col) = (p.row, p.col);
        Ok(())
    })
}

/// Intersects the ray of a pixel with the height `hei`.
///
/// # Safety
/// `rpc` must be a live handle; `lat` and `lon` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn satba_rpc_inverse_project(
    rpc: *const SatbaRpc,
    d_row: f64,
    d_col: f64,
    row: f64,
    col: f64,
    hei: f64,
    lat: *mut f64,
    lon: *mut f64,
) -> SatbaStatus {
    guard(|| {
        let rpc = rpc.as_ref().ok_or_else(|| null("rpc"))?;
        let (lat, lon) = (out_arg(lat, "lat")?, out_arg(lon, "lon")?);
        let g = rpc
            .model
            .inverse_project(&BiasCorrection::new(d_row, d_col), &ImagePoint::new(row, col), hei)
            .map_err(lib_err)?;
        (*lat, *lon) = (g.lat, g.lon);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// adjustment

/// Creates an empty adjustment problem.
#[no_mangle]
pub extern "C" fn satba_adjustment_new() -> *mut SatbaAdjustment {
    Box::into_raw(Box::new(SatbaAdjustment {
        rpcs: Vec::new(),
        tracks: Vec::new(),
        gcps: BTreeMap::new(),
        solution: None,
    }))
}

/// # Safety
/// `adj` must come from `satba_adjustment_new` and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn satba_adjustment_free(adj: *mut SatbaAdjustment) {
    if !adj.is_null() {
        drop(Box::from_raw(adj));
    }
}

/// Adds a copy of `rpc` as the next image; its id is written to `image_id`.
///
/// # Safety
/// Handles must be live; `image_id` may be null.
#[no_mangle]
pub unsafe extern "C" fn satba_adjustment_add_image(
    adj: *mut SatbaAdjustment,
    rpc: *const SatbaRpc,
    image_id: *mut usize,
) -> SatbaStatus {
    guard(|| {
        let adj = adj.as_mut().ok_or_else(|| null("adjustment"))?;
        let rpc = rpc.as_ref().ok_or_else(|| null("rpc"))?;
        adj.rpcs.push(rpc.model.clone());
        adj.solution = None;
        if let Some(id) = image_id.as_mut() {
            *id = adj.rpcs.len() - 1;
        }
        Ok(())
    })
}

/// Adds a track of `count` observations; its id is written to `track_id`.
///
/// # Safety
/// `images`, `rows` and `cols` must each hold `count` elements; `track_id`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn satba_adjustment_add_track(
    adj: *mut SatbaAdjustment,
    count: usize,
    images: *const usize,
    rows: *const f64,
    cols: *const f64,
    track_id: *mut usize,
) -> SatbaStatus {
    guard(|| {
        let adj = adj.as_mut().ok_or_else(|| null("adjustment"))?;
        if images.is_null() || rows.is_null() || cols.is_null() {
            return Err(null("observation array"));
        }
        if count < 2 {
            return Err(invalid(format!("a track needs at least two observations, got {count}")));
        }
        let (images, rows, cols) = (
            std::slice::from_raw_parts(images, count),
            std::slice::from_raw_parts(rows, count),
            std::slice::from_raw_parts(cols, count),
        );
        if let Some(i) = images.iter().find(|&&i| i >= adj.rpcs.len()) {
            return Err(invalid(format!("unknown image {i}")));
        }
        let track = Track::new(
            images.iter().zip(rows.iter().zip(cols)).map(|(&i, (&r, &c))| (i, ImagePoint::new(r, c))).collect(),
        );
        if track.observations.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("a track may observe each image once".into()));
        }
        adj.tracks.push(track);
        adj.solution = None;
        if let Some(id) = track_id.as_mut() {
            *id = adj.tracks.len() - 1;
        }
        Ok(())
    })
}

/// Fixes the ground position of a track, making it a control point.
///
/// # Safety
/// `adj` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn satba_adjustment_set_gcp(
    adj: *mut SatbaAdjustment,
    track_id: usize,
    lat: f64,
    lon: f64,
    hei: f64,
) -> SatbaStatus {
    guard(|| {
        let adj = adj.as_mut().ok_or_else(|| null("adjustment"))?;
        if track_id >= adj.tracks.len() {
            return Err(invalid(format!("unknown track {track_id}")));
        }
        adj.gcps.insert(track_id, GroundPoint::new(lat, lon, hei));
        adj.solution = None;
        Ok(())
    })
}

/// Solves for the biases. A tolerance or iteration count of zero selects
/// the default (0.001 px, 50 iterations).
///
/// # Safety
/// `adj` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn satba_adjustment_run(
    adj: *mut SatbaAdjustment,
    tolerance_px: f64,
    max_iter: usize,
) -> SatbaStatus {
    guard(|| {
        let adj = adj.as_mut().ok_or_else(|| null("adjustment"))?;
        if tolerance_px < 0.0 || tolerance_px.is_nan() {
            return Err(invalid(format!("tolerance must be non-negative, got {tolerance_px}")));
        }
        let mut params = AdjustParams::default();
        if tolerance_px > 0.0 {
            params.tolerance_px = tolerance_px;
        }
        if max_iter > 0 {
            params.max_iter = max_iter;
        }
        adj.solution = None;
        if adj.tracks.is_empty() {
            return Err(lib_err(Error::EmptyInput("no tracks to adjust")));
        }
        let mut graph = adjust::assemble(adj.rpcs.clone(), adj.tracks.clone(), &adj.gcps).map_err(lib_err)?;
        let before = adjust::report(&graph);
        let result = adjust::adjust_loop(&mut graph, &params).map_err(lib_err)?;
        let after = adjust::report(&graph);
        adj.solution = Some(Solution {
            biases: result.biases,
            before_avg_xy: before.avg_xy,
            after_avg_xy: after.avg_xy,
            iterations: result.iterations,
            converged: result.converged,
        });
        Ok(())
    })
}

unsafe fn solution<'a>(adj: *const SatbaAdjustment) -> Result<&'a Solution, (SatbaStatus, String)> {
    let adj = adj.as_ref().ok_or_else(|| null("adjustment"))?;
    adj.solution.as_ref().ok_or_else(|| invalid("adjustment has not been run".into()))
}

/// Adjusted bias of one image.
///
/// # Safety
/// `adj` must be a live handle that has been run; outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn satba_adjustment_bias(
    adj: *const SatbaAdjustment,
    image_id: usize,
    d_row: *mut f64,
    d_col: *mut f64,
) -> SatbaStatus {
    guard(|| {
        let s = solution(adj)?;
        let (d_row, d_col) = (out_arg(d_row, "d_row")?, out_arg(d_col, "d_col")?);
        let b = s.biases.get(image_id).ok_or_else(|| invalid(format!("unknown image {image_id}")))?;
        (*d_row, *d_col) = (b.d_row, b.d_col);
        Ok(())
    })
}

/// Mean reprojection error before and after adjustment, the iteration count
/// and whether the tolerance was reached. Any output may be null.
///
/// # Safety
/// `adj` must be a live handle that has been run.
#[no_mangle]
pub unsafe extern "C" fn satba_adjustment_summary(
    adj: *const SatbaAdjustment,
    before_avg_xy: *mut f64,
    after_avg_xy: *mut f64,
    iterations: *mut usize,
    converged: *mut bool,
) -> SatbaStatus {
    guard(|| {
        let s = solution(adj)?;
        if let Some(v) = before_avg_xy.as_mut() {
            *v = s.before_avg_xy;
        }
        if let Some(v) = after_avg_xy.as_mut() {
            *v = s.after_avg_xy;
        }
        if let Some(v) = iterations.as_mut() {
            *v = s.iterations;
        }
        if let Some(v) = converged.as_mut() {
            *v = s.converged;
        }
        Ok(())
    })
}
