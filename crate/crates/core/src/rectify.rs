//! Plane rectification into level-2 products.
//!
//! Every image is resampled onto a north-up lat/lon grid lying on one common
//! height plane, all at one common ground sampling distance. Each product
//! gets a fresh RPC fitted to virtual ground control points so that later
//! stages can treat the level-2 raster as an ordinary RPC image.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, SymmetricEigen, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{meters_per_degree, polygon_area_m2, GroundBBox};
use crate::kv::{fmt_f64, KeyValues};
use crate::raster::Raster;
use crate::rpc::{poly_terms, BiasCorrection, GroundPoint, ImagePoint, RpcModel};

pub const RIDGE_LAMBDA: f64 = 1e-8;
pub const RIDGE_REFINEMENTS: usize = 10;
pub const FIT_MAX_CONDITION: f64 = 1e12;
/// Unknowns of one rational polynomial with a unit denominator constant.
pub const MIN_FIT_SAMPLES: usize = 39;
pub const VIRTUAL_GRID_PLANAR: usize = 10;
pub const VIRTUAL_GRID_HEIGHTS: usize = 5;

/// Affine map from level-2 pixel coordinates to `(lat, lon)` on the plane:
/// `lon = c0 + col*c1 + row*c2`, `lat = c3 + col*c4 + row*c5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform(pub [f64; 6]);

impl GeoTransform {
    pub fn north_up(max_lat: f64, min_lon: f64, dlat: f64, dlon: f64) -> Self {
        // pixel centers sit at integer coordinates, edges at half-integers
        GeoTransform([min_lon + 0.5 * dlon, dlon, 0.0, max_lat - 0.5 * dlat, 0.0, -dlat])
    }

    pub fn apply(&self, p: &ImagePoint) -> (f64, f64) {
        let c = &self.0;
        let lon = c[0] + p.col * c[1] + p.row * c[2];
        let lat = c[3] + p.col * c[4] + p.row * c[5];
        (lat, lon)
    }

    pub fn invert(&self, lat: f64, lon: f64) -> Option<ImagePoint> {
        let c = &self.0;
        let m = Matrix2::new(c[1], c[2], c[4], c[5]);
        let x = m.try_inverse()? * Vector2::new(lon - c[0], lat - c[3]);
        Some(ImagePoint::new(x[1], x[0]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level2Product {
    pub raster: Raster,
    pub rpc: RpcModel,
    pub plane_height: f64,
    pub gsd: f64,
    pub geo_transform: GeoTransform,
    pub footprint: GroundBBox,
}

/// Offsets and scales of a fitted model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpcFrame {
    pub line_off: f64,
    pub line_scale: f64,
    pub samp_off: f64,
    pub samp_scale: f64,
    pub lat_off: f64,
    pub lat_scale: f64,
    pub lon_off: f64,
    pub lon_scale: f64,
    pub hei_off: f64,
    pub hei_scale: f64,
}

fn mid_half(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    (0.5 * (lo + hi), 0.5 * (hi - lo))
}

impl RpcFrame {
    /// Offset = midrange and scale = half-range of every coordinate.
    pub fn from_samples(samples: &[(GroundPoint, ImagePoint)]) -> Result<Self> {
        let (line_off, line_scale) = mid_half(samples.iter().map(|s| s.1.row));
        let (samp_off, samp_scale) = mid_half(samples.iter().map(|s| s.1.col));
        let (lat_off, lat_scale) = mid_half(samples.iter().map(|s| s.0.lat));
        let (lon_off, lon_scale) = mid_half(samples.iter().map(|s| s.0.lon));
        let (hei_off, hei_scale) = mid_half(samples.iter().map(|s| s.0.hei));
        let frame = RpcFrame {
            line_off,
            line_scale,
            samp_off,
            samp_scale,
            lat_off,
            lat_scale,
            lon_off,
            lon_scale,
            hei_off,
            hei_scale,
        };
        let scales = [line_scale, samp_scale, lat_scale, lon_scale, hei_scale];
        if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::IllConditioned { condition: f64::INFINITY, limit: FIT_MAX_CONDITION });
        }
        Ok(frame)
    }
}

/// Mean of the models' height offsets.
pub fn common_plane_height<'a>(rpcs: impl IntoIterator<Item = &'a RpcModel>) -> Result<f64> {
    let (sum, n) = rpcs.into_iter().fold((0.0, 0usize), |(s, n), r| (s + r.hei_off, n + 1));
    if n == 0 {
        return Err(Error::EmptyInput("no RPC models to average"));
    }
    Ok(sum / n as f64)
}

/// Outer pixel corners of a raster, in image coordinates.
fn raster_corners(width: usize, height: usize) -> [ImagePoint; 4] {
    let (h, w) = (height as f64 - 0.5, width as f64 - 0.5);
    [ImagePoint::new(-0.5, -0.5), ImagePoint::new(-0.5, w), ImagePoint::new(h, w), ImagePoint::new(h, -0.5)]
}

pub fn plane_corners(width: usize, height: usize, rpc: &RpcModel, plane: f64) -> Result<[GroundPoint; 4]> {
    let c = raster_corners(width, height);
    Ok([
        rpc.inverse_project(&BiasCorrection::ZERO, &c[0], plane)?,
        rpc.inverse_project(&BiasCorrection::ZERO, &c[1], plane)?,
        rpc.inverse_project(&BiasCorrection::ZERO, &c[2], plane)?,
        rpc.inverse_project(&BiasCorrection::ZERO, &c[3], plane)?,
    ])
}

/// Linear ground sampling distance `sqrt(area / pixels)` of one image on the plane.
pub fn image_gsd(raster: &Raster, rpc: &RpcModel, plane: f64) -> Result<f64> {
    if raster.is_empty() {
        return Err(Error::EmptyFootprint);
    }
    let corners = plane_corners(raster.width, raster.height, rpc, plane)?;
    let area = polygon_area_m2(&corners);
    Ok((area / (raster.width * raster.height) as f64).sqrt())
}

/// Coarsest per-image GSD over the set.
pub fn common_gsd(images: &[(&Raster, &RpcModel)], plane: f64) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptyInput("no images for GSD computation"));
    }
    images.iter().map(|(r, m)| image_gsd(r, m, plane)).try_fold(0.0f64, |acc, g| Ok(acc.max(g?)))
}

/// Virtual ground control points: a planimetric grid over `bbox` at several heights.
pub fn virtual_grid(bbox: &GroundBBox, hei_min: f64, hei_max: f64, planar: usize, heights: usize) -> Vec<GroundPoint> {
    let lerp = |a: f64, b: f64, i: usize, n: usize| {
        if n <= 1 {
            0.5 * (a + b)
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(planar * planar * heights);
    for k in 0..heights {
        let h = lerp(hei_min, hei_max, k, heights);
        for i in 0..planar {
            let lat = lerp(bbox.min_lat, bbox.max_lat, i, planar);
            for j in 0..planar {
                let lon = lerp(bbox.min_lon, bbox.max_lon, j, planar);
                out.push(GroundPoint::new(lat, lon, h));
            }
        }
    }
    out
}

/// Fits an RPC to ground/image correspondences, using their extents for normalization.
pub fn fit_rpc(samples: &[(GroundPoint, ImagePoint)]) -> Result<RpcModel> {
    check_samples(samples)?;
    fit_rpc_in_frame(samples, &RpcFrame::from_samples(samples)?)
}

fn check_samples(samples: &[(GroundPoint, ImagePoint)]) -> Result<()> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientSamples { what: "samples", got: samples.len(), need: MIN_FIT_SAMPLES });
    }
    let mut heights: Vec<f64> = samples.iter().map(|s| s.0.hei).collect();
    heights.sort_by(f64::total_cmp);
    heights.dedup();
    if heights.len() < 3 {
        return Err(Error::InsufficientSamples { what: "distinct heights", got: heights.len(), need: 3 });
    }
    Ok(())
}

/// Fits an RPC in a caller-chosen normalization frame.
///
/// Each image axis is solved separately from the linearized form
/// `num(P,L,H) - r * den(P,L,H) = 0` with `den[0] = 1`. The ridge term is
/// centered on the pure-polynomial fit (`den = 1`) so directions the data
/// cannot determine stay at that fit instead of collapsing toward zero.
pub fn fit_rpc_in_frame(samples: &[(GroundPoint, ImagePoint)], frame: &RpcFrame) -> Result<RpcModel> {
    check_samples(samples)?;
    let terms: Vec<[f64; 20]> = samples
        .iter()
        .map(|(g, _)| {
            poly_terms(
                (g.lat - frame.lat_off) / frame.lat_scale,
                (g.lon - frame.lon_off) / frame.lon_scale,
                (g.hei - frame.hei_off) / frame.hei_scale,
            )
        })
        .collect();
    let rows: Vec<f64> = samples.iter().map(|(_, p)| (p.row - frame.line_off) / frame.line_scale).collect();
    let cols: Vec<f64> = samples.iter().map(|(_, p)| (p.col - frame.samp_off) / frame.samp_scale).collect();
    let (line_num, line_den) = fit_axis(&terms, &rows)?;
    let (samp_num, samp_den) = fit_axis(&terms, &cols)?;
    let model = RpcModel {
        line_off: frame.line_off,
        line_scale: frame.line_scale,
        samp_off: frame.samp_off,
        samp_scale: frame.samp_scale,
        lat_off: frame.lat_off,
        lat_scale: frame.lat_scale,
        lon_off: frame.lon_off,
        lon_scale: frame.lon_scale,
        hei_off: frame.hei_off,
        hei_scale: frame.hei_scale,
        line_num,
        line_den,
        samp_num,
        samp_den,
    }
    .validated()?;
    let rms = fit_rms(&model, samples);
    if rms >= 0.01 {
        log::warn!("fitted RPC reprojects its samples with {rms:.4} px RMS");
    }
    Ok(model)
}

fn ridge_solve(normal: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    Ok(ridge_factor(normal)?.solve(&rhs))
}

fn ridge_factor(normal: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let eig = SymmetricEigen::new(normal.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= FIT_MAX_CONDITION) {
        return Err(Error::IllConditioned { condition: cond, limit: FIT_MAX_CONDITION });
    }
    normal.cholesky().ok_or(Error::IllConditioned { condition: f64::INFINITY, limit: FIT_MAX_CONDITION })
}

fn fit_axis(terms: &[[f64; 20]], targets: &[f64]) -> Result<([f64; 20], [f64; 20])> {
    let n = terms.len() as f64;
    // polynomial prior: den = 1
    let mut pn = DMatrix::<f64>::zeros(20, 20);
    let mut pr = DVector::<f64>::zeros(20);
    for (t, &r) in terms.iter().zip(targets) {
        for a in 0..20 {
            pr[a] += t[a] * r / n;
            for b in 0..20 {
                pn[(a, b)] += t[a] * t[b] / n;
            }
        }
    }
    for a in 0..20 {
        pn[(a, a)] += RIDGE_LAMBDA;
    }
    let prior_num = ridge_solve(pn, pr)?;

    // full rational system, unknowns: 20 numerator + 19 denominator terms
    let mut normal = DMatrix::<f64>::zeros(39, 39);
    let mut rhs = DVector::<f64>::zeros(39);
    let mut row = [0.0; 39];
    for (t, &r) in terms.iter().zip(targets) {
        row[..20].copy_from_slice(t);
        for k in 1..20 {
            row[19 + k] = -r * t[k];
        }
        for a in 0..39 {
            rhs[a] += row[a] * r / n;
            for b in a..39 {
                normal[(a, b)] += row[a] * row[b] / n;
            }
        }
    }
    for a in 0..39 {
        for b in 0..a {
            normal[(a, b)] = normal[(b, a)];
        }
        normal[(a, a)] += RIDGE_LAMBDA;
    }
    // iterated Tikhonov: well-determined directions converge to the exact
    // least-squares solution, near-null directions stay at the prior
    let chol = ridge_factor(normal)?;
    let mut x = DVector::<f64>::zeros(39);
    x.rows_mut(0, 20).copy_from(&prior_num);
    for _ in 0..RIDGE_REFINEMENTS {
        x = chol.solve(&(&rhs + RIDGE_LAMBDA * &x));
    }
    let mut num = [0.0; 20];
    let mut den = [0.0; 20];
    num.copy_from_slice(&x.as_slice()[..20]);
    den[0] = 1.0;
    den[1..].copy_from_slice(&x.as_slice()[20..]);
    Ok((num, den))
}

/// Root-mean-square reprojection distance of samples through `model`.
pub fn fit_rms(model: &RpcModel, samples: &[(GroundPoint, ImagePoint)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples
        .iter()
        .map(|(g, p)| match model.project(&BiasCorrection::ZERO, g) {
            Ok(q) => (q.row - p.row).powi(2) + (q.col - p.col).powi(2),
            Err(_) => f64::INFINITY,
        })
        .sum();
    (sum / samples.len() as f64).sqrt()
}

/// Fits a model to an arbitrary ground-to-image mapping over the virtual grid.
pub fn fit_rpc_to_mapping(
    grid: &[GroundPoint],
    mapping: impl Fn(&GroundPoint) -> Result<ImagePoint>,
) -> Result<RpcModel> {
    let samples = grid.iter().map(|g| Ok((*g, mapping(g)?))).collect::<Result<Vec<_>>>()?;
    fit_rpc(&samples)
}

/// Resamples `image` onto the height plane at the given GSD.
pub fn rectify_image(image: &Raster, rpc: &RpcModel, plane: f64, gsd: f64) -> Result<Level2Product> {
    if !(gsd > 0.0 && gsd.is_finite()) {
        return Err(Error::ConfigInvalid(format!("gsd must be positive, got {gsd}")));
    }
    if image.is_empty() {
        return Err(Error::EmptyFootprint);
    }
    let corners = plane_corners(image.width, image.height, rpc, plane)?;
    let bbox = GroundBBox::enclosing(&corners).ok_or(Error::EmptyFootprint)?;
    if !(bbox.area() > 0.0) {
        return Err(Error::EmptyFootprint);
    }
    let (center_lat, _) = bbox.center();
    let (mlat, mlon) = meters_per_degree(center_lat);
    let dlat = gsd / mlat;
    let dlon = gsd / mlon;
    // tolerate rounding so re-rectifying a product keeps its size
    let width = ((bbox.max_lon - bbox.min_lon) / dlon - 1e-3).ceil().max(1.0) as usize;
    let height = ((bbox.max_lat - bbox.min_lat) / dlat - 1e-3).ceil().max(1.0) as usize;
    let geo = GeoTransform::north_up(bbox.max_lat, bbox.min_lon, dlat, dlon);

    let mut raster = Raster::new(width, height, image.max_value, image.nodata);
    raster.pixels.par_chunks_mut(width).enumerate().for_each(|(row, line)| {
        for (col, px) in line.iter_mut().enumerate() {
            let (lat, lon) = geo.apply(&ImagePoint::new(row as f64, col as f64));
            let g = GroundPoint::new(lat, lon, plane);
            if let Ok(src) = rpc.project(&BiasCorrection::ZERO, &g) {
                if let Some(v) = image.bilinear(src.row, src.col) {
                    *px = image.quantize(v);
                }
            }
        }
    });

    let footprint = GroundBBox {
        min_lat: bbox.max_lat - height as f64 * dlat,
        max_lat: bbox.max_lat,
        min_lon: bbox.min_lon,
        max_lon: bbox.min_lon + width as f64 * dlon,
    };
    let grid = virtual_grid(
        &footprint,
        rpc.hei_off - rpc.hei_scale,
        rpc.hei_off + rpc.hei_scale,
        VIRTUAL_GRID_PLANAR,
        VIRTUAL_GRID_HEIGHTS,
    );
    let level2_rpc = fit_rpc_to_mapping(&grid, |g| {
        let src = rpc.project(&BiasCorrection::ZERO, g)?;
        let on_plane = rpc.inverse_project(&BiasCorrection::ZERO, &src, plane)?;
        geo.invert(on_plane.lat, on_plane.lon).ok_or(Error::EmptyFootprint)
    })?;

    Ok(Level2Product { raster, rpc: level2_rpc, plane_height: plane, gsd, geo_transform: geo, footprint })
}

impl Level2Product {
    /// Sidecar text: product geometry followed by the refitted RPC.
    pub fn sidecar_text(&self, extra: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in extra {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        let gt = self.geo_transform.0.map(fmt_f64).join(" ");
        let fp = &self.footprint;
        out.push_str(&format!("plane_height: {}\n", fmt_f64(self.plane_height)));
        out.push_str(&format!("gsd: {}\n", fmt_f64(self.gsd)));
        out.push_str(&format!("geo_transform: {gt}\n"));
        out.push_str(&format!(
            "footprint: {} {} {} {}\n",
            fmt_f64(fp.min_lat),
            fmt_f64(fp.max_lat),
            fmt_f64(fp.min_lon),
            fmt_f64(fp.max_lon)
        ));
        out.push_str(&format!("nodata: {}\n", self.raster.nodata));
        out.push_str(&self.rpc.to_text());
        out
    }

    pub fn write(
        &self,
        raster_path: impl AsRef<Path>,
        sidecar_path: impl AsRef<Path>,
        extra: &[(&str, String)],
    ) -> Result<()> {
        self.raster.write_pgm(&raster_path)?;
        let sidecar = sidecar_path.as_ref();
        std::fs::write(sidecar, self.sidecar_text(extra)).map_err(|e| Error::io(sidecar, e))
    }

    pub fn read(raster_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<Self> {
        let kv = KeyValues::read(sidecar_path)?;
        let nodata: u16 = kv.number("nodata")?;
        let raster = Raster::read_pgm(raster_path, nodata)?;
        let gt = kv.numbers("geo_transform")?;
        let gt: [f64; 6] =
            gt.try_into().map_err(|_| Error::parse(kv.path(), "key geo_transform: expected 6 coefficients"))?;
        let fp = kv.numbers("footprint")?;
        if fp.len() != 4 {
            return Err(Error::parse(kv.path(), "key footprint: expected 4 values"));
        }
        Ok(Level2Product {
            raster,
            rpc: RpcModel::from_key_values(&kv)?,
            plane_height: kv.number("plane_height")?,
            gsd: kv.number("gsd")?,
            geo_transform: GeoTransform(gt),
            footprint: GroundBBox { min_lat: fp[0], max_lat: fp[1], min_lon: fp[2], max_lon: fp[3] },
        })
    }

    /// Largest disagreement, in pixels, between the refitted RPC and the
    /// geo-transform at the plane height over an `n x n` grid.
    pub fn geo_consistency(&self, n: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = ImagePoint::new(
                    (self.raster.height as f64 - 1.0) * i as f64 / (n - 1).max(1) as f64,
                    (self.raster.width as f64 - 1.0) * j as f64 / (n - 1).max(1) as f64,
                );
                let (lat, lon) = self.geo_transform.apply(&p);
                let q = self.rpc.project(&BiasCorrection::ZERO, &GroundPoint::new(lat, lon, self.plane_height))?;
                worst = worst.max(p.distance(&q));
            }
        }
        Ok(worst)
    }
}
