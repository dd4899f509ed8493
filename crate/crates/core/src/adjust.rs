//! Bias-compensated bundle adjustment with ground points eliminated.
//!
//! Unknowns are one `(d_row, d_col)` bias per image and one ground point per
//! track. Ground corrections are parameterized in the normalized ground frame
//! of image 0, so every point block is dimensionless and well scaled. The
//! point blocks are eliminated track by track: only the `2N x 2N` reduced
//! normal matrix is ever formed, whatever the number of tracks.
//!
//! Without ground control the datum is free. For near-parallel projection
//! cameras the unobservable motions are the three ground translations, each
//! of which moves image `i` by `J_i * t`. Pinning both bias components of
//! image 0 and the most sensitive component of one other image removes them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rpc::{symmetric_condition, triangulate, triangulate_from, BiasCorrection, GroundPoint, RpcModel};
use crate::tracks::Track;

pub const DEFAULT_TOLERANCE_PX: f64 = 0.001;
pub const DEFAULT_MAX_ITER: usize = 50;
/// Point blocks above this condition number are excluded from the solve.
pub const POINT_BLOCK_MAX_COND: f64 = 1e10;
/// Relative Cholesky pivot below which the reduced system is rank deficient.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub rpc: RpcModel,
    pub bias: BiasCorrection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGraph {
    pub images: Vec<ImageEntry>,
    pub tracks: Vec<Track>,
    /// Index of each track in the input handed to [`assemble`].
    pub track_ids: Vec<usize>,
    /// Degrees/meters per normalized ground unit (image 0's scales).
    pub ground_scale: Vector3<f64>,
    /// Indices into the `2N` bias vector held at zero correction.
    pub pins: Vec<usize>,
}

/// Linearized observations of one track: `(image, residual, dv/dy)` where
/// `y` is the normalized ground correction.
pub type TrackLinearization = Vec<(usize, Vector2<f64>, Matrix2x3<f64>)>;

impl ObservationGraph {
    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn observation_count(&self) -> usize {
        self.tracks.iter().map(Track::degree).sum()
    }

    pub fn has_gcps(&self) -> bool {
        self.tracks.iter().any(Track::is_gcp)
    }

    pub fn biases(&self) -> Vec<BiasCorrection> {
        self.images.iter().map(|i| i.bias).collect()
    }

    pub fn grounds(&self) -> Vec<GroundPoint> {
        self.tracks.iter().map(|t| t.ground).collect()
    }

    pub fn linearize_track(&self, j: usize) -> Result<TrackLinearization> {
        let t = &self.tracks[j];
        let s = Matrix3::from_diagonal(&self.ground_scale);
        t.observations
            .iter()
            .map(|(i, p)| {
                let img = &self.images[*i];
                let (v, b) = img.rpc.linearize(&img.bias, &t.ground, p)?;
                Ok((*i, v, b * s))
            })
            .collect()
    }

    fn track_observations(&self, t: &Track) -> Vec<(&RpcModel, BiasCorrection, crate::rpc::ImagePoint)> {
        t.observations.iter().map(|(i, p)| (&self.images[*i].rpc, self.images[*i].bias, *p)).collect()
    }
}

/// Builds the observation graph: zero biases, triangulated grounds, GCP
/// grounds held fixed. Tracks that cannot be triangulated are dropped.
pub fn assemble(
    rpcs: Vec<RpcModel>,
    tracks: Vec<Track>,
    gcps: &BTreeMap<usize, GroundPoint>,
) -> Result<ObservationGraph> {
    if rpcs.is_empty() {
        return Err(Error::EmptyInput("no images to adjust"));
    }
    let n = rpcs.len();
    for (id, t) in tracks.iter().enumerate() {
        if let Some((i, _)) = t.observations.iter().find(|o| o.0 >= n) {
            return Err(Error::ConfigInvalid(format!("track {id} observes unknown image {i}")));
        }
        if t.degree() < 2 {
            return Err(Error::ConfigInvalid(format!("track {id} has fewer than two observations")));
        }
    }
    if let Some(id) = gcps.keys().find(|&&id| id >= tracks.len()) {
        return Err(Error::ConfigInvalid(format!("GCP refers to unknown track {id}")));
    }
    let ground_scale = rpcs[0].ground_scales();
    let images: Vec<ImageEntry> = rpcs.into_iter().map(|rpc| ImageEntry { rpc, bias: BiasCorrection::ZERO }).collect();

    let initial: Vec<Result<GroundPoint>> = tracks
        .par_iter()
        .enumerate()
        .map(|(id, t)| {
            if let Some(g) = gcps.get(&id) {
                return Ok(*g);
            }
            let obs: Vec<_> = t.observations.iter().map(|(i, p)| (&images[*i].rpc, BiasCorrection::ZERO, *p)).collect();
            triangulate(&obs).map_err(|e| Error::TriangulationFailed { track: id, reason: e.to_string() })
        })
        .collect();

    let mut kept = Vec::with_capacity(tracks.len());
    let mut track_ids = Vec::with_capacity(tracks.len());
    for (id, (mut t, g)) in tracks.into_iter().zip(initial).enumerate() {
        match g {
            Ok(g) => {
                t.ground = g;
                t.gcp_ground = gcps.get(&id).copied();
                kept.push(t);
                track_ids.push(id);
            }
            Err(e) => warn!("dropping track: {e}"),
        }
    }
    let mut graph = ObservationGraph { images, tracks: kept, track_ids, ground_scale, pins: Vec::new() };
    graph.pins = datum_pins(&graph)?;
    Ok(graph)
}

/// Bias components held fixed in free-network mode; empty with GCPs.
///
/// Pins image 0's row and column, then the component of another image that
/// responds most to a ground shift along image 0's viewing ray.
pub fn datum_pins(graph: &ObservationGraph) -> Result<Vec<usize>> {
    if graph.has_gcps() {
        return Ok(Vec::new());
    }
    let mut pins = vec![0, 1];
    if graph.images.len() < 2 {
        return Ok(pins);
    }
    let s = Matrix3::from_diagonal(&graph.ground_scale);
    let at = graph.images[0].rpc.center();
    let j0 = graph.images[0].rpc.ground_gradient(&at)? * s;
    let ray = j0.row(0).transpose().cross(&j0.row(1).transpose());
    let mut best = (0.0, 0);
    for (i, img) in graph.images.iter().enumerate().skip(1) {
        let ji = img.rpc.ground_gradient(&at)? * s;
        let n = ji * ray;
        for c in 0..2 {
            if n[c].abs() > best.0 {
                best = (n[c].abs(), 2 * i + c);
            }
        }
    }
    if best.0 > 0.0 {
        pins.push(best.1);
    }
    Ok(pins)
}

// ---------------------------------------------------------------------------
// reduced normal equations

/// `(N_A - N_AB N_B^-1 N_AB^T) X = L_A - N_AB N_B^-1 L_B`, stored in parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedNormalSystem {
    pub n_a: DMatrix<f64>,
    pub schur: DMatrix<f64>,
    pub rhs_a: DVector<f64>,
    pub rhs_schur: DVector<f64>,
    pub pins: Vec<usize>,
    /// Tracks left out because their point block was singular.
    pub excluded: Vec<usize>,
}

impl ReducedNormalSystem {
    fn zeros(n: usize, pins: Vec<usize>) -> Self {
        ReducedNormalSystem {
            n_a: DMatrix::zeros(2 * n, 2 * n),
            schur: DMatrix::zeros(2 * n, 2 * n),
            rhs_a: DVector::zeros(2 * n),
            rhs_schur: DVector::zeros(2 * n),
            pins,
            excluded: Vec::new(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.n_a += other.n_a;
        self.schur += other.schur;
        self.rhs_a += other.rhs_a;
        self.rhs_schur += other.rhs_schur;
        self.excluded.extend(other.excluded);
        self
    }

    pub fn reduced_matrix(&self) -> DMatrix<f64> {
        &self.n_a - &self.schur
    }

    pub fn reduced_rhs(&self) -> DVector<f64> {
        &self.rhs_a - &self.rhs_schur
    }
}

/// Point block `N_B(j)`, its right-hand side `L_B(j)` and inverse, or the
/// exclusion error.
pub fn point_block(track: usize, lin: &TrackLinearization) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let mut nb = Matrix3::zeros();
    let mut lb = Vector3::zeros();
    for (_, v, b) in lin {
        nb += b.transpose() * b;
        lb -= b.transpose() * v;
    }
    let condition = symmetric_condition(&nb);
    if !(condition <= POINT_BLOCK_MAX_COND) {
        return Err(Error::SingularPointBlock { track, condition });
    }
    let inv = nb.try_inverse().ok_or(Error::SingularPointBlock { track, condition })?;
    Ok((inv, lb))
}

fn add_track(sys: &mut ReducedNormalSystem, graph: &ObservationGraph, j: usize) -> Result<()> {
    let lin = graph.linearize_track(j)?;
    let gcp = graph.tracks[j].is_gcp();
    let block = if gcp {
        None
    } else {
        match point_block(j, &lin) {
            Ok(b) => Some(b),
            Err(e) => {
                debug!("{e}; track excluded");
                sys.excluded.push(j);
                return Ok(());
            }
        }
    };
    for (i, v, _) in &lin {
        let r = 2 * i;
        sys.n_a[(r, r)] += 1.0;
        sys.n_a[(r + 1, r + 1)] += 1.0;
        sys.rhs_a[r] -= v[0];
        sys.rhs_a[r + 1] -= v[1];
    }
    let Some((nb_inv, lb)) = block else {
        return Ok(());
    };
    let y0 = nb_inv * lb;
    for (i, _, bi) in &lin {
        let bi_n = bi * nb_inv;
        let rs = bi * y0;
        sys.rhs_schur[2 * i] += rs[0];
        sys.rhs_schur[2 * i + 1] += rs[1];
        for (k, _, bk) in &lin {
            let blk = bi_n * bk.transpose();
            for a in 0..2 {
                for c in 0..2 {
                    sys.schur[(2 * i + a, 2 * k + c)] += blk[(a, c)];
                }
            }
        }
    }
    Ok(())
}

/// One pass over the tracks accumulating the reduced system. Runs
/// sequentially, in track order, when the thread pool has one thread.
pub fn accumulate_reduced(graph: &ObservationGraph) -> Result<ReducedNormalSystem> {
    let n = graph.image_count();
    let pins = graph.pins.clone();
    if rayon::current_num_threads() <= 1 {
        let mut sys = ReducedNormalSystem::zeros(n, pins);
        for j in 0..graph.tracks.len() {
            add_track(&mut sys, graph, j)?;
        }
        return Ok(sys);
    }
    let mut sys = (0..graph.tracks.len())
        .into_par_iter()
        .try_fold(|| ReducedNormalSystem::zeros(n, Vec::new()), |mut acc, j| add_track(&mut acc, graph, j).map(|_| acc))
        .try_reduce(|| ReducedNormalSystem::zeros(n, Vec::new()), |a, b| Ok(a.merge(b)))?;
    sys.pins = pins;
    sys.excluded.sort_unstable();
    Ok(sys)
}

/// Cholesky factor of a symmetric matrix, failing on relatively tiny pivots.
pub fn cholesky_checked(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    if n > 0 && !(scale > 0.0) {
        return Err(Error::RankDeficient);
    }
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let d = m[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if !(d > PIVOT_TOLERANCE * scale) {
            return Err(Error::RankDeficient);
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let s = m[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let s = (0..i).map(|k| l[(i, k)] * y[k]).sum::<f64>();
        y[i] = (y[i] - s) / l[(i, i)];
    }
    for i in (0..n).rev() {
        let s = (i + 1..n).map(|k| l[(k, i)] * y[k]).sum::<f64>();
        y[i] = (y[i] - s) / l[(i, i)];
    }
    y
}

/// Keeps rows and columns not listed in `pins`.
pub fn free_indices(n: usize, pins: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !pins.contains(i)).collect()
}

/// Bias corrections from the reduced system; pinned components are zero.
pub fn solve_bias(system: &ReducedNormalSystem) -> Result<Vec<BiasCorrection>> {
    let n2 = system.n_a.nrows();
    let m = system.reduced_matrix();
    let r = system.reduced_rhs();
    let free = free_indices(n2, &system.pins);
    let mf = m.select_rows(&free).select_columns(&free);
    let rf = r.select_rows(&free);
    let l = cholesky_checked(&mf)?;
    let xf = cholesky_solve(&l, &rf);
    let mut x = vec![0.0; n2];
    for (k, &i) in free.iter().enumerate() {
        x[i] = xf[k];
    }
    Ok(x.chunks_exact(2).map(|c| BiasCorrection::new(c[0], c[1])).collect())
}

/// Normalized ground corrections `Y_j = N_B(j)^-1 (L_B(j) - N_AB(j)^T X)`;
/// `None` for GCP and excluded tracks.
pub fn back_substitute(graph: &ObservationGraph, x: &[BiasCorrection]) -> Result<Vec<Option<Vector3<f64>>>> {
    (0..graph.tracks.len())
        .map(|j| {
            if graph.tracks[j].is_gcp() {
                return Ok(None);
            }
            let lin = graph.linearize_track(j)?;
            let Ok((nb_inv, mut lb)) = point_block(j, &lin) else {
                return Ok(None);
            };
            for (i, _, b) in &lin {
                lb -= b.transpose() * Vector2::new(x[*i].d_row, x[*i].d_col);
            }
            Ok(Some(nb_inv * lb))
        })
        .collect()
}

pub fn apply_corrections(graph: &mut ObservationGraph, x: &[BiasCorrection], step: f64) {
    for (img, dx) in graph.images.iter_mut().zip(x) {
        img.bias.d_row += step * dx.d_row;
        img.bias.d_col += step * dx.d_col;
    }
}

/// Re-triangulates every non-GCP track with the current biases, starting
/// from its current ground. Failures keep the previous ground. Returns the
/// number of failures.
pub fn update_points(graph: &mut ObservationGraph) -> usize {
    let updated: Vec<Option<GroundPoint>> = graph
        .tracks
        .par_iter()
        .map(|t| {
            if t.is_gcp() {
                return None;
            }
            let obs = graph.track_observations(t);
            triangulate_from(&obs, t.ground).or_else(|_| triangulate(&obs)).ok()
        })
        .collect();
    let mut failures = 0;
    for (t, g) in graph.tracks.iter_mut().zip(updated) {
        match g {
            Some(g) => t.ground = g,
            None if t.is_gcp() => {}
            None => failures += 1,
        }
    }
    if failures > 0 {
        warn!("{failures} tracks could not be re-triangulated; keeping previous grounds");
    }
    failures
}

// ---------------------------------------------------------------------------
// iteration

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustParams {
    pub tolerance_px: f64,
    pub max_iter: usize,
    /// Halve the step while avg_xy grows by more than 10%.
    pub line_search: bool,
}

impl Default for AdjustParams {
    fn default() -> Self {
        AdjustParams { tolerance_px: DEFAULT_TOLERANCE_PX, max_iter: DEFAULT_MAX_ITER, line_search: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentResult {
    pub biases: Vec<BiasCorrection>,
    pub grounds: Vec<GroundPoint>,
    pub iterations: usize,
    /// avg_xy before the first iteration, then after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
    pub excluded: Vec<usize>,
}

/// Per-iteration view handed to [`adjust_loop_with`] observers, taken after
/// the solve and before the corrections are applied.
pub struct IterationState<'a> {
    pub iteration: usize,
    pub graph: &'a ObservationGraph,
    pub system: &'a ReducedNormalSystem,
    pub corrections: &'a [BiasCorrection],
}

pub fn adjust_loop(graph: &mut ObservationGraph, params: &AdjustParams) -> Result<AdjustmentResult> {
    adjust_loop_with(graph, params, |_| Ok(()))
}

pub fn adjust_loop_with(
    graph: &mut ObservationGraph,
    params: &AdjustParams,
    mut observe: impl FnMut(&IterationState) -> Result<()>,
) -> Result<AdjustmentResult> {
    if !(params.tolerance_px > 0.0) || params.max_iter == 0 {
        return Err(Error::ConfigInvalid("tolerance must be positive and max_iter at least 1".into()));
    }
    if graph.pins.is_empty() && !graph.has_gcps() {
        info!("free network without gauge pins");
    }
    let mut history = vec![report(graph).avg_xy];
    let mut converged = false;
    let mut excluded = Vec::new();
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let system = accumulate_reduced(graph)?;
        let x = solve_bias(&system)?;
        observe(&IterationState { iteration: iterations, graph, system: &system, corrections: &x })?;
        excluded = system.excluded;

        let previous = *history.last().unwrap();
        let saved = params.line_search.then(|| (graph.biases(), graph.grounds()));
        apply_corrections(graph, &x, 1.0);
        update_points(graph);
        let mut avg = report(graph).avg_xy;
        if let Some((biases, grounds)) = saved {
            let mut step = 1.0;
            while avg > 1.1 * previous && step > 1.0 / 64.0 {
                step *= 0.5;
                for (img, b) in graph.images.iter_mut().zip(&biases) {
                    img.bias = *b;
                }
                for (t, g) in graph.tracks.iter_mut().zip(&grounds) {
                    t.ground = *g;
                }
                apply_corrections(graph, &x, step);
                update_points(graph);
                avg = report(graph).avg_xy;
                debug!("line search step {step}: avg_xy {avg:.6}");
            }
        }
        history.push(avg);
        debug!("iteration {iterations}: avg_xy {avg:.6} px");
        if (avg - previous).abs() < params.tolerance_px {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("adjustment stopped after {iterations} iterations without meeting the tolerance");
    }
    Ok(AdjustmentResult { biases: graph.biases(), grounds: graph.grounds(), iterations, history, converged, excluded })
}

// ---------------------------------------------------------------------------
// reporting

/// Reprojection statistics; `x` is the column axis and `y` the row axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionReport {
    pub avg_x: f64,
    pub avg_y: f64,
    pub avg_xy: f64,
    pub max_x: f64,
    pub max_y: f64,
    pub max_xy: f64,
    pub per_image_avg_xy: Vec<f64>,
    pub observations: usize,
}

/// Summarizes residual vectors `(image, d_row, d_col)`.
pub fn summarize(images: usize, residuals: impl IntoIterator<Item = (usize, f64, f64)>) -> ReprojectionReport {
    let mut r = ReprojectionReport {
        avg_x: 0.0,
        avg_y: 0.0,
        avg_xy: 0.0,
        max_x: 0.0,
        max_y: 0.0,
        max_xy: 0.0,
        per_image_avg_xy: vec![0.0; images],
        observations: 0,
    };
    let mut per_count = vec![0usize; images];
    for (i, dr, dc) in residuals {
        let (x, y) = (dc.abs(), dr.abs());
        let xy = dr.hypot(dc);
        r.avg_x += x;
        r.avg_y += y;
        r.avg_xy += xy;
        r.max_x = r.max_x.max(x);
        r.max_y = r.max_y.max(y);
        r.max_xy = r.max_xy.max(xy);
        r.per_image_avg_xy[i] += xy;
        per_count[i] += 1;
        r.observations += 1;
    }
    if r.observations > 0 {
        let n = r.observations as f64;
        r.avg_x /= n;
        r.avg_y /= n;
        r.avg_xy /= n;
    }
    for (v, c) in r.per_image_avg_xy.iter_mut().zip(per_count) {
        if c > 0 {
            *v /= c as f64;
        }
    }
    r
}

/// Reprojection of every track ground into every observing image. Failed
/// projections count as infinitely far.
pub fn report(graph: &ObservationGraph) -> ReprojectionReport {
    let residuals = graph.tracks.iter().flat_map(|t| {
        t.observations.iter().map(move |(i, p)| {
            let img = &graph.images[*i];
            match img.rpc.residual(&img.bias, &t.ground, p) {
                Ok(v) => (*i, v[0], v[1]),
                Err(_) => (*i, f64::INFINITY, f64::INFINITY),
            }
        })
    });
    summarize(graph.image_count(), residuals)
}

/// Before/after table with three decimals.
pub fn report_table(before: &ReprojectionReport, after: &ReprojectionReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}",
        "", "avg_x", "avg_y", "avg_xy", "max_x", "max_y", "max_xy"
    );
    for (name, r) in [("Before", before), ("After", after)] {
        let _ = writeln!(
            out,
            "{:<8}{:>9.3}{:>9.3}{:>9.3}{:>9.3}{:>9.3}{:>9.3}",
            name, r.avg_x, r.avg_y, r.avg_xy, r.max_x, r.max_y, r.max_xy
        );
    }
    let _ = writeln!(out, "per-image avg_xy (before -> after)");
    for (i, (b, a)) in before.per_image_avg_xy.iter().zip(&after.per_image_avg_xy).enumerate() {
        let _ = writeln!(out, "  image {i}: {b:.3} -> {a:.3}");
    }
    out
}

/// Metrics rounded to three decimals, as printed in the table.
pub fn rounded(r: &ReprojectionReport) -> ReprojectionReport {
    let q = |v: f64| (v * 1000.0).round() / 1000.0;
    ReprojectionReport {
        avg_x: q(r.avg_x),
        avg_y: q(r.avg_y),
        avg_xy: q(r.avg_xy),
        max_x: q(r.max_x),
        max_y: q(r.max_y),
        max_xy: q(r.max_xy),
        per_image_avg_xy: r.per_image_avg_xy.iter().map(|v| q(*v)).collect(),
        observations: r.observations,
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    before: &'a ReprojectionReport,
    after: &'a ReprojectionReport,
    iterations: usize,
    converged: bool,
    history: &'a [f64],
    biases: Vec<[f64; 2]>,
}

/// One JSON object with both reports and the adjustment outcome.
pub fn report_json(before: &ReprojectionReport, after: &ReprojectionReport, result: &AdjustmentResult) -> String {
    let json = JsonReport {
        before: &rounded(before),
        after: &rounded(after),
        iterations: result.iterations,
        converged: result.converged,
        history: &result.history,
        biases: result.biases.iter().map(|b| [b.d_row, b.d_col]).collect(),
    };
    serde_json::to_string(&json).expect("report serialization")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_scene, SceneConfig};

    fn scene_graph(
        n: usize,
        m: usize,
        bias: f64,
        noise: f64,
        seed: u64,
    ) -> (crate::synth::SyntheticScene, ObservationGraph) {
        let cfg = SceneConfig {
            images: n,
            points: m,
            bias_range_px: bias,
            noise_sigma_px: noise,
            seed,
            ..SceneConfig::default()
        };
        let scene = gen_scene(&cfg).unwrap();
        let graph = assemble(scene.rpcs(), scene.tracks(), &BTreeMap::new()).unwrap();
        (scene, graph)
    }

    #[test]
    fn report_arithmetic() {
        let mut res = vec![(0, 3.0, 4.0)];
        res.extend((0..9).map(|_| (0, 0.0, 0.0)));
        let r = summarize(1, res);
        assert_eq!(r.avg_xy, 0.5);
        assert_eq!(r.max_xy, 5.0);
        assert_eq!(r.max_x, 4.0);
        assert_eq!(r.max_y, 3.0);
        assert!((r.avg_x - 0.4).abs() < 1e-15 && (r.avg_y - 0.3).abs() < 1e-15);
        let zero = summarize(2, (0..4).map(|k| (k % 2, 0.0, 0.0)));
        assert_eq!((zero.avg_xy, zero.max_xy), (0.0, 0.0));
        let table = report_table(&r, &zero);
        assert!(table.contains("0.500") && table.contains("5.000"));
    }

    #[test]
    fn schur_sparsity_pattern() {
        let (_, mut graph) = scene_graph(3, 1, 0.0, 0.0, 5);
        graph.tracks[0].observations.retain(|o| o.0 != 0);
        let sys = accumulate_reduced(&graph).unwrap();
        for i in 0..6 {
            for k in 0..6 {
                let inside = i >= 2 && k >= 2;
                assert_eq!(sys.schur[(i, k)] != 0.0, inside, "({i},{k})");
            }
        }
    }

    #[test]
    fn consistent_graph_is_a_fixed_point() {
        let (_, mut graph) = scene_graph(4, 40, 0.0, 0.0, 11);
        let r = adjust_loop(&mut graph, &AdjustParams::default()).unwrap();
        assert!(r.converged && r.iterations <= 2, "{r:?}");
        assert!(report(&graph).avg_xy < 1e-6);
        assert!(r.biases.iter().all(|b| b.d_row.abs() < 1e-6 && b.d_col.abs() < 1e-6));
    }

    #[test]
    fn single_image_gauge_gives_zero() {
        let (scene, _) = scene_graph(2, 5, 0.0, 0.0, 3);
        let rpc = scene.rpcs()[0].clone();
        let g = GroundPoint::new(rpc.lat_off, rpc.lon_off, rpc.hei_off);
        let mut graph = ObservationGraph {
            images: vec![ImageEntry { rpc: rpc.clone(), bias: BiasCorrection::ZERO }],
            tracks: vec![],
            track_ids: vec![],
            ground_scale: rpc.ground_scales(),
            pins: vec![],
        };
        let mut t = Track::new(vec![(0, rpc.project(&BiasCorrection::ZERO, &g).unwrap())]);
        t.ground = g;
        graph.tracks.push(t);
        graph.pins = datum_pins(&graph).unwrap();
        assert_eq!(graph.pins, vec![0, 1]);
        let x = solve_bias(&accumulate_reduced(&graph).unwrap()).unwrap();
        assert_eq!(x, vec![BiasCorrection::ZERO]);
    }

    #[test]
    fn free_network_without_gauge_is_rank_deficient() {
        let (_, mut graph) = scene_graph(3, 20, 5.0, 0.1, 8);
        graph.pins.clear();
        assert!(matches!(solve_bias(&accumulate_reduced(&graph).unwrap()), Err(Error::RankDeficient)));
    }

    #[test]
    fn gcp_grounds_are_untouched() {
        let cfg = SceneConfig {
            images: 3,
            points: 30,
            bias_range_px: 10.0,
            noise_sigma_px: 0.1,
            seed: 21,
            ..SceneConfig::default()
        };
        let scene = gen_scene(&cfg).unwrap();
        let gcps: BTreeMap<usize, GroundPoint> = (0..3).map(|j| (j, scene.points[j])).collect();
        let mut graph = assemble(scene.rpcs(), scene.tracks(), &gcps).unwrap();
        assert!(graph.pins.is_empty());
        let before: Vec<_> = graph.tracks[..3].iter().map(|t| t.ground).collect();
        adjust_loop(&mut graph, &AdjustParams::default()).unwrap();
        for (t, g) in graph.tracks[..3].iter().zip(before) {
            assert_eq!(t.ground.lat.to_bits(), g.lat.to_bits());
            assert_eq!(t.ground.lon.to_bits(), g.lon.to_bits());
            assert_eq!(t.ground.hei.to_bits(), g.hei.to_bits());
        }
    }

    #[test]
    fn bad_track_is_dropped() {
        // identical viewing directions give parallel rays
        let cfg = SceneConfig {
            images: 3,
            points: 3,
            views: Some(vec![(30.0, 70.0), (30.0, 70.0), (150.0, 65.0)]),
            ..SceneConfig::default()
        };
        let scene = gen_scene(&cfg).unwrap();
        let mut tracks = scene.tracks();
        tracks[1].observations.retain(|o| o.0 != 2);
        let graph = assemble(scene.rpcs(), tracks, &BTreeMap::new()).unwrap();
        assert_eq!(graph.track_ids, vec![0, 2]);
    }

    #[test]
    fn cholesky_solves_spd() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = cholesky_solve(&cholesky_checked(&m).unwrap(), &b);
        assert!((&m * x - b).amax() < 1e-12);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(cholesky_checked(&singular), Err(Error::RankDeficient)));
    }
}
