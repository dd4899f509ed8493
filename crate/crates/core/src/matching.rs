//! Tie-point matching between overlapping level-2 products.
//!
//! Corners are detected with a segment test on a radius-3 circle and matched
//! along quasi-epipolar curves: the ray of a left pixel is intersected with a
//! stack of height planes and the intersections are projected into the right
//! image. Right-image corners within a buffer of that curve are compared with
//! a multi-block census descriptor (nine census strings, summed Hamming
//! distance). A ratio test and a triangulation-based reprojection filter
//! remove mismatches.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
pub use crate::geo::GroundBBox;
use crate::raster::Raster;
use crate::rectify::Level2Product;
use crate::rpc::{triangulate, BiasCorrection, ImagePoint};

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.6;
pub const DEFAULT_BUFFER_PX: f64 = 30.0;
pub const DEFAULT_RATIO: f64 = 0.6;
pub const DEFAULT_REPROJ_PX: f64 = 2.0;
pub const DEFAULT_FAST_THRESHOLD: u16 = 20;
pub const DEFAULT_NMS_RADIUS: f64 = 5.0;
pub const MAX_EPIPOLAR_SAMPLES: usize = 64;

/// Bresenham circle of radius 3, clockwise from the top, as `(drow, dcol)`.
pub const CIRCLE: [(i32, i32); 16] = [
    (-3, 0),
    (-3, 1),
    (-2, 2),
    (-1, 3),
    (0, 3),
    (1, 3),
    (2, 2),
    (3, 1),
    (3, 0),
    (3, -1),
    (2, -2),
    (1, -3),
    (0, -3),
    (-1, -3),
    (-2, -2),
    (-3, -1),
];
/// Minimum contiguous arc length of the segment test.
pub const ARC_LENGTH: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub position: ImagePoint,
    /// Largest threshold at which the segment test still passes, plus one.
    pub score: u32,
}

/// Identifies an ordered image pair; `left < right` by product index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairId {
    pub left: usize,
    pub right: usize,
}

impl std::fmt::Display for PairId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.left, self.right)
    }
}

impl std::str::FromStr for PairId {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (a, b) = s.split_once('-').ok_or_else(|| format!("invalid pair id {s:?}"))?;
        let left = a.parse().map_err(|_| format!("invalid pair id {s:?}"))?;
        let right = b.parse().map_err(|_| format!("invalid pair id {s:?}"))?;
        Ok(PairId { left, right })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub left: Feature,
    pub right: Feature,
    /// Summed Hamming distance in bits.
    pub score: u32,
    pub pair: PairId,
}

// ---------------------------------------------------------------------------
// pair selection

pub fn footprint(product: &Level2Product) -> GroundBBox {
    product.footprint
}

/// Intersection area over the smaller box area; zero-area boxes never overlap.
pub fn overlap_ratio(a: &GroundBBox, b: &GroundBBox) -> f64 {
    let smaller = a.area().min(b.area());
    if !(smaller > 0.0) {
        return 0.0;
    }
    a.intersection(b).map_or(0.0, |i| i.area() / smaller)
}

pub fn select_pairs_from_boxes(boxes: &[GroundBBox], threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if overlap_ratio(&boxes[i], &boxes[j]) >= threshold {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn select_pairs(products: &[Level2Product], threshold: f64) -> Vec<(usize, usize)> {
    let boxes: Vec<_> = products.iter().map(footprint).collect();
    select_pairs_from_boxes(&boxes, threshold)
}

// ---------------------------------------------------------------------------
// corner detection

/// Segment-test score at `(row, col)`: the maximum over 9-pixel arcs of the
/// smallest intensity difference to the center, for both polarities. The
/// test passes at threshold `t` iff `score > t`. `None` when the circle
/// leaves the raster or touches nodata.
pub fn segment_score(raster: &Raster, row: usize, col: usize) -> Option<u32> {
    if row < 3 || col < 3 || row + 3 >= raster.height || col + 3 >= raster.width {
        return None;
    }
    let center = raster.get(row, col);
    if center == raster.nodata {
        return None;
    }
    let mut ring = [0i32; 16];
    for (k, (dr, dc)) in CIRCLE.iter().enumerate() {
        let v = raster.get((row as i32 + dr) as usize, (col as i32 + dc) as usize);
        if v == raster.nodata {
            return None;
        }
        ring[k] = i32::from(v) - i32::from(center);
    }
    let mut best = 0i32;
    for sign in [1i32, -1] {
        for start in 0..16 {
            let arc_min = (0..ARC_LENGTH).map(|k| sign * ring[(start + k) % 16]).min().unwrap();
            best = best.max(arc_min);
        }
    }
    Some(best as u32)
}

/// Segment-test corners with non-maximum suppression.
///
/// A corner survives when no other corner within `nms_radius` ranks higher
/// (higher score, then smaller row, then smaller column).
pub fn detect_corners(raster: &Raster, threshold: u16, nms_radius: f64) -> Vec<Feature> {
    let threshold = u32::from(threshold);
    let candidates: Vec<Feature> = (0..raster.height)
        .into_par_iter()
        .flat_map_iter(|row| {
            (0..raster.width).filter_map(move |col| {
                let s = segment_score(raster, row, col)?;
                (s > threshold).then_some(Feature { position: ImagePoint::new(row as f64, col as f64), score: s })
            })
        })
        .collect();
    non_maximum_suppression(candidates, nms_radius)
}

fn outranks(a: &Feature, b: &Feature) -> bool {
    (a.score, -a.position.row, -a.position.col) > (b.score, -b.position.row, -b.position.col)
}

pub fn non_maximum_suppression(candidates: Vec<Feature>, radius: f64) -> Vec<Feature> {
    if radius <= 0.0 {
        return candidates;
    }
    let cell = radius.max(1.0);
    let key = |p: &ImagePoint| ((p.row / cell).floor() as i64, (p.col / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, f) in candidates.iter().enumerate() {
        grid.entry(key(&f.position)).or_default().push(i);
    }
    let r2 = radius * radius;
    candidates
        .iter()
        .filter(|f| {
            let (kr, kc) = key(&f.position);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    if let Some(ids) = grid.get(&(kr + dr, kc + dc)) {
                        for &j in ids {
                            let g = &candidates[j];
                            let d2 =
                                (g.position.row - f.position.row).powi(2) + (g.position.col - f.position.col).powi(2);
                            if d2 <= r2 && outranks(g, f) {
                                return false;
                            }
                        }
                    }
                }
            }
            true
        })
        .copied()
        .collect()
}

// ---------------------------------------------------------------------------
// epipolar geometry

/// Quasi-epipolar curve of left pixel `p` in the right product, sampled at
/// heights `min_h, min_h + dh, ..., max_h`. Vertices outside the right
/// raster are dropped.
pub fn epipolar_curve(
    p: &ImagePoint,
    left: &Level2Product,
    right: &Level2Product,
    min_h: f64,
    max_h: f64,
    dh: f64,
) -> Result<Vec<ImagePoint>> {
    if !(min_h < max_h) || !(dh > 0.0) {
        return Err(Error::ConfigInvalid(format!("epipolar height range [{min_h}, {max_h}] with step {dh}")));
    }
    let steps = ((max_h - min_h) / dh + 1e-9).floor() as usize;
    let mut heights: Vec<f64> = (0..=steps).map(|k| min_h + k as f64 * dh).collect();
    if max_h - heights[heights.len() - 1] > 1e-9 * dh.max(1.0) {
        heights.push(max_h);
    }
    let (w, h) = (right.raster.width as f64, right.raster.height as f64);
    let mut out = Vec::with_capacity(heights.len());
    for z in heights {
        let g = left.rpc.inverse_project(&BiasCorrection::ZERO, p, z)?;
        let q = right.rpc.project(&BiasCorrection::ZERO, &g)?;
        if q.row >= -0.5 && q.col >= -0.5 && q.row <= h - 0.5 && q.col <= w - 0.5 {
            out.push(q);
        }
    }
    Ok(out)
}

/// Curve over the left model's height range with vertices at most about one
/// pixel apart, capped at [`MAX_EPIPOLAR_SAMPLES`].
pub fn default_epipolar_curve(p: &ImagePoint, left: &Level2Product, right: &Level2Product) -> Result<Vec<ImagePoint>> {
    let (lo, hi) = epipolar_height_range(left);
    let a = left.rpc.inverse_project(&BiasCorrection::ZERO, p, lo)?;
    let b = left.rpc.inverse_project(&BiasCorrection::ZERO, p, hi)?;
    let qa = right.rpc.project(&BiasCorrection::ZERO, &a)?;
    let qb = right.rpc.project(&BiasCorrection::ZERO, &b)?;
    let n = ((qa.distance(&qb)).ceil() as usize + 1).clamp(2, MAX_EPIPOLAR_SAMPLES);
    epipolar_curve(p, left, right, lo, hi, (hi - lo) / (n - 1) as f64)
}

pub fn epipolar_height_range(product: &Level2Product) -> (f64, f64) {
    (product.rpc.hei_off - product.rpc.hei_scale, product.rpc.hei_off + product.rpc.hei_scale)
}

/// Closest point on a polyline and its distance.
pub fn closest_on_polyline(p: &ImagePoint, line: &[ImagePoint]) -> Option<(ImagePoint, f64)> {
    match line {
        [] => None,
        [only] => Some((*only, p.distance(only))),
        _ => line
            .windows(2)
            .map(|s| {
                let (a, b) = (s[0], s[1]);
                let (vr, vc) = (b.row - a.row, b.col - a.col);
                let len2 = vr * vr + vc * vc;
                let t = if len2 > 0.0 {
                    (((p.row - a.row) * vr + (p.col - a.col) * vc) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let q = ImagePoint::new(a.row + t * vr, a.col + t * vc);
                (q, p.distance(&q))
            })
            .min_by(|x, y| x.1.total_cmp(&y.1)),
    }
}

// ---------------------------------------------------------------------------
// multi-block census

/// Window and block geometry of the descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CensusConfig {
    /// Side of one block; must be odd so the block has a center pixel.
    pub block: usize,
    /// Gaussian pre-filter (binomial 5x5, sigma = 1).
    pub prefilter: bool,
}

impl Default for CensusConfig {
    fn default() -> Self {
        CensusConfig { block: 9, prefilter: true }
    }
}

impl CensusConfig {
    /// Side of the full matching window (3 x 3 blocks).
    pub fn window(&self) -> usize {
        3 * self.block
    }

    pub fn bits_per_block(&self) -> usize {
        self.block * self.block - 1
    }

    pub fn words_per_block(&self) -> usize {
        self.bits_per_block().div_ceil(64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MbCensusDescriptor {
    config: CensusConfig,
    /// `9 * words_per_block` words; bits past `bits_per_block` in each block are zero.
    words: Vec<u64>,
}

const BINOMIAL5: [u32; 5] = [1, 4, 6, 4, 1];

impl MbCensusDescriptor {
    pub fn config(&self) -> CensusConfig {
        self.config
    }

    pub fn bit_count(&self) -> usize {
        9 * self.config.bits_per_block()
    }

    pub fn block_bits(&self, block: usize) -> impl Iterator<Item = bool> + '_ {
        let wpb = self.config.words_per_block();
        let words = &self.words[block * wpb..(block + 1) * wpb];
        (0..self.config.bits_per_block()).map(move |k| words[k / 64] >> (k % 64) & 1 == 1)
    }

    /// Bitwise complement within the valid bits.
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        let wpb = self.config.words_per_block();
        let bits = self.config.bits_per_block();
        for (i, w) in out.words.iter_mut().enumerate() {
            let k = i % wpb;
            let valid = (bits - 64 * k).min(64);
            let mask = if valid == 64 { u64::MAX } else { (1u64 << valid) - 1 };
            *w = !*w & mask;
        }
        out
    }
}

/// Multi-block census descriptor of the window centered at `p`.
///
/// Each block's string compares every block pixel (raster order, center
/// skipped) with the block's center pixel: bit = 1 iff pixel < center.
pub fn mbcensus_descriptor(raster: &Raster, p: &ImagePoint, config: &CensusConfig) -> Result<MbCensusDescriptor> {
    let win = config.window();
    let half = (win / 2) as i64;
    let (cr, cc) = (p.row.round() as i64, p.col.round() as i64);
    let (r0, c0) = (cr - half, cc - half);
    let oob = Error::WindowOutOfBounds { row: p.row, col: p.col };
    if r0 < 0 || c0 < 0 || r0 + win as i64 > raster.height as i64 || c0 + win as i64 > raster.width as i64 {
        return Err(oob);
    }
    let (r0, c0) = (r0 as usize, c0 as usize);
    for r in r0..r0 + win {
        if (c0..c0 + win).any(|c| !raster.is_valid(r, c)) {
            return Err(oob);
        }
    }
    let values = window_values(raster, r0, c0, win, config.prefilter);

    let b = config.block;
    let wpb = config.words_per_block();
    let mut words = vec![0u64; 9 * wpb];
    for br in 0..3 {
        for bc in 0..3 {
            let block = br * 3 + bc;
            let center = values[(br * b + b / 2) * win + bc * b + b / 2];
            let mut k = 0;
            for r in 0..b {
                for c in 0..b {
                    if r == b / 2 && c == b / 2 {
                        continue;
                    }
                    if values[(br * b + r) * win + bc * b + c] < center {
                        words[block * wpb + k / 64] |= 1 << (k % 64);
                    }
                    k += 1;
                }
            }
        }
    }
    Ok(MbCensusDescriptor { config: *config, words })
}

/// Window intensities, optionally smoothed with an integer binomial kernel.
/// Integer arithmetic keeps comparisons exact under positive affine
/// intensity maps.
fn window_values(raster: &Raster, r0: usize, c0: usize, win: usize, prefilter: bool) -> Vec<u64> {
    if !prefilter {
        let mut out = Vec::with_capacity(win * win);
        for r in r0..r0 + win {
            out.extend((c0..c0 + win).map(|c| u64::from(raster.get(r, c))));
        }
        return out;
    }
    // clamp-to-window-edge for taps outside the window
    let at = |r: i64, c: i64| -> u64 {
        let r = r.clamp(0, win as i64 - 1) as usize + r0;
        let c = c.clamp(0, win as i64 - 1) as usize + c0;
        u64::from(raster.get(r, c))
    };
    let mut horiz = vec![0u64; win * win];
    for r in 0..win {
        for c in 0..win {
            horiz[r * win + c] = (0..5).map(|k| u64::from(BINOMIAL5[k]) * at(r as i64, c as i64 + k as i64 - 2)).sum();
        }
    }
    let mut out = vec![0u64; win * win];
    for r in 0..win {
        for c in 0..win {
            out[r * win + c] = (0..5)
                .map(|k| {
                    let rr = (r as i64 + k as i64 - 2).clamp(0, win as i64 - 1) as usize;
                    u64::from(BINOMIAL5[k]) * horiz[rr * win + c]
                })
                .sum();
        }
    }
    out
}

/// Summed Hamming distance over the nine blocks.
pub fn match_score(a: &MbCensusDescriptor, b: &MbCensusDescriptor) -> Result<u32> {
    if a.config != b.config || a.words.len() != b.words.len() {
        return Err(Error::ConfigMismatch);
    }
    Ok(a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum())
}

// ---------------------------------------------------------------------------
// pairwise matching

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    pub buffer_px: f64,
    pub ratio: f64,
    pub reproj_px: f64,
    pub fast_threshold: u16,
    pub nms_radius: f64,
    pub census: CensusConfig,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            buffer_px: DEFAULT_BUFFER_PX,
            ratio: DEFAULT_RATIO,
            reproj_px: DEFAULT_REPROJ_PX,
            fast_threshold: DEFAULT_FAST_THRESHOLD,
            nms_radius: DEFAULT_NMS_RADIUS,
            census: CensusConfig::default(),
        }
    }
}

/// Corners of one product and their descriptors (`None` near borders).
#[derive(Debug, Clone)]
pub struct ProductFeatures {
    pub features: Vec<Feature>,
    pub descriptors: Vec<Option<MbCensusDescriptor>>,
}

pub fn prepare_features(product: &Level2Product, params: &MatchParams) -> ProductFeatures {
    let features = detect_corners(&product.raster, params.fast_threshold, params.nms_radius);
    let descriptors =
        features.par_iter().map(|f| mbcensus_descriptor(&product.raster, &f.position, &params.census).ok()).collect();
    ProductFeatures { features, descriptors }
}

/// Result of matching one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatches {
    pub pair: PairId,
    /// Median offset of the tentative matches from their epipolar curves,
    /// expressed as the bias that compensates the right image.
    pub right_bias: BiasCorrection,
    pub correspondences: Vec<Correspondence>,
}

struct Tentative {
    left: usize,
    right: usize,
    score: u32,
    curve_distance: f64,
    /// right position minus its closest point on the curve
    offset: (f64, f64),
}

struct FeatureGrid {
    cell: f64,
    rows: usize,
    cols: usize,
    cells: Vec<Vec<usize>>,
}

impl FeatureGrid {
    fn new(features: &[Feature], width: usize, height: usize, cell: f64) -> Self {
        let rows = (height as f64 / cell).ceil().max(1.0) as usize;
        let cols = (width as f64 / cell).ceil().max(1.0) as usize;
        let mut cells = vec![Vec::new(); rows * cols];
        for (i, f) in features.iter().enumerate() {
            let r = ((f.position.row / cell) as usize).min(rows - 1);
            let c = ((f.position.col / cell) as usize).min(cols - 1);
            cells[r * cols + c].push(i);
        }
        FeatureGrid { cell, rows, cols, cells }
    }

    fn within(&self, min_r: f64, max_r: f64, min_c: f64, max_c: f64) -> impl Iterator<Item = usize> + '_ {
        let clampi = |v: f64, n: usize| ((v / self.cell).floor().max(0.0) as usize).min(n - 1);
        let (r0, r1) = (clampi(min_r, self.rows), clampi(max_r, self.rows));
        let (c0, c1) = (clampi(min_c, self.cols), clampi(max_c, self.cols));
        (r0..=r1).flat_map(move |r| (c0..=c1).flat_map(move |c| self.cells[r * self.cols + c].iter().copied()))
    }
}

pub fn match_pair(left: &Level2Product, right: &Level2Product, pair: PairId, params: &MatchParams) -> PairMatches {
    let lf = prepare_features(left, params);
    let rf = prepare_features(right, params);
    match_prepared(left, &lf, right, &rf, pair, params)
}

/// Matches precomputed features of two products.
pub fn match_prepared(
    left: &Level2Product,
    lf: &ProductFeatures,
    right: &Level2Product,
    rf: &ProductFeatures,
    pair: PairId,
    params: &MatchParams,
) -> PairMatches {
    let grid = FeatureGrid::new(&rf.features, right.raster.width, right.raster.height, params.buffer_px.max(8.0));
    let tentative: Vec<Tentative> = (0..lf.features.len())
        .into_par_iter()
        .filter_map(|i| {
            let ld = lf.descriptors[i].as_ref()?;
            let curve = default_epipolar_curve(&lf.features[i].position, left, right).ok()?;
            best_candidate(i, ld, &curve, rf, &grid, params)
        })
        .collect();
    let tentative = unique_right(tentative);
    if tentative.is_empty() {
        return PairMatches { pair, right_bias: BiasCorrection::ZERO, correspondences: Vec::new() };
    }

    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let m_row = median(tentative.iter().map(|t| t.offset.0).collect());
    let m_col = median(tentative.iter().map(|t| t.offset.1).collect());
    // a right point displaced by +offset is explained by bias = -offset
    let right_bias = BiasCorrection::new(-m_row, -m_col);

    let correspondences = tentative
        .into_iter()
        .filter_map(|t| {
            let c = Correspondence { left: lf.features[t.left], right: rf.features[t.right], score: t.score, pair };
            let err = reprojection_error(left, right, &right_bias, &c.left.position, &c.right.position)?;
            (err <= params.reproj_px).then_some(c)
        })
        .collect();
    PairMatches { pair, right_bias, correspondences }
}

fn best_candidate(
    i: usize,
    ld: &MbCensusDescriptor,
    curve: &[ImagePoint],
    rf: &ProductFeatures,
    grid: &FeatureGrid,
    params: &MatchParams,
) -> Option<Tentative> {
    if curve.is_empty() {
        return None;
    }
    let b = params.buffer_px;
    let (mut min_r, mut max_r, mut min_c, mut max_c) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for q in curve {
        min_r = min_r.min(q.row);
        max_r = max_r.max(q.row);
        min_c = min_c.min(q.col);
        max_c = max_c.max(q.col);
    }
    // (score, distance, index, offset)
    let mut best: Option<(u32, f64, usize, (f64, f64))> = None;
    let mut second: Option<u32> = None;
    let mut candidates = 0usize;
    for j in grid.within(min_r - b, max_r + b, min_c - b, max_c + b) {
        let Some(rd) = rf.descriptors[j].as_ref() else { continue };
        let pos = rf.features[j].position;
        let Some((q, dist)) = closest_on_polyline(&pos, curve) else { continue };
        if dist > b {
            continue;
        }
        let Ok(score) = match_score(ld, rd) else { continue };
        candidates += 1;
        let offset = (pos.row - q.row, pos.col - q.col);
        match best {
            Some((bs, bd, bj, _)) if (score, dist, j) >= (bs, bd, bj) => {
                second = Some(second.map_or(score, |s| s.min(score)));
            }
            _ => {
                if let Some((bs, ..)) = best {
                    second = Some(second.map_or(bs, |s| s.min(bs)));
                }
                best = Some((score, dist, j, offset));
            }
        }
    }
    let (score, dist, j, offset) = best?;
    if candidates > 1 {
        let second = second? as f64;
        if !((score as f64) < params.ratio * second) {
            return None;
        }
    }
    Some(Tentative { left: i, right: j, score, curve_distance: dist, offset })
}

/// Keeps at most one left feature per right feature: the best-scoring one,
/// then the one closest to its curve.
fn unique_right(mut tentative: Vec<Tentative>) -> Vec<Tentative> {
    let mut keep: HashMap<usize, usize> = HashMap::new();
    for (k, t) in tentative.iter().enumerate() {
        keep.entry(t.right)
            .and_modify(|cur| {
                let c = &tentative[*cur];
                if (t.score, t.curve_distance, t.left) < (c.score, c.curve_distance, c.left) {
                    *cur = k;
                }
            })
            .or_insert(k);
    }
    let mut idx = 0;
    tentative.retain(|t| {
        let keep_it = keep.get(&t.right) == Some(&idx);
        idx += 1;
        keep_it
    });
    tentative
}

/// Triangulates a left/right observation pair with the right image
/// compensated by `right_bias` and returns the larger of the two image
/// reprojection distances.
pub fn reprojection_error(
    left: &Level2Product,
    right: &Level2Product,
    right_bias: &BiasCorrection,
    lp: &ImagePoint,
    rp: &ImagePoint,
) -> Option<f64> {
    let obs = [(&left.rpc, BiasCorrection::ZERO, *lp), (&right.rpc, *right_bias, *rp)];
    let g = triangulate(&obs).ok()?;
    let l = left.rpc.project(&BiasCorrection::ZERO, &g).ok()?;
    let r = right.rpc.project(right_bias, &g).ok()?;
    Some(lp.distance(&l).max(rp.distance(&r)))
}

// ---------------------------------------------------------------------------
// correspondence files

pub fn write_correspondences(path: impl AsRef<Path>, header: &[(&str, String)], matches: &[PairMatches]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("#");
    for (k, v) in header {
        let _ = write!(out, " {k}={v}");
    }
    out.push('\n');
    out.push_str("# pair_id left_row left_col right_row right_col score\n");
    for m in matches {
        let _ = writeln!(out, "# pair {} right_bias {} {}", m.pair, m.right_bias.d_row, m.right_bias.d_col);
        for c in &m.correspondences {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                c.pair, c.left.position.row, c.left.position.col, c.right.position.row, c.right.position.col, c.score
            );
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_correspondences(path: impl AsRef<Path>) -> Result<Vec<Correspondence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::parse(path, format!("line {}: {m}", n + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let pair: PairId = f[0].parse().map_err(|e: String| bad(&e))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("invalid number {s:?}")));
        let score = f[5].parse::<u32>().map_err(|_| bad("invalid score"))?;
        out.push(Correspondence {
            left: Feature { position: ImagePoint::new(num(f[1])?, num(f[2])?), score: 0 },
            right: Feature { position: ImagePoint::new(num(f[3])?, num(f[4])?), score: 0 },
            score,
            pair,
        });
    }
    Ok(out)
}
