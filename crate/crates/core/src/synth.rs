//! Synthetic scenes and brute-force oracles.
//!
//! Cameras are parallel projections with their own azimuth, elevation and
//! heading, converted to RPCs with [`fit_rpc`]. Ground points lie on a
//! smooth terrain; optional rasters render a low-contrast blob texture with
//! small bright dots planted as corners.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::adjust::{free_indices, point_block, ObservationGraph};
use crate::error::{Error, Result};
use crate::geo::meters_per_degree;
use crate::kv::fmt_f64;
use crate::raster::Raster;
use crate::rectify::fit_rpc;
use crate::rpc::{BiasCorrection, GroundPoint, ImagePoint, Jacobians, RpcModel};
use crate::tracks::{write_tracks, Track};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub images: usize,
    pub points: usize,
    /// Biases are drawn uniformly from `[-bias_range_px, bias_range_px]`.
    pub bias_range_px: f64,
    pub noise_sigma_px: f64,
    pub seed: u64,
    pub size_px: usize,
    pub gsd: f64,
    /// Peak terrain deviation from the center height, meters.
    pub relief_m: f64,
    pub center: GroundPoint,
    pub render: bool,
    pub planted_corners: usize,
    /// Fixed `(azimuth, elevation)` in degrees per image instead of random views.
    pub views: Option<Vec<(f64, f64)>>,
    /// Fixed biases instead of random ones.
    pub biases: Option<Vec<BiasCorrection>>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            images: 5,
            points: 100,
            bias_range_px: 0.0,
            noise_sigma_px: 0.0,
            seed: 1,
            size_px: 400,
            gsd: 0.5,
            relief_m: 15.0,
            center: GroundPoint::new(32.7, -117.15, 50.0),
            render: false,
            planted_corners: 0,
            views: None,
            biases: None,
        }
    }
}

/// Parallel-projection camera in a local east/north/up frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallelCamera {
    pub azimuth: f64,
    pub elevation: f64,
    pub heading: f64,
    pub gsd: f64,
    pub origin: GroundPoint,
    pub row0: f64,
    pub col0: f64,
}

impl ParallelCamera {
    /// Local metric coordinates `(east, north, up)` relative to the origin.
    pub fn to_local(&self, g: &GroundPoint) -> (f64, f64, f64) {
        let (mlat, _) = meters_per_degree(self.origin.lat);
        let (_, mlon) = meters_per_degree(g.lat);
        ((g.lon - self.origin.lon) * mlon, (g.lat - self.origin.lat) * mlat, g.hei - self.origin.hei)
    }

    pub fn from_local(&self, e: f64, n: f64, u: f64) -> GroundPoint {
        let (mlat, _) = meters_per_degree(self.origin.lat);
        let lat = self.origin.lat + n / mlat;
        let (_, mlon) = meters_per_degree(lat);
        GroundPoint::new(lat, self.origin.lon + e / mlon, self.origin.hei + u)
    }

    fn lean(&self) -> (f64, f64) {
        let k = 1.0 / self.elevation.to_radians().tan();
        let az = self.azimuth.to_radians();
        (k * az.sin(), k * az.cos())
    }

    pub fn project_local(&self, e: f64, n: f64, u: f64) -> ImagePoint {
        let (le, ln) = self.lean();
        let (e, n) = (e - u * le, n - u * ln);
        let (s, c) = self.heading.to_radians().sin_cos();
        let x = c * e + s * n;
        let y = -s * e + c * n;
        ImagePoint::new(self.row0 - y / self.gsd, self.col0 + x / self.gsd)
    }

    pub fn project(&self, g: &GroundPoint) -> ImagePoint {
        let (e, n, u) = self.to_local(g);
        self.project_local(e, n, u)
    }

    /// Local `(east, north)` seen at pixel `p` at local height `u`.
    pub fn back_project(&self, p: &ImagePoint, u: f64) -> (f64, f64) {
        let x = (p.col - self.col0) * self.gsd;
        let y = (self.row0 - p.row) * self.gsd;
        let (s, c) = self.heading.to_radians().sin_cos();
        let (e, n) = (c * x - s * y, s * x + c * y);
        let (le, ln) = self.lean();
        (e + u * le, n + u * ln)
    }
}

/// Smooth terrain as a sum of a few sinusoids, local meters in and out.
#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    waves: Vec<(f64, f64, f64, f64)>,
    relief: f64,
}

impl Terrain {
    pub fn new(relief: f64, rng: &mut impl Rng) -> Self {
        let waves = (0..4)
            .map(|_| {
                let wavelength = rng.random_range(80.0..200.0);
                let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                (k * dir.cos(), k * dir.sin(), phase, rng.random_range(0.5..1.0))
            })
            .collect();
        Terrain { waves, relief }
    }

    pub fn height(&self, e: f64, n: f64) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w.3).sum();
        self.relief * self.waves.iter().map(|(ke, kn, ph, a)| a * (ke * e + kn * n + ph).sin()).sum::<f64>() / total
    }
}

/// Ground texture: low-contrast blobs plus bright planted dots, in local meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    blobs: SpatialGrid<(f64, f64, f64, f64)>,
    dots: SpatialGrid<(f64, f64)>,
    dot_sigma: f64,
}

pub const BACKGROUND_LEVEL: f64 = 50.0;
pub const BLOB_AMPLITUDE: f64 = 20.0;
pub const DOT_AMPLITUDE: f64 = 60.0;
pub const MIN_INTENSITY: u16 = 10;
pub const MAX_INTENSITY: u16 = 120;

#[derive(Debug, Clone, PartialEq)]
struct SpatialGrid<T> {
    cell: f64,
    cells: BTreeMap<(i64, i64), Vec<T>>,
}

impl<T: Copy> SpatialGrid<T> {
    fn new(cell: f64) -> Self {
        SpatialGrid { cell, cells: BTreeMap::new() }
    }

    fn key(&self, e: f64, n: f64) -> (i64, i64) {
        ((e / self.cell).floor() as i64, (n / self.cell).floor() as i64)
    }

    fn insert(&mut self, e: f64, n: f64, item: T) {
        let k = self.key(e, n);
        self.cells.entry(k).or_default().push(item);
    }

    fn near(&self, e: f64, n: f64) -> impl Iterator<Item = &T> {
        let (ke, kn) = self.key(e, n);
        (-1..=1)
            .flat_map(move |de| (-1..=1).flat_map(move |dn| self.cells.get(&(ke + de, kn + dn)).into_iter().flatten()))
    }
}

impl Texture {
    pub fn new(half_extent: f64, dots: &[(f64, f64)], gsd: f64, rng: &mut impl Rng) -> Self {
        let max_sigma = 12.0;
        let mut blobs = SpatialGrid::new(3.0 * max_sigma);
        let count = ((2.0 * half_extent / 10.0).powi(2)) as usize;
        for _ in 0..count {
            let e = rng.random_range(-half_extent..half_extent);
            let n = rng.random_range(-half_extent..half_extent);
            let sigma = rng.random_range(3.0..max_sigma);
            let amp = rng.random_range(-1.0..1.0) * BLOB_AMPLITUDE;
            blobs.insert(e, n, (e, n, sigma, amp));
        }
        let dot_sigma = 0.6 * gsd;
        let mut grid = SpatialGrid::new(8.0 * dot_sigma);
        for &(e, n) in dots {
            grid.insert(e, n, (e, n));
        }
        Texture { blobs, dots: grid, dot_sigma }
    }

    pub fn intensity(&self, e: f64, n: f64) -> f64 {
        let mut v = BACKGROUND_LEVEL;
        for &(be, bn, s, a) in self.blobs.near(e, n) {
            let d2 = (e - be).powi(2) + (n - bn).powi(2);
            if d2 < 9.0 * s * s {
                v += a * (-0.5 * d2 / (s * s)).exp();
            }
        }
        let v = v.clamp(f64::from(MIN_INTENSITY), f64::from(MAX_INTENSITY) - DOT_AMPLITUDE);
        let mut dot = 0.0f64;
        for &(de, dn) in self.dots.near(e, n) {
            let d2 = (e - de).powi(2) + (n - dn).powi(2);
            dot = dot.max(DOT_AMPLITUDE * (-0.5 * d2 / (self.dot_sigma * self.dot_sigma)).exp());
        }
        v + dot
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub cameras: Vec<ParallelCamera>,
    pub models: Vec<RpcModel>,
    pub true_biases: Vec<BiasCorrection>,
    pub points: Vec<GroundPoint>,
    /// `observations[j][i]`: point `j` as observed in image `i`.
    pub observations: Vec<Vec<ImagePoint>>,
    pub terrain: Terrain,
    pub rasters: Vec<Raster>,
    /// Ground positions of the planted dots.
    pub planted: Vec<GroundPoint>,
}

impl SyntheticScene {
    pub fn rpcs(&self) -> Vec<RpcModel> {
        self.models.clone()
    }

    /// One track per point, observed in every image.
    pub fn tracks(&self) -> Vec<Track> {
        self.observations.iter().map(|obs| Track::new(obs.iter().copied().enumerate().collect())).collect()
    }

    /// Exact projection of a ground point into image `i` with its true bias.
    pub fn true_projection(&self, i: usize, g: &GroundPoint) -> Result<ImagePoint> {
        self.models[i].project(&self.true_biases[i], g)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, m) in self.models.iter().enumerate() {
            m.write(dir.join(format!("image_{i}.rpc")))?;
        }
        for (i, r) in self.rasters.iter().enumerate() {
            r.write_pgm(dir.join(format!("image_{i}.pgm")))?;
        }
        let mut truth = format!(
            "# seed={} images={} points={} bias_range_px={} noise_sigma_px={}\n# biases: image_id d_row d_col\n",
            self.config.seed,
            self.config.images,
            self.config.points,
            self.config.bias_range_px,
            self.config.noise_sigma_px
        );
        for (i, b) in self.true_biases.iter().enumerate() {
            let _ = writeln!(truth, "{i} {} {}", fmt_f64(b.d_row), fmt_f64(b.d_col));
        }
        truth.push_str("# points: point_id lat lon hei\n");
        for (j, g) in self.points.iter().enumerate() {
            let _ = writeln!(truth, "{j} {} {} {}", fmt_f64(g.lat), fmt_f64(g.lon), fmt_f64(g.hei));
        }
        let path = dir.join("truth.txt");
        std::fs::write(&path, truth).map_err(|e| Error::io(&path, e))?;
        write_tracks(dir.join("tracks.txt"), &self.tracks(), &[("seed", self.config.seed.to_string())])
    }
}

/// Parsed truth file: biases per image and points per id.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub biases: Vec<BiasCorrection>,
    pub points: Vec<GroundPoint>,
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Truth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut section = "";
    let mut truth = Truth { biases: Vec::new(), points: Vec::new() };
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(c) = line.strip_prefix('#') {
            let c = c.trim_start();
            if c.starts_with("biases") {
                section = "biases";
            } else if c.starts_with("points") {
                section = "points";
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::parse(path, format!("line {}: {m}", n + 1));
        let f: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| bad(&format!("invalid number {s:?}"))))
            .collect::<Result<_>>()?;
        match (section, f.len()) {
            ("biases", 3) => truth.biases.push(BiasCorrection::new(f[1], f[2])),
            ("points", 4) => truth.points.push(GroundPoint::new(f[1], f[2], f[3])),
            _ => return Err(bad("unexpected line")),
        }
    }
    Ok(truth)
}

fn random_views(n: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let start = rng.random_range(0.0..360.0);
    (0..n)
        .map(|i| {
            let az = start + 360.0 * i as f64 / n as f64 + rng.random_range(-15.0..15.0);
            (az.rem_euclid(360.0), rng.random_range(58.0..78.0))
        })
        .collect()
}

/// Fits an RPC to a parallel camera over its footprint and height range.
pub fn camera_rpc(cam: &ParallelCamera, half_extent: f64, hei_min: f64, hei_max: f64) -> Result<RpcModel> {
    let mut samples = Vec::with_capacity(12 * 12 * 5);
    for k in 0..5 {
        let u = hei_min + (hei_max - hei_min) * k as f64 / 4.0 - cam.origin.hei;
        for a in 0..12 {
            for b in 0..12 {
                let e = -half_extent + 2.0 * half_extent * a as f64 / 11.0;
                let n = -half_extent + 2.0 * half_extent * b as f64 / 11.0;
                let g = cam.from_local(e, n, u);
                samples.push((g, cam.project(&g)));
            }
        }
    }
    fit_rpc(&samples)
}

/// Generates a reproducible synthetic scene.
pub fn gen_scene(config: &SceneConfig) -> Result<SyntheticScene> {
    if config.images < 2 || config.points < 1 && config.planted_corners == 0 {
        return Err(Error::ConfigInvalid("a scene needs at least two images and one point".into()));
    }
    if !(config.gsd > 0.0) || config.size_px < 32 || !(config.noise_sigma_px >= 0.0) || !(config.bias_range_px >= 0.0) {
        return Err(Error::ConfigInvalid("scene sizes and noise must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let views = match &config.views {
        Some(v) if v.len() == config.images => v.clone(),
        Some(_) => return Err(Error::ConfigInvalid("one view per image required".into())),
        None => random_views(config.images, &mut rng),
    };
    let half_image = 0.5 * config.size_px as f64 * config.gsd;
    let center = (config.size_px as f64 - 1.0) / 2.0;
    let cameras: Vec<ParallelCamera> = views
        .iter()
        .map(|&(azimuth, elevation)| ParallelCamera {
            azimuth,
            elevation,
            heading: rng.random_range(-8.0..8.0),
            gsd: config.gsd,
            origin: config.center,
            row0: center,
            col0: center,
        })
        .collect();
    let terrain = Terrain::new(config.relief_m, &mut rng);
    let margin = config.relief_m + 30.0;
    let (hmin, hmax) = (config.center.hei - margin, config.center.hei + margin);
    let models =
        cameras.iter().map(|c| camera_rpc(c, 0.8 * half_image + margin, hmin, hmax)).collect::<Result<Vec<_>>>()?;

    let true_biases = match &config.biases {
        Some(b) if b.len() == config.images => b.clone(),
        Some(_) => return Err(Error::ConfigInvalid("one bias per image required".into())),
        None => (0..config.images)
            .map(|_| {
                let r = config.bias_range_px;
                if r > 0.0 {
                    BiasCorrection::new(rng.random_range(-r..=r), rng.random_range(-r..=r))
                } else {
                    BiasCorrection::ZERO
                }
            })
            .collect(),
    };

    let inner = 0.6 * half_image;
    let noise = Normal::new(0.0, config.noise_sigma_px.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let mut points = Vec::with_capacity(config.points);
    let mut observations = Vec::with_capacity(config.points);
    for _ in 0..config.points {
        let e = rng.random_range(-inner..inner);
        let n = rng.random_range(-inner..inner);
        let g = cameras[0].from_local(e, n, terrain.height(e, n));
        let mut obs = Vec::with_capacity(config.images);
        for (m, b) in models.iter().zip(&true_biases) {
            let p = m.project(b, &g)?;
            let (dr, dc) =
                if config.noise_sigma_px > 0.0 { (noise.sample(&mut rng), noise.sample(&mut rng)) } else { (0.0, 0.0) };
            obs.push(ImagePoint::new(p.row + dr, p.col + dc));
        }
        points.push(g);
        observations.push(obs);
    }

    let mut planted = Vec::new();
    let mut rasters = Vec::new();
    if config.render {
        let dots = planted_dots(config.planted_corners, 0.7 * half_image, &mut rng);
        planted = dots.iter().map(|&(e, n)| cameras[0].from_local(e, n, terrain.height(e, n))).collect();
        let texture = Texture::new(half_image + margin, &dots, config.gsd, &mut rng);
        rasters =
            cameras.iter().zip(&true_biases).map(|(c, b)| render(c, b, &terrain, &texture, config.size_px)).collect();
    }

    Ok(SyntheticScene {
        config: config.clone(),
        cameras,
        models,
        true_biases,
        points,
        observations,
        terrain,
        rasters,
        planted,
    })
}

/// Jittered grid of `count` dot positions in `[-half, half]^2`, at least
/// 8 m apart.
fn planted_dots(count: usize, half: f64, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    if count == 0 {
        return Vec::new();
    }
    let side = (count as f64).sqrt().ceil() as usize;
    let spacing = 2.0 * half / side as f64;
    let jitter = (0.5 * spacing - 4.0).max(0.0);
    let mut out = Vec::with_capacity(count);
    'grid: for a in 0..side {
        for b in 0..side {
            if out.len() == count {
                break 'grid;
            }
            let e = -half + spacing * (a as f64 + 0.5) + rng.random_range(-1.0..1.0) * jitter;
            let n = -half + spacing * (b as f64 + 0.5) + rng.random_range(-1.0..1.0) * jitter;
            out.push((e, n));
        }
    }
    out
}

/// Renders a camera's view: every pixel shows the terrain point whose
/// biased projection lands on it.
pub fn render(
    cam: &ParallelCamera,
    bias: &BiasCorrection,
    terrain: &Terrain,
    texture: &Texture,
    size: usize,
) -> Raster {
    let mut r = Raster::new(size, size, 255, 0);
    for row in 0..size {
        for col in 0..size {
            // observed = raw - bias, so the raw camera sees pixel + bias
            let p = ImagePoint::new(row as f64 + bias.d_row, col as f64 + bias.d_col);
            let mut u = 0.0;
            let mut en = cam.back_project(&p, u);
            for _ in 0..30 {
                let nu = terrain.height(en.0, en.1);
                en = cam.back_project(&p, nu);
                if (nu - u).abs() < 1e-6 {
                    break;
                }
                u = nu;
            }
            let v = texture.intensity(en.0, en.1).round().clamp(f64::from(MIN_INTENSITY), f64::from(MAX_INTENSITY));
            r.set(row, col, v as u16);
        }
    }
    r
}

// ---------------------------------------------------------------------------
// oracles

/// Central finite differences of the residual with respect to the bias
/// (pixels) and the ground (steps of `step` in normalized units).
pub fn fd_jacobian(rpc: &RpcModel, bias: &BiasCorrection, g: &GroundPoint, step: f64) -> Result<Jacobians> {
    if !(step > 0.0) {
        return Err(Error::ConfigInvalid("finite-difference step must be positive".into()));
    }
    let obs = ImagePoint::new(0.0, 0.0);
    let mut a_block = Matrix2::zeros();
    for k in 0..2 {
        let mut plus = *bias;
        let mut minus = *bias;
        if k == 0 {
            plus.d_row += step;
            minus.d_row -= step;
        } else {
            plus.d_col += step;
            minus.d_col -= step;
        }
        let d = (rpc.residual(&plus, g, &obs)? - rpc.residual(&minus, g, &obs)?) / (2.0 * step);
        a_block.set_column(k, &d);
    }
    let scales = rpc.ground_scales();
    let mut b_block = Matrix2x3::zeros();
    for k in 0..3 {
        let h = step * scales[k];
        let mut plus = g.to_vector();
        let mut minus = g.to_vector();
        plus[k] += h;
        minus[k] -= h;
        // divide by the representable step, not the requested one
        let d = (rpc.residual(bias, &GroundPoint::from_vector(&plus), &obs)?
            - rpc.residual(bias, &GroundPoint::from_vector(&minus), &obs)?)
            / (plus[k] - minus[k]);
        b_block.set_column(k, &d);
    }
    Ok(Jacobians { a_block, b_block })
}

/// Random cubic RPC with non-vanishing denominators over the validity cube.
pub fn random_rpc(rng: &mut impl Rng) -> RpcModel {
    loop {
        let mut m = RpcModel {
            line_off: rng.random_range(500.0..5000.0),
            line_scale: rng.random_range(500.0..5000.0),
            samp_off: rng.random_range(500.0..5000.0),
            samp_scale: rng.random_range(500.0..5000.0),
            lat_off: rng.random_range(-60.0..60.0),
            lat_scale: rng.random_range(0.01..0.1),
            lon_off: rng.random_range(-170.0..170.0),
            lon_scale: rng.random_range(0.01..0.1),
            hei_off: rng.random_range(0.0..500.0),
            hei_scale: rng.random_range(100.0..500.0),
            line_num: [0.0; 20],
            line_den: [0.0; 20],
            samp_num: [0.0; 20],
            samp_den: [0.0; 20],
        };
        for c in m.line_num.iter_mut().chain(&mut m.samp_num) {
            *c = rng.random_range(-0.02..0.02);
        }
        for c in m.line_den.iter_mut().chain(&mut m.samp_den) {
            *c = rng.random_range(-0.01..0.01);
        }
        m.line_num[2] = -rng.random_range(0.8..1.2);
        m.line_num[3] = rng.random_range(0.0..0.1);
        m.samp_num[1] = rng.random_range(0.8..1.2);
        m.samp_num[3] = rng.random_range(-0.1..0.1);
        m.line_den[0] = 1.0;
        m.samp_den[0] = 1.0;
        if let Ok(m) = m.validated() {
            return m;
        }
    }
}

/// Bias corrections and ground corrections (`None` for excluded tracks).
pub type DenseSolution = (Vec<BiasCorrection>, Vec<Option<Vector3<f64>>>);

/// Solves the full normal equations of the current linearization without
/// elimination: biases plus one normalized correction per non-GCP track.
/// Same gauge pins, GCP handling and point-block exclusion as the reduced
/// solver.
pub fn dense_solve(graph: &ObservationGraph) -> Result<DenseSolution> {
    let n = graph.image_count();
    let mut slot = vec![None; graph.tracks.len()];
    let mut lins = Vec::with_capacity(graph.tracks.len());
    let mut m = 0;
    for (j, t) in graph.tracks.iter().enumerate() {
        let lin = graph.linearize_track(j)?;
        if !t.is_gcp() && point_block(j, &lin).is_ok() {
            slot[j] = Some(m);
            m += 1;
        }
        lins.push(lin);
    }
    let dim = 2 * n + 3 * m;
    let mut nm = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (j, lin) in lins.iter().enumerate() {
        let excluded = !graph.tracks[j].is_gcp() && slot[j].is_none();
        if excluded {
            continue;
        }
        for (i, v, b) in lin {
            let xi = 2 * i;
            for a in 0..2 {
                nm[(xi + a, xi + a)] += 1.0;
                rhs[xi + a] -= v[a];
            }
            if let Some(s) = slot[j] {
                let yj = 2 * n + 3 * s;
                let btb = b.transpose() * b;
                let btv = b.transpose() * v;
                for r in 0..3 {
                    rhs[yj + r] -= btv[r];
                    for c in 0..3 {
                        nm[(yj + r, yj + c)] += btb[(r, c)];
                    }
                    for a in 0..2 {
                        nm[(xi + a, yj + r)] += b[(a, r)];
                        nm[(yj + r, xi + a)] += b[(a, r)];
                    }
                }
            }
        }
    }
    let free = free_indices(dim, &graph.pins);
    let nf = nm.select_rows(&free).select_columns(&free);
    let rf = rhs.select_rows(&free);
    let eig = nf.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 1e-13 * hi) {
        return Err(Error::RankDeficient);
    }
    let sol = nf.cholesky().ok_or(Error::RankDeficient)?.solve(&rf);
    let mut full = DVector::<f64>::zeros(dim);
    for (k, &i) in free.iter().enumerate() {
        full[i] = sol[k];
    }
    let x = (0..n).map(|i| BiasCorrection::new(full[2 * i], full[2 * i + 1])).collect();
    let y = slot
        .iter()
        .map(|s| s.map(|s| Vector3::new(full[2 * n + 3 * s], full[2 * n + 3 * s + 1], full[2 * n + 3 * s + 2])))
        .collect();
    Ok((x, y))
}

/// Truth biases expressed in the free-network datum of `pins`: the ground
/// shift `t` making the pinned components of `b_i + J_i t` zero is applied
/// to every image. Returns the truth unchanged when nothing is pinned.
pub fn truth_in_datum(graph: &ObservationGraph, truth: &[BiasCorrection]) -> Result<Vec<BiasCorrection>> {
    if graph.pins.is_empty() {
        return Ok(truth.to_vec());
    }
    let s = nalgebra::Matrix3::from_diagonal(&graph.ground_scale);
    let at = graph.images[0].rpc.center();
    let jac: Vec<Matrix2x3<f64>> =
        graph.images.iter().map(|img| img.rpc.ground_gradient(&at).map(|j| j * s)).collect::<Result<_>>()?;
    // the bias shift of image i under ground shift t is -J_i t (grounds move, observations stay)
    let rows = graph.pins.len();
    let mut a = DMatrix::<f64>::zeros(rows, 3);
    let mut b = DVector::<f64>::zeros(rows);
    for (r, &p) in graph.pins.iter().enumerate() {
        let (i, c) = (p / 2, p % 2);
        for k in 0..3 {
            a[(r, k)] = jac[i][(c, k)];
        }
        b[r] = if c == 0 { truth[i].d_row } else { truth[i].d_col };
    }
    let t = a.svd(true, true).solve(&b, 1e-12).map_err(|e| Error::NoConvergence(e.to_string()))?;
    Ok(truth
        .iter()
        .zip(&jac)
        .map(|(tb, j)| {
            let shift = j * &t;
            BiasCorrection::new(tb.d_row - shift[0], tb.d_col - shift[1])
        })
        .collect())
}

/// Random graph for solver comparisons: each point is seen by a random
/// subset of at least two images.
pub fn random_graph(images: usize, points: usize, seed: u64) -> Result<(SyntheticScene, ObservationGraph)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let config = SceneConfig {
        images,
        points,
        bias_range_px: rng.random_range(0.0..20.0),
        noise_sigma_px: rng.random_range(0.0..0.5),
        seed,
        ..SceneConfig::default()
    };
    let scene = gen_scene(&config)?;
    let tracks = scene
        .tracks()
        .into_iter()
        .map(|mut t| {
            let keep = rng.random_range(2..=images);
            while t.observations.len() > keep {
                let k = rng.random_range(0..t.observations.len());
                t.observations.remove(k);
            }
            t
        })
        .collect();
    let graph = crate::adjust::assemble(scene.rpcs(), tracks, &BTreeMap::new())?;
    Ok((scene, graph))
}
