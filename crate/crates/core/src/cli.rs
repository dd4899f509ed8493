//! Command-line driver: one subcommand per stage plus an end-to-end run.
//!
//! Every output file starts with the configuration that produced it and
//! names inputs by file name only, so reruns are byte-comparable.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use crate::adjust::{self, AdjustParams, AdjustmentResult, ReprojectionReport};
use crate::error::{Error, Result};
use crate::kv::{fmt_f64, KeyValues};
use crate::matching::{self, CensusConfig, MatchParams, PairId, PairMatches};
use crate::raster::Raster;
use crate::rectify::{self, Level2Product};
use crate::rpc::RpcModel;
use crate::synth::{self, SceneConfig};
use crate::tracks::{self, Track};

/// Nodata value assumed for raw input images.
pub const RAW_NODATA: u16 = 0;
pub const SIDECAR_EXTENSION: &str = "l2";
pub const STAGE_MARKER: &str = "stage.done";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub overlap_threshold: f64,
    pub epipolar_buffer_px: f64,
    pub ratio_threshold: f64,
    pub reproj_filter_px: f64,
    pub convergence_px: f64,
    pub max_iter: usize,
    pub census_block: usize,
    pub census_prefilter: bool,
    pub fast_threshold: u16,
    pub nms_radius: f64,
    /// Output GSD in meters; 0 selects the coarsest input GSD.
    pub gsd: f64,
    pub line_search: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let census = CensusConfig::default();
        PipelineConfig {
            overlap_threshold: matching::DEFAULT_OVERLAP_THRESHOLD,
            epipolar_buffer_px: matching::DEFAULT_BUFFER_PX,
            ratio_threshold: matching::DEFAULT_RATIO,
            reproj_filter_px: matching::DEFAULT_REPROJ_PX,
            convergence_px: adjust::DEFAULT_TOLERANCE_PX,
            max_iter: adjust::DEFAULT_MAX_ITER,
            census_block: census.block,
            census_prefilter: census.prefilter,
            fast_threshold: matching::DEFAULT_FAST_THRESHOLD,
            nms_radius: matching::DEFAULT_NMS_RADIUS,
            gsd: 0.0,
            line_search: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("key {key}: cannot parse {value:?}"))
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 12] = [
        "overlap_threshold",
        "epipolar_buffer_px",
        "ratio_threshold",
        "reproj_filter_px",
        "convergence_px",
        "max_iter",
        "census_block",
        "census_prefilter",
        "fast_threshold",
        "nms_radius",
        "gsd",
        "line_search",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "overlap_threshold" => self.overlap_threshold = parse_value(key, value)?,
            "epipolar_buffer_px" => self.epipolar_buffer_px = parse_value(key, value)?,
            "ratio_threshold" => self.ratio_threshold = parse_value(key, value)?,
            "reproj_filter_px" => self.reproj_filter_px = parse_value(key, value)?,
            "convergence_px" => self.convergence_px = parse_value(key, value)?,
            "max_iter" => self.max_iter = parse_value(key, value)?,
            "census_block" => self.census_block = parse_value(key, value)?,
            "census_prefilter" => self.census_prefilter = parse_value(key, value)?,
            "fast_threshold" => self.fast_threshold = parse_value(key, value)?,
            "nms_radius" => self.nms_radius = parse_value(key, value)?,
            "gsd" => self.gsd = parse_value(key, value)?,
            "line_search" => self.line_search = parse_value(key, value)?,
            _ => return Err(format!("unknown key {key}")),
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let kv = KeyValues::read(path)?;
        let mut cfg = PipelineConfig::default();
        for key in kv.keys() {
            cfg.set(key, kv.get(key).unwrap_or_default())
                .map_err(|m| Error::Parse { path: kv.path().to_path_buf(), message: m })?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.overlap_threshold) && self.overlap_threshold <= 1.0) {
            return bad("overlap_threshold must be in (0, 1]");
        }
        if !(positive(self.ratio_threshold) && self.ratio_threshold <= 1.0) {
            return bad("ratio_threshold must be in (0, 1]");
        }
        if !positive(self.epipolar_buffer_px) || !positive(self.reproj_filter_px) || !positive(self.convergence_px) {
            return bad("pixel thresholds must be positive");
        }
        if !positive(self.nms_radius) {
            return bad("nms_radius must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if self.census_block < 3 || self.census_block.is_multiple_of(2) {
            return bad("census_block must be odd and at least 3");
        }
        if self.fast_threshold == 0 {
            return bad("fast_threshold must be positive");
        }
        if !(self.gsd >= 0.0 && self.gsd.is_finite()) {
            return bad("gsd must be non-negative");
        }
        Ok(())
    }

    /// `(key, value)` pairs in [`Self::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.overlap_threshold.to_string(),
            self.epipolar_buffer_px.to_string(),
            self.ratio_threshold.to_string(),
            self.reproj_filter_px.to_string(),
            self.convergence_px.to_string(),
            self.max_iter.to_string(),
            self.census_block.to_string(),
            self.census_prefilter.to_string(),
            self.fast_threshold.to_string(),
            self.nms_radius.to_string(),
            self.gsd.to_string(),
            self.line_search.to_string(),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            buffer_px: self.epipolar_buffer_px,
            ratio: self.ratio_threshold,
            reproj_px: self.reproj_filter_px,
            fast_threshold: self.fast_threshold,
            nms_radius: self.nms_radius,
            census: CensusConfig { block: self.census_block, prefilter: self.census_prefilter },
        }
    }

    pub fn adjust_params(&self) -> AdjustParams {
        AdjustParams { tolerance_px: self.convergence_px, max_iter: self.max_iter, line_search: self.line_search }
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn header_lines(header: &[(&str, String)]) -> String {
    header.iter().map(|(k, v)| format!("# {k} = {v}\n")).collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn input_list(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| file_name(p)).collect::<Vec<_>>().join(",")
}

/// Sidecar path of a level-2 product raster.
pub fn sidecar_path(raster: &Path) -> PathBuf {
    raster.with_extension(SIDECAR_EXTENSION)
}

// ---------------------------------------------------------------------------
// stages

/// Rectifies raw images (each with an RPC file `<stem>.rpc` beside it) onto
/// a common plane and GSD. Returns the product raster paths.
pub fn cmd_rectify(inputs: &[PathBuf], out: &Path, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("no images to rectify"));
    }
    let mut stems = std::collections::BTreeSet::new();
    for p in inputs {
        if !stems.insert(p.file_stem().map(|s| s.to_os_string())) {
            return Err(Error::ConfigInvalid(format!("duplicate image name {}", file_name(p))));
        }
    }
    let mut images = Vec::with_capacity(inputs.len());
    for p in inputs {
        let rpc = RpcModel::read(p.with_extension("rpc"))?;
        let raster = Raster::read_pgm(p, RAW_NODATA)?;
        images.push((raster, rpc));
    }
    let plane = rectify::common_plane_height(images.iter().map(|(_, r)| r))?;
    let gsd = if cfg.gsd > 0.0 {
        cfg.gsd
    } else {
        let refs: Vec<_> = images.iter().map(|(r, m)| (r, m)).collect();
        rectify::common_gsd(&refs, plane)?
    };
    info!("rectifying {} images at plane height {plane:.3} m, gsd {gsd:.4} m", images.len());
    create_dir(out)?;
    let mut products = Vec::with_capacity(inputs.len());
    for (p, (raster, rpc)) in inputs.iter().zip(&images) {
        let product = rectify::rectify_image(raster, rpc, plane, gsd)?;
        let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let dest = out.join(format!("{stem}.pgm"));
        let mut extra = vec![("source", file_name(p))];
        extra.extend(cfg.entries());
        product.write(&dest, sidecar_path(&dest), &extra)?;
        info!("{} -> {}x{} product", file_name(p), product.raster.width, product.raster.height);
        products.push(dest);
    }
    Ok(products)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchSummary {
    pub pairs: usize,
    pub correspondences: usize,
    pub tracks: usize,
    /// Track count per degree.
    pub degrees: BTreeMap<usize, usize>,
}

/// Matches every overlapping product pair and links the matches into tracks.
/// Writes `correspondences.txt` and `tracks.txt` into `out`.
pub fn cmd_match(products: &[PathBuf], out: &Path, cfg: &PipelineConfig) -> Result<MatchSummary> {
    if products.is_empty() {
        return Err(Error::EmptyInput("no products to match"));
    }
    let loaded = products.iter().map(|p| Level2Product::read(p, sidecar_path(p))).collect::<Result<Vec<_>>>()?;
    let params = cfg.match_params();
    let pairs = matching::select_pairs(&loaded, cfg.overlap_threshold);
    info!("{} of {} product pairs overlap", pairs.len(), loaded.len() * (loaded.len().saturating_sub(1)) / 2);
    let mut used = vec![false; loaded.len()];
    for &(i, j) in &pairs {
        used[i] = true;
        used[j] = true;
    }
    let features: Vec<_> =
        loaded.par_iter().zip(&used).map(|(p, &u)| u.then(|| matching::prepare_features(p, &params))).collect();
    let matches: Vec<PairMatches> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (lf, rf) = (features[i].as_ref().expect("prepared"), features[j].as_ref().expect("prepared"));
            matching::match_prepared(&loaded[i], lf, &loaded[j], rf, PairId { left: i, right: j }, &params)
        })
        .collect();
    for m in &matches {
        info!("pair {}: {} correspondences", m.pair, m.correspondences.len());
    }
    let correspondences: Vec<_> = matches.iter().flat_map(|m| m.correspondences.iter().copied()).collect();
    let tracks = tracks::build_tracks(&correspondences);
    let mut header = vec![("images", input_list(products))];
    header.extend(cfg.entries());
    create_dir(out)?;
    matching::write_correspondences(out.join("correspondences.txt"), &header, &matches)?;
    tracks::write_tracks(out.join("tracks.txt"), &tracks, &header)?;
    Ok(MatchSummary {
        pairs: pairs.len(),
        correspondences: correspondences.len(),
        tracks: tracks.len(),
        degrees: tracks::track_stats(&tracks),
    })
}

#[derive(Debug, Clone)]
pub struct AdjustSummary {
    pub before: ReprojectionReport,
    pub after: ReprojectionReport,
    pub result: AdjustmentResult,
    pub free_network: bool,
    pub table: String,
}

pub const GAUGE_NOTE: &str = "free-network mode: no ground control points; the datum holds image 0's bias \
and one further bias component at zero, so biases are relative to that datum";

/// Adjusts per-image biases from tracks. `models` are RPC files or product
/// sidecars, in the image order used by the track file. Writes
/// `biases.txt`, `report.txt` and `report.json` into `out`.
pub fn cmd_adjust(
    models: &[PathBuf],
    tracks_path: &Path,
    gcps_path: Option<&Path>,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<AdjustSummary> {
    let rpcs = models.iter().map(|p| RpcModel::from_key_values(&KeyValues::read(p)?)).collect::<Result<Vec<_>>>()?;
    let track_list: Vec<Track> = tracks::read_tracks(tracks_path)?;
    if track_list.is_empty() {
        return Err(Error::EmptyInput("no tracks to adjust"));
    }
    let gcps = match gcps_path {
        Some(p) => tracks::read_gcps(p)?,
        None => BTreeMap::new(),
    };
    let mut graph = adjust::assemble(rpcs, track_list, &gcps)?;
    let free_network = !graph.has_gcps();
    let before = adjust::report(&graph);
    let result = adjust::adjust_loop(&mut graph, &cfg.adjust_params())?;
    let after = adjust::report(&graph);
    if !result.converged {
        warn!("stopped after {} iterations without reaching {} px", result.iterations, cfg.convergence_px);
    }

    let mut header = vec![
        ("images", input_list(models)),
        ("tracks", file_name(tracks_path)),
        ("gcps", gcps_path.map(file_name).unwrap_or_else(|| "none".into())),
        ("mode", if free_network { "free-network" } else { "gcp" }.into()),
    ];
    header.extend(cfg.entries());
    create_dir(out)?;

    let mut biases = header_lines(&header);
    biases.push_str("# image_id d_row d_col\n");
    for (i, b) in result.biases.iter().enumerate() {
        let _ = writeln!(biases, "{i} {} {}", fmt_f64(b.d_row), fmt_f64(b.d_col));
    }
    write_file(&out.join("biases.txt"), &biases)?;

    let mut table = adjust::report_table(&before, &after);
    let _ = writeln!(
        table,
        "iterations: {}, converged: {}, excluded tracks: {}",
        result.iterations,
        result.converged,
        result.excluded.len()
    );
    write_file(&out.join("report.txt"), &(header_lines(&header) + &table))?;

    let mut json: serde_json::Value =
        serde_json::from_str(&adjust::report_json(&before, &after, &result)).expect("report is valid JSON");
    let config: serde_json::Map<_, _> =
        header.iter().map(|(k, v)| (k.to_string(), serde_json::Value::String(v.clone()))).collect();
    json["config"] = serde_json::Value::Object(config);
    write_file(&out.join("report.json"), &(json.to_string() + "\n"))?;

    Ok(AdjustSummary { before, after, result, free_network, table })
}

/// Reads a `report.json` (or the directory holding one) and renders the table.
pub fn cmd_report(path: &Path) -> Result<String> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| Error::Io { path: file.clone(), source: e })?;
    let parse_err = |m: String| Error::Parse { path: file.clone(), message: m };
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    let section = |key: &str| -> Result<ReprojectionReport> {
        serde_json::from_value(json.get(key).cloned().unwrap_or_default())
            .map_err(|e| parse_err(format!("key {key}: {e}")))
    };
    let mut table = adjust::report_table(&section("before")?, &section("after")?);
    if let (Some(it), Some(conv)) = (json["iterations"].as_u64(), json["converged"].as_bool()) {
        let _ = writeln!(table, "iterations: {it}, converged: {conv}");
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Stage {
    Rectify,
    Match,
    Adjust,
}

impl Stage {
    fn dir(self) -> &'static str {
        match self {
            Stage::Rectify => "level2",
            Stage::Match => "match",
            Stage::Adjust => "adjust",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub gcps: Option<PathBuf>,
    pub force: bool,
    pub stop_after: Option<Stage>,
}

/// Runs rectify, match and adjust into `out/level2`, `out/match` and
/// `out/adjust`. A stage whose marker records the same inputs and
/// configuration is skipped; any rerun stage invalidates the later ones.
/// Returns the adjustment summary, or `None` when stopped early.
pub fn cmd_pipeline(
    images: &[PathBuf],
    out: &Path,
    cfg: &PipelineConfig,
    opts: &PipelineOptions,
) -> Result<Option<AdjustSummary>> {
    create_dir(out)?;
    let mut fingerprint = header_lines(&cfg.entries());
    let _ = writeln!(fingerprint, "# images = {}", input_list(images));
    let _ = writeln!(fingerprint, "# gcps = {}", opts.gcps.as_deref().map(file_name).unwrap_or_else(|| "none".into()));
    let mut rerun = opts.force;
    let mut summary = None;
    let products: Vec<PathBuf> = images
        .iter()
        .map(|p| {
            out.join(Stage::Rectify.dir()).join(format!("{}.pgm", p.file_stem().unwrap_or_default().to_string_lossy()))
        })
        .collect();

    for stage in [Stage::Rectify, Stage::Match, Stage::Adjust] {
        let dir = out.join(stage.dir());
        let marker = dir.join(STAGE_MARKER);
        let _ = writeln!(fingerprint, "# stage = {}", stage.dir());
        let done = std::fs::read_to_string(&marker).is_ok_and(|m| m == fingerprint);
        // the adjust summary is needed for reporting, so adjust always runs
        if rerun || !done || stage == Stage::Adjust {
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            }
            match stage {
                Stage::Rectify => {
                    cmd_rectify(images, &dir, cfg)?;
                }
                Stage::Match => {
                    let s = cmd_match(&products, &dir, cfg)?;
                    info!("{} pairs, {} correspondences, {} tracks", s.pairs, s.correspondences, s.tracks);
                }
                Stage::Adjust => {
                    let models: Vec<PathBuf> = products.iter().map(|p| sidecar_path(p)).collect();
                    let tracks_path = out.join(Stage::Match.dir()).join("tracks.txt");
                    summary = Some(cmd_adjust(&models, &tracks_path, opts.gcps.as_deref(), &dir, cfg)?);
                }
            }
            write_file(&marker, &fingerprint)?;
            rerun = true;
        } else {
            info!("stage {} is up to date", stage.dir());
        }
        if opts.stop_after == Some(stage) {
            return Ok(None);
        }
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// argument parsing

#[derive(Debug, Parser)]
#[command(name = "satba", version, about = "Bias-compensated bundle adjustment of RPC satellite images")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses all cores, 1 gives bitwise reproducible output.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(flatten)]
    overrides: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags overriding configuration keys of the same name.
#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long, global = true, value_name = "RATIO")]
    overlap_threshold: Option<String>,
    #[arg(long, global = true, value_name = "PX")]
    epipolar_buffer_px: Option<String>,
    #[arg(long, global = true, value_name = "RATIO")]
    ratio_threshold: Option<String>,
    #[arg(long, global = true, value_name = "PX")]
    reproj_filter_px: Option<String>,
    #[arg(long, global = true, value_name = "PX")]
    convergence_px: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    max_iter: Option<String>,
    #[arg(long, global = true, value_name = "PX")]
    census_block: Option<String>,
    #[arg(long, global = true, value_name = "BOOL")]
    census_prefilter: Option<String>,
    #[arg(long, global = true, value_name = "LEVEL")]
    fast_threshold: Option<String>,
    #[arg(long, global = true, value_name = "PX")]
    nms_radius: Option<String>,
    #[arg(long, global = true, value_name = "METERS")]
    gsd: Option<String>,
    #[arg(long, global = true, value_name = "BOOL")]
    line_search: Option<String>,
}

impl ConfigArgs {
    fn pairs(&self) -> [(&'static str, &Option<String>); 12] {
        [
            ("overlap_threshold", &self.overlap_threshold),
            ("epipolar_buffer_px", &self.epipolar_buffer_px),
            ("ratio_threshold", &self.ratio_threshold),
            ("reproj_filter_px", &self.reproj_filter_px),
            ("convergence_px", &self.convergence_px),
            ("max_iter", &self.max_iter),
            ("census_block", &self.census_block),
            ("census_prefilter", &self.census_prefilter),
            ("fast_threshold", &self.fast_threshold),
            ("nms_radius", &self.nms_radius),
            ("gsd", &self.gsd),
            ("line_search", &self.line_search),
        ]
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene with known biases.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        images: usize,
        #[arg(long, default_value_t = 500)]
        points: usize,
        /// Biases are uniform in [-BIAS, BIAS] pixels.
        #[arg(long, default_value_t = 30.0)]
        bias: f64,
        /// Observation noise sigma in pixels.
        #[arg(long, default_value_t = 0.25)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Image size in pixels.
        #[arg(long, default_value_t = 400)]
        size: usize,
        /// Render textured images.
        #[arg(long)]
        render: bool,
        /// Number of high-contrast dots planted in the texture.
        #[arg(long, default_value_t = 0)]
        planted: usize,
        /// Write the first N points as ground control to `gcps.txt`.
        #[arg(long, default_value_t = 0)]
        gcps: usize,
    },
    /// Rectify images onto a common plane; RPCs are read from `<stem>.rpc`.
    Rectify {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Match level-2 products and build tracks.
    Match {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        products: Vec<PathBuf>,
    },
    /// Adjust per-image biases from a track file.
    Adjust {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        /// Ground control points keyed by track id.
        #[arg(long)]
        gcps: Option<PathBuf>,
        /// RPC files or product sidecars in track image order.
        #[arg(required = true)]
        models: Vec<PathBuf>,
    },
    /// Run rectify, match and adjust end to end, resuming finished stages.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gcps: Option<PathBuf>,
        /// Rerun every stage.
        #[arg(long)]
        force: bool,
        /// Stop once this stage is complete.
        #[arg(long, value_enum)]
        stop_after: Option<Stage>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Print the Before/After table of an adjustment report.
    Report {
        /// `report.json` or a directory containing it.
        path: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => exit::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            exit::USAGE
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                exit::NUMERICAL
            } else {
                exit::DATA
            }
        }
    }
}

fn execute(cli: Cli) -> std::result::Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    for (key, value) in cli.overrides.pairs() {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|m| Failure::Usage(format!("--{}: {m}", key.replace('_', "-"))))?;
        }
    }
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    pool.install(|| dispatch(cli.command, &cfg))
}

fn print_adjust(summary: &AdjustSummary) {
    if summary.free_network {
        println!("{GAUGE_NOTE}");
    }
    print!("{}", summary.table);
}

fn dispatch(command: Command, cfg: &PipelineConfig) -> std::result::Result<(), Failure> {
    match command {
        Command::Synth { out, images, points, bias, noise, seed, size, render, planted, gcps } => {
            let config = SceneConfig {
                images,
                points,
                bias_range_px: bias,
                noise_sigma_px: noise,
                seed,
                size_px: size,
                render,
                planted_corners: planted,
                ..SceneConfig::default()
            };
            let scene = synth::gen_scene(&config)?;
            scene.write(&out)?;
            if gcps > 0 {
                if gcps > scene.points.len() {
                    return Err(Failure::Usage(format!("--gcps {gcps} exceeds the {} points", scene.points.len())));
                }
                let control = scene.points.iter().copied().take(gcps).enumerate().collect();
                tracks::write_gcps(out.join("gcps.txt"), &control)?;
            }
            println!("wrote {images} images and {} tracks to {}", scene.points.len(), out.display());
        }
        Command::Rectify { out, images } => {
            let products = cmd_rectify(&images, &out, cfg)?;
            println!("wrote {} level-2 products to {}", products.len(), out.display());
        }
        Command::Match { out, products } => {
            let s = cmd_match(&products, &out, cfg)?;
            println!("{} pairs, {} correspondences, {} tracks", s.pairs, s.correspondences, s.tracks);
            for (degree, count) in &s.degrees {
                println!("  degree {degree}: {count} tracks");
            }
        }
        Command::Adjust { out, tracks, gcps, models } => {
            print_adjust(&cmd_adjust(&models, &tracks, gcps.as_deref(), &out, cfg)?);
        }
        Command::Pipeline { out, gcps, force, stop_after, images } => {
            let opts = PipelineOptions { gcps, force, stop_after };
            match cmd_pipeline(&images, &out, cfg, &opts)? {
                Some(summary) => print_adjust(&summary),
                None => println!("stopped after {:?}", stop_after.expect("stop stage")),
            }
        }
        Command::Report { path } => print!("{}", cmd_report(&path)?),
    }
    Ok(())
}
