//! Acceptance criteria, one PASS/FAIL line each. Runs sequentially so the
//! allocation tracker and the timings are not disturbed by other tests.

use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use satba::adjust::{accumulate_reduced, adjust_loop, adjust_loop_with, assemble, report, solve_bias, AdjustParams};
use satba::matching::{match_prepared, mbcensus_descriptor, prepare_features, MatchParams, PairId};
use satba::rectify::{common_gsd, common_plane_height, fit_rpc, rectify_image, virtual_grid};
use satba::rpc::NormalizedGround;
use satba::synth::{dense_solve, fd_jacobian, gen_scene, random_graph, random_rpc, truth_in_datum, SceneConfig};
use satba::{BiasCorrection, GroundPoint, ImagePoint};

struct TrackingAllocator;

static TRACKING: AtomicBool = AtomicBool::new(false);
static LARGEST: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        if TRACKING.load(Ordering::Relaxed) {
            LARGEST.fetch_max(layout.size(), Ordering::Relaxed);
        }
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        if TRACKING.load(Ordering::Relaxed) {
            LARGEST.fetch_max(new_size, Ordering::Relaxed);
        }
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: TrackingAllocator = TrackingAllocator;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn subpixel_scene() -> SceneConfig {
    SceneConfig {
        images: 5,
        points: 500,
        bias_range_px: 30.0,
        noise_sigma_px: 0.25,
        seed: 2024,
        ..SceneConfig::default()
    }
}

fn max_bias_error(a: &[BiasCorrection], b: &[BiasCorrection]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.d_row - y.d_row).abs().max((x.d_col - y.d_col).abs())).fold(0.0, f64::max)
}

fn schur_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut iterations = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for g in 0..100u64 {
        let n = rng.random_range(2..=5);
        let m = rng.random_range(5..=50);
        let (scene, mut graph) = random_graph(n, m, 1000 + g).map_err(|e| e.to_string())?;
        if g % 4 == 3 {
            // a few graphs carry ground control instead of gauge pins
            let gcps: BTreeMap<usize, GroundPoint> = (0..3).map(|j| (j, scene.points[j])).collect();
            graph = assemble(scene.rpcs(), graph.tracks.clone(), &gcps).map_err(|e| e.to_string())?;
        }
        adjust_loop_with(&mut graph, &AdjustParams::default(), |state| {
            let (xd, _) = dense_solve(state.graph)?;
            worst = worst.max(max_bias_error(state.corrections, &xd));
            iterations += 1;
            Ok(())
        })
        .map_err(|e| format!("graph {g}: {e}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && secs < 30.0,
        format!("100 graphs, {iterations} iterations, max |X - X_dense| = {worst:.2e} px, {secs:.1} s"),
    )
}

fn jacobian_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = random_rpc(&mut rng);
        let n = NormalizedGround {
            p: rng.random_range(-1.0..1.0),
            l: rng.random_range(-1.0..1.0),
            h: rng.random_range(-1.0..1.0),
        };
        let g = m.denormalize_ground(&n);
        let bias = BiasCorrection::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        let an = m.jacobian(&bias, &g).map_err(|e| e.to_string())?;
        let fd = fd_jacobian(&m, &bias, &g, 1e-7).map_err(|e| e.to_string())?;
        let ra = (an.a_block - fd.a_block).norm() / an.a_block.norm();
        let rb = (an.b_block - fd.b_block).norm() / an.b_block.norm();
        worst = worst.max(ra).max(rb);
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-5 && secs < 5.0, format!("1000 samples, max relative error {worst:.2e}, {secs:.2} s"))
}

struct AdjustRun {
    iterations: usize,
    converged: bool,
    last_delta: f64,
}

fn record(runs: &mut Vec<AdjustRun>, r: &satba::adjust::AdjustmentResult) {
    let h = &r.history;
    runs.push(AdjustRun {
        iterations: r.iterations,
        converged: r.converged,
        last_delta: (h[h.len() - 1] - h[h.len() - 2]).abs(),
    });
}

fn subpixel_recovery(runs: &mut Vec<AdjustRun>) -> Outcome {
    let start = Instant::now();
    let scene = gen_scene(&subpixel_scene()).map_err(|e| e.to_string())?;
    let mut graph = assemble(scene.rpcs(), scene.tracks(), &BTreeMap::new()).map_err(|e| e.to_string())?;
    let before = report(&graph).avg_xy;
    let r = adjust_loop(&mut graph, &AdjustParams::default()).map_err(|e| e.to_string())?;
    record(runs, &r);
    let after = report(&graph).avg_xy;
    let truth = truth_in_datum(&graph, &scene.true_biases).map_err(|e| e.to_string())?;
    let err = max_bias_error(&r.biases, &truth);
    let secs = start.elapsed().as_secs_f64();
    check(
        after <= 0.3 && err <= 0.2 && secs < 60.0,
        format!(
            "avg_xy {before:.3} -> {after:.3} px in {} iterations, max relative bias error {err:.3} px, {secs:.1} s",
            r.iterations
        ),
    )
}

fn gcp_mode(runs: &mut Vec<AdjustRun>) -> Outcome {
    let scene = gen_scene(&subpixel_scene()).map_err(|e| e.to_string())?;
    let gcps: BTreeMap<usize, GroundPoint> = (0..3).map(|j| (j, scene.points[j])).collect();
    let mut graph = assemble(scene.rpcs(), scene.tracks(), &gcps).map_err(|e| e.to_string())?;
    let r = adjust_loop(&mut graph, &AdjustParams::default()).map_err(|e| e.to_string())?;
    record(runs, &r);
    let err = max_bias_error(&r.biases, &scene.true_biases);
    let identical = (0..3).all(|j| {
        let (a, b) = (graph.tracks[j].ground, scene.points[j]);
        a.lat.to_bits() == b.lat.to_bits() && a.lon.to_bits() == b.lon.to_bits() && a.hei.to_bits() == b.hei.to_bits()
    });
    check(
        err <= 0.2 && identical,
        format!("max absolute bias error {err:.3} px, GCP grounds bit-identical: {identical}"),
    )
}

fn convergence(runs: &[AdjustRun]) -> Outcome {
    let ok = !runs.is_empty() && runs.iter().all(|r| r.converged && r.iterations <= 50 && r.last_delta < 0.001);
    let detail: Vec<String> =
        runs.iter().map(|r| format!("{} it, last delta {:.1e}", r.iterations, r.last_delta)).collect();
    check(ok, format!("{} runs: {}", runs.len(), detail.join("; ")))
}

fn matching_end_to_end() -> Outcome {
    let start = Instant::now();
    let cfg = SceneConfig {
        images: 2,
        points: 1,
        seed: 31,
        render: true,
        planted_corners: 200,
        views: Some(vec![(20.0, 72.0), (200.0, 68.0)]),
        biases: Some(vec![BiasCorrection::ZERO, BiasCorrection::new(10.0, 10.0)]),
        ..SceneConfig::default()
    };
    let scene = gen_scene(&cfg).map_err(|e| e.to_string())?;
    let plane = common_plane_height(&scene.models).map_err(|e| e.to_string())?;
    let inputs: Vec<_> = scene.rasters.iter().zip(&scene.models).collect();
    let gsd = common_gsd(&inputs, plane).map_err(|e| e.to_string())?;
    let left = rectify_image(&scene.rasters[0], &scene.models[0], plane, gsd).map_err(|e| e.to_string())?;
    let mut right = rectify_image(&scene.rasters[1], &scene.models[1], plane, gsd).map_err(|e| e.to_string())?;

    let params = MatchParams::default();
    let raw_right = right.clone();
    right.raster = right.raster.map_valid(|v| 2 * v + 5);

    let lf = prepare_features(&left, &params);
    let rf = prepare_features(&right, &params);
    let raw_rf = prepare_features(&raw_right, &params);
    let same_corners = raw_rf.features.iter().map(|f| f.position).eq(rf.features.iter().map(|f| f.position));
    let invariant = same_corners
        && raw_rf.features.iter().all(|f| {
            let a = mbcensus_descriptor(&raw_right.raster, &f.position, &params.census);
            let b = mbcensus_descriptor(&right.raster, &f.position, &params.census);
            match (a, b) {
                (Ok(a), Ok(b)) => a == b,
                (Err(_), Err(_)) => true,
                _ => false,
            }
        });

    let matches = match_prepared(&left, &lf, &right, &rf, PairId { left: 0, right: 1 }, &params);

    // level-2 positions of every planted dot
    let l2 = |product: &satba::rectify::Level2Product, i: usize, g: &GroundPoint| -> Option<ImagePoint> {
        let src = scene.models[i].project(&scene.true_biases[i], g).ok()?;
        let on_plane = scene.models[i].inverse_project(&BiasCorrection::ZERO, &src, plane).ok()?;
        product.geo_transform.invert(on_plane.lat, on_plane.lon)
    };
    let truth: Vec<(ImagePoint, ImagePoint)> =
        scene.planted.iter().filter_map(|g| Some((l2(&left, 0, g)?, l2(&right, 1, g)?))).collect();
    let tol = 1.5;
    let mut found = vec![false; truth.len()];
    let mut mismatches = 0;
    for c in &matches.correspondences {
        let hit =
            truth.iter().position(|(a, b)| a.distance(&c.left.position) <= tol && b.distance(&c.right.position) <= tol);
        match hit {
            Some(k) => found[k] = true,
            None => mismatches += 1,
        }
    }
    let recall = found.iter().filter(|f| **f).count() as f64 / truth.len().max(1) as f64;
    let secs = start.elapsed().as_secs_f64();
    check(
        truth.len() == 200 && recall >= 0.95 && mismatches == 0 && invariant,
        format!(
            "{} planted, {} corners left / {} right, {} correspondences, recall {:.1}%, {} mismatches, descriptors invariant: {invariant}, {secs:.1} s",
            truth.len(),
            lf.features.len(),
            rf.features.len(),
            matches.correspondences.len(),
            100.0 * recall,
            mismatches
        ),
    )
}

fn memory_bound() -> Outcome {
    let (n, m) = (50usize, 20000usize);
    let start = Instant::now();
    let cfg = SceneConfig {
        images: n,
        points: m,
        bias_range_px: 5.0,
        noise_sigma_px: 0.25,
        seed: 4,
        ..SceneConfig::default()
    };
    let scene = gen_scene(&cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tracks = scene
        .tracks()
        .into_iter()
        .map(|mut t| {
            let keep = rng.random_range(2..=6);
            while t.observations.len() > keep {
                let k = rng.random_range(0..t.observations.len());
                t.observations.remove(k);
            }
            t
        })
        .collect();
    let graph = assemble(scene.rpcs(), tracks, &BTreeMap::new()).map_err(|e| e.to_string())?;
    // warm up the thread pool outside the tracked window
    accumulate_reduced(&graph).map_err(|e| e.to_string())?;
    LARGEST.store(0, Ordering::SeqCst);
    TRACKING.store(true, Ordering::SeqCst);
    let sys = accumulate_reduced(&graph);
    TRACKING.store(false, Ordering::SeqCst);
    let sys = sys.map_err(|e| e.to_string())?;
    let largest = LARGEST.load(Ordering::SeqCst);
    let limit = (2 * n) * (2 * n) * std::mem::size_of::<f64>();
    solve_bias(&sys).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        largest <= limit && sys.n_a.nrows() == 2 * n && secs < 120.0,
        format!(
            "N={n}, M={}, largest allocation {largest} B (2N x 2N f64 = {limit} B), {secs:.1} s",
            graph.tracks.len()
        ),
    )
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_deg: f64 = 0.0;
    for _ in 0..1000 {
        let m = random_rpc(&mut rng);
        let n = NormalizedGround {
            p: rng.random_range(-1.0..1.0),
            l: rng.random_range(-1.0..1.0),
            h: rng.random_range(-1.0..1.0),
        };
        let g = m.denormalize_ground(&n);
        let p = m.project(&BiasCorrection::ZERO, &g).map_err(|e| e.to_string())?;
        let back = m.inverse_project(&BiasCorrection::ZERO, &p, g.hei).map_err(|e| e.to_string())?;
        worst_deg = worst_deg.max((back.lat - g.lat).abs()).max((back.lon - g.lon).abs());
    }
    let mut worst_px: f64 = 0.0;
    for _ in 0..20 {
        let truth = random_rpc(&mut rng);
        let sample = |planar: usize, heights: usize, inset: f64| -> Vec<(GroundPoint, ImagePoint)> {
            let bbox = satba::geo::GroundBBox {
                min_lat: truth.lat_off - (1.0 - inset) * truth.lat_scale,
                max_lat: truth.lat_off + (1.0 - inset) * truth.lat_scale,
                min_lon: truth.lon_off - (1.0 - inset) * truth.lon_scale,
                max_lon: truth.lon_off + (1.0 - inset) * truth.lon_scale,
            };
            let h = (1.0 - inset) * truth.hei_scale;
            virtual_grid(&bbox, truth.hei_off - h, truth.hei_off + h, planar, heights)
                .into_iter()
                .map(|g| (g, truth.project(&BiasCorrection::ZERO, &g).unwrap()))
                .collect()
        };
        let fitted = fit_rpc(&sample(10, 5, 0.0)).map_err(|e| e.to_string())?;
        // held-out grid interleaved with the fitting grid
        for (g, p) in sample(9, 4, 0.05) {
            let q = fitted.project(&BiasCorrection::ZERO, &g).map_err(|e| e.to_string())?;
            worst_px = worst_px.max(p.distance(&q));
        }
    }
    check(
        worst_deg < 1e-9 && worst_px < 1e-3,
        format!("inverse closure {worst_deg:.2e} deg over 1000 samples, self-fit held-out error {worst_px:.2e} px"),
    )
}

fn hash_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_satba");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
        }
    };
    run(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--images",
        "5",
        "--points",
        "50",
        "--bias",
        "10",
        "--render",
        "--planted",
        "150",
        "--seed",
        "7",
    ])?;
    let images: Vec<String> =
        (0..5).map(|i| data.join(format!("image_{i}.pgm")).to_string_lossy().into_owned()).collect();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        let mut args = vec!["--threads", "1", "pipeline", "--out", out.to_str().unwrap()];
        args.extend(images.iter().map(String::as_str));
        run(&args)?;
        outputs.push(hash_dir(&out));
    }
    let files = outputs[0].len();
    let report = outputs[0]
        .iter()
        .find(|(n, _)| n.ends_with("report.json"))
        .map(|(_, b)| String::from_utf8_lossy(b).into_owned());
    check(
        files > 0 && outputs[0] == outputs[1] && report.is_some(),
        format!("{files} output files compared, identical: {}", outputs[0] == outputs[1]),
    )
}

fn main() {
    let mut runs = Vec::new();
    let results: Vec<(&str, Outcome)> = vec![
        ("schur-equivalence", schur_equivalence()),
        ("jacobian-check", jacobian_check()),
        ("sub-pixel-recovery", subpixel_recovery(&mut runs)),
        ("gcp-mode", gcp_mode(&mut runs)),
        ("convergence", convergence(&runs)),
        ("matching-end-to-end", matching_end_to_end()),
        ("memory-bound", memory_bound()),
        ("round-trips", round_trips()),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
