use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_satba");

fn satba(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> Vec<PathBuf> {
    let mut args = vec!["synth", "--out", s(dir)];
    args.extend_from_slice(extra);
    let o = satba(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let n = extra.iter().position(|a| *a == "--images").map(|i| extra[i + 1].parse().unwrap()).unwrap_or(5);
    (0..n).map(|i| dir.join(format!("image_{i}.pgm"))).collect()
}

fn rendered(dir: &Path, images: usize) -> Vec<PathBuf> {
    let n = images.to_string();
    synth(
        dir,
        &[
            "--images",
            &n,
            "--points",
            "20",
            "--bias",
            "5",
            "--render",
            "--planted",
            "60",
            "--size",
            "200",
            "--seed",
            "3",
        ],
    )
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(satba(&["--help"]).status.code(), Some(0));
    assert_eq!(satba(&["--version"]).status.code(), Some(0));
    assert!(stdout(&satba(&["pipeline", "--help"])).contains("--stop-after"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(satba(&[]).status.code(), Some(1));
    assert_eq!(satba(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(satba(&["adjust", "--out", "x"]).status.code(), Some(1));
    let o = satba(&["--max-iter", "many", "report", "."]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("max_iter"));
}

#[test]
fn missing_rpc_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let images = synth(tmp.path(), &["--images", "2", "--points", "5", "--render", "--size", "64"]);
    let rpc = tmp.path().join("image_1.rpc");
    std::fs::remove_file(&rpc).unwrap();
    let out = tmp.path().join("l2");
    let o = satba(&["rectify", "--out", s(&out), s(&images[0]), s(&images[1])]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("image_1.rpc"), "{}", stderr(&o));
}

#[test]
fn rectify_five_images_at_common_gsd() {
    let tmp = tempfile::tempdir().unwrap();
    let images = synth(tmp.path(), &["--images", "5", "--points", "5", "--render", "--size", "64"]);
    let out = tmp.path().join("l2");
    let mut args = vec!["rectify", "--out", s(&out)];
    args.extend(images.iter().map(|p| s(p)));
    let o = satba(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let gsds: Vec<String> = (0..5)
        .map(|i| {
            let text = std::fs::read_to_string(out.join(format!("image_{i}.l2"))).unwrap();
            assert!(text.contains(&format!("# source = image_{i}.pgm")));
            assert!(text.contains("# ratio_threshold = 0.6"));
            text.lines().find(|l| l.starts_with("gsd:")).unwrap().to_string()
        })
        .collect();
    assert!(gsds.windows(2).all(|w| w[0] == w[1]), "{gsds:?}");
}

#[test]
fn disjoint_products_give_no_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let images = synth(tmp.path(), &["--images", "2", "--points", "5", "--render", "--size", "64"]);
    let out = tmp.path().join("l2");
    assert!(satba(&["rectify", "--out", s(&out), s(&images[0]), s(&images[1])]).status.success());
    let sidecar = out.join("image_1.l2");
    let text = std::fs::read_to_string(&sidecar).unwrap();
    let moved: String = text
        .lines()
        .map(|l| match l.strip_prefix("footprint:") {
            Some(v) => {
                let f: Vec<f64> = v.split_whitespace().map(|x| x.parse().unwrap()).collect();
                format!("footprint: {} {} {} {}\n", f[0] + 1.0, f[1] + 1.0, f[2], f[3])
            }
            None => format!("{l}\n"),
        })
        .collect();
    std::fs::write(&sidecar, moved).unwrap();
    let m = tmp.path().join("match");
    let o = satba(&["match", "--out", s(&m), s(&out.join("image_0.pgm")), s(&out.join("image_1.pgm"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("0 pairs, 0 correspondences, 0 tracks"), "{}", stdout(&o));
    let tracks = std::fs::read_to_string(m.join("tracks.txt")).unwrap();
    assert!(tracks.lines().all(|l| l.starts_with('#')));
}

#[test]
fn malformed_sidecar_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let images = synth(tmp.path(), &["--images", "2", "--points", "5", "--render", "--size", "64"]);
    let out = tmp.path().join("l2");
    assert!(satba(&["rectify", "--out", s(&out), s(&images[0]), s(&images[1])]).status.success());
    let sidecar = out.join("image_0.l2");
    let text = std::fs::read_to_string(&sidecar).unwrap().replace("plane_height: 5e1", "plane_height: fifty");
    std::fs::write(&sidecar, text).unwrap();
    let o =
        satba(&["match", "--out", s(&tmp.path().join("m")), s(&out.join("image_0.pgm")), s(&out.join("image_1.pgm"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("plane_height"), "{}", stderr(&o));
}

fn adjust_args(dir: &Path, out: &Path, rpcs: &[String]) -> Vec<String> {
    let mut args: Vec<String> =
        ["adjust", "--out", s(out), "--tracks", s(&dir.join("tracks.txt"))].map(String::from).into();
    args.extend(rpcs.iter().cloned());
    args
}

fn satba_owned(args: &[String]) -> Output {
    satba(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn rpc_paths(dir: &Path, n: usize) -> Vec<String> {
    (0..n).map(|i| dir.join(format!("image_{i}.rpc")).to_string_lossy().into_owned()).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn zero_bias_adjust_reports_zero_error_and_gauge_note() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--images", "3", "--points", "40", "--bias", "0", "--noise", "0"]);
    let out = tmp.path().join("adj");
    let rpcs = rpc_paths(tmp.path(), 3);
    let o = satba_owned(&adjust_args(tmp.path(), &out, &rpcs));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("free-network mode"));
    let r = json(&out.join("report.json"));
    assert_eq!(r["before"]["avg_xy"].as_f64(), Some(0.0));
    assert_eq!(r["after"]["avg_xy"].as_f64(), Some(0.0));
    assert_eq!(r["config"]["mode"], "free-network");
    let biases = std::fs::read_to_string(out.join("biases.txt")).unwrap();
    assert_eq!(biases.lines().filter(|l| !l.starts_with('#')).count(), 3);
    assert!(biases.contains("# convergence_px = 0.001"));
}

#[test]
fn gcp_adjust_recovers_absolute_biases() {
    let tmp = tempfile::tempdir().unwrap();
    synth(
        tmp.path(),
        &["--images", "4", "--points", "200", "--bias", "20", "--noise", "0.1", "--gcps", "3", "--seed", "9"],
    );
    let out = tmp.path().join("adj");
    let rpcs = rpc_paths(tmp.path(), 4);
    let gcps = tmp.path().join("gcps.txt");
    let mut args = adjust_args(tmp.path(), &out, &rpcs);
    args.extend(["--gcps".to_string(), s(&gcps).to_string()]);
    let o = satba_owned(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stdout(&o).contains("free-network"));
    let truth = satba::synth::read_truth(tmp.path().join("truth.txt")).unwrap();
    let r = json(&out.join("report.json"));
    for (b, t) in r["biases"].as_array().unwrap().iter().zip(&truth.biases) {
        let (dr, dc) = (b[0].as_f64().unwrap(), b[1].as_f64().unwrap());
        assert!((dr - t.d_row).abs() < 0.2 && (dc - t.d_col).abs() < 0.2, "{dr} {dc} vs {t:?}");
    }
    assert!(r["after"]["avg_xy"].as_f64().unwrap() < 0.3);
}

#[test]
fn config_file_and_flags_override_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--images", "3", "--points", "40", "--bias", "3", "--noise", "0"]);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# test\nmax_iter = 7\nconvergence_px = 0.01\n").unwrap();
    let out = tmp.path().join("adj");
    let rpcs = rpc_paths(tmp.path(), 3);
    let mut args: Vec<String> = ["--config", s(&cfg), "--convergence-px", "0.02"].map(String::from).into();
    args.extend(adjust_args(tmp.path(), &out, &rpcs));
    let o = satba_owned(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&out.join("report.json"));
    assert_eq!(r["config"]["max_iter"], "7");
    assert_eq!(r["config"]["convergence_px"], "0.02");

    std::fs::write(&cfg, "max_iterations = 7\n").unwrap();
    let mut args: Vec<String> = ["--config", s(&cfg)].map(String::from).into();
    args.extend(adjust_args(tmp.path(), &out, &rpcs));
    let o = satba_owned(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("max_iterations"));
}

#[test]
fn adjust_without_tracks_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--images", "2", "--points", "5"]);
    std::fs::write(tmp.path().join("tracks.txt"), "# empty\n").unwrap();
    let rpcs = rpc_paths(tmp.path(), 2);
    let o = satba_owned(&adjust_args(tmp.path(), &tmp.path().join("adj"), &rpcs));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn resumed_pipeline_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let images = rendered(&tmp.path().join("data"), 3);
    let run = |out: &Path, extra: &[&str]| {
        let mut args = vec!["--threads", "1", "pipeline", "--out", s(out)];
        args.extend_from_slice(extra);
        args.extend(images.iter().map(|p| s(p)));
        let o = satba(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        o
    };
    let full = tmp.path().join("full");
    let o = run(&full, &[]);
    assert!(stdout(&o).contains("After"));

    let resumed = tmp.path().join("resumed");
    run(&resumed, &["--stop-after", "match"]);
    assert!(resumed.join("match/tracks.txt").exists());
    assert!(!resumed.join("adjust").exists());
    let before = std::fs::read(resumed.join("match/tracks.txt")).unwrap();
    run(&resumed, &[]);
    assert_eq!(std::fs::read(resumed.join("match/tracks.txt")).unwrap(), before);
    for f in ["report.json", "report.txt", "biases.txt"] {
        assert_eq!(
            std::fs::read(full.join("adjust").join(f)).unwrap(),
            std::fs::read(resumed.join("adjust").join(f)).unwrap(),
            "{f}"
        );
    }

    let o = satba(&["report", s(&full.join("adjust"))]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("Before") && stdout(&o).contains("iterations"));
}

#[test]
fn changed_config_reruns_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let images = rendered(&tmp.path().join("data"), 2);
    let out = tmp.path().join("run");
    let mut args = vec!["pipeline", "--out", s(&out), "--stop-after", "rectify"];
    args.extend(images.iter().map(|p| s(p)));
    assert!(satba(&args).status.success());
    let marker = out.join("level2/stage.done");
    assert!(std::fs::read_to_string(&marker).unwrap().contains("# gsd = 0"));
    let mut args2 = vec!["--gsd", "0.6"];
    args2.extend(args.iter().copied());
    assert!(satba(&args2).status.success());
    assert!(std::fs::read_to_string(&marker).unwrap().contains("# gsd = 0.6"));
    let side = std::fs::read_to_string(out.join("level2/image_0.l2")).unwrap();
    assert!(side.contains("gsd: 6e-1"), "{side}");
}
