use std::path::Path;
use std::process::{Command, Output};

use aeromap::pipeline::{RunReport, REPORT_FILE};
use aeromap::synth::SceneSpec;

fn map(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_map"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_spec(dir: &Path) -> std::path::PathBuf {
    let mut spec = SceneSpec::default();
    spec.width = 40.0;
    spec.height = 30.0;
    let path = dir.join("scene.toml");
    std::fs::write(&path, spec.to_toml()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_run_stats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let data = dir.path().join("data");
    let o = map(&["synth", "--spec", s(&spec), "--out", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("truth").join("poses.txt").exists());

    let out = dir.path().join("out");
    let o = map(&[
        "run", "--mode", "visual", "--input", s(&data.join("images")), "--output", s(&out),
        "--gsd", "0.5", "--pose-provider", "synthetic", "--snapshot-every", "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("mosaic.png").exists());
    assert!(out.join("mosaic.pgw").exists());
    let report = RunReport::read(&out.join(REPORT_FILE)).unwrap();
    assert!(report.frames_fused > 0);

    let o = map(&["stats", s(&out.join(REPORT_FILE)), "--warmup", "0"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for stage in ["ingest", "pose", "surface", "rectify", "mosaic"] {
        assert!(text.contains(stage), "{text}");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let o = map(&["run", "--mode", "sideways", "--input", d, "--output", d]);
    assert_eq!(o.status.code(), Some(2));
    let o = map(&["run", "--mode", "gnss", "--input", d, "--output", d, "--gsd", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    // no camera calibration in the input directory
    let o = map(&["run", "--mode", "gnss", "--input", d, "--output", d]);
    assert_eq!(o.status.code(), Some(2));
    let o = map(&["run", "--mode", "gnss"]);
    assert_eq!(o.status.code(), Some(2));
    let o = map(&["stats", s(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gnss_mode_without_provider() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let data = dir.path().join("data");
    assert!(map(&["synth", "--spec", s(&spec), "--out", s(&data)]).status.success());
    let out = dir.path().join("out");
    let o = map(&[
        "run", "--mode", "gnss", "--input", s(&data.join("images")), "--output", s(&out), "--gsd", "0.5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("elevation.asc").exists());
    assert!(out.join("variance.asc").exists());
}
