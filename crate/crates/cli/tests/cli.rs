use std::path::Path;
use std::process::{Command, Output};

use fswap_core::{read_tensor, write_tensor, FlowField, SweepTable};
use serde_json::Value;

const SMALL: &[&str] = &["--frames", "4", "--channels", "2", "--height", "8", "--width", "8"];
const FAST: &[&str] = &["--steps", "6", "--t1", "2", "--window", "3", "--attention-dim", "4"];

fn fswap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fswap")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = fswap(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_json(args: &[&str]) -> (i32, Value) {
    let out = fswap(args);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    (out.status.code().unwrap(), err["error"].clone())
}

fn synth(dir: &Path) {
    let mut args = vec!["synth", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    ok_json(&args);
}

#[test]
fn synth_writes_fixture_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s");
    synth(&dir);
    let video = read_tensor(dir.join("video.tnsr")).unwrap();
    assert_eq!(video.shape().dims(), [4, 2, 8, 8]);
    assert_eq!(read_tensor(dir.join("src.tnsr")).unwrap().shape().dims(), [1, 2, 8, 8]);
    assert_eq!(read_tensor(dir.join("flow.tnsr")).unwrap().shape().dims(), [3, 2, 8, 8]);
    for b in 0..4 {
        let pgm = std::fs::read(dir.join(format!("frames/frame_{b:04}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
    }
}

#[test]
fn metrics_on_synthetic_video() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s");
    synth(&dir);
    let p = |f: &str| dir.join(f).to_str().unwrap().to_string();
    let (video, flow, src) = (p("video.tnsr"), p("flow.tnsr"), p("src.tnsr"));
    let report = ok_json(&[
        "metrics", "--video", &video, "--flow", &flow, "--target", &video, "--src", &src,
    ]);
    assert_eq!(report["psnr_to_target"], 99.0);
    let fi = report["flicker_index"].as_f64().unwrap();
    // Independent noise of std 0.05 per frame on top of exact motion.
    assert!(fi > 0.0 && fi < 0.05, "{fi}");
    let sim = report["low_band_similarity"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&sim));
}

#[test]
fn invert_exact_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s");
    synth(&dir);
    let p = |f: &str| dir.join(f).to_str().unwrap().to_string();
    let noise = tmp.path().join("noise.tnsr");
    let report = ok_json(&[
        "invert",
        "--input",
        &p("video.tnsr"),
        "--cond",
        &p("tar.tnsr"),
        "--output",
        noise.to_str().unwrap(),
        "--mode",
        "exact",
        "--steps",
        "20",
        "--roundtrip",
    ]);
    assert!(report["roundtrip_max_error"].as_f64().unwrap() <= 1e-4);
    assert_eq!(read_tensor(&noise).unwrap().shape().dims(), [4, 2, 8, 8]);
}

#[test]
fn swap_from_directory_writes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s");
    synth(&dir);
    let out = tmp.path().join("out.tnsr");
    let frames = tmp.path().join("frames");
    let mut args = vec![
        "swap",
        "--input-dir",
        dir.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--frames-dir",
        frames.to_str().unwrap(),
        "--rho",
        "0.5",
    ];
    args.extend_from_slice(FAST);
    let report = ok_json(&args);
    assert_eq!(report["config"]["rho"], 0.5);
    assert_eq!(report["config"]["steps"], 6);
    assert_eq!(report["windows"].as_array().unwrap().len(), 2);
    assert!(report["ground_truth_flicker_index"].is_f64());
    assert_eq!(read_tensor(&out).unwrap().shape().dims(), [4, 2, 8, 8]);
    assert_eq!(std::fs::read_dir(&frames).unwrap().count(), 4);
}

#[test]
fn config_file_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"rho": 0.3, "alpha": 0.6, "window": 4, "denoiser": {"gamma": 0.05}}"#,
    )
    .unwrap();
    let mut args = vec!["swap", "--config", cfg.to_str().unwrap(), "--alpha", "0.9"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--steps", "6", "--t1", "2", "--attention-dim", "4"]);
    let c = ok_json(&args)["config"].clone();
    assert_eq!(c["rho"], 0.3);
    assert_eq!(c["alpha"], 0.9);
    assert_eq!(c["window"], 4);
    assert_eq!(c["denoiser"]["gamma"], 0.05);
}

#[test]
fn swap_with_flow_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s");
    synth(&dir);
    let flow = tmp.path().join("zero.tnsr");
    write_tensor(&flow, FlowField::zeros(3, 8, 8).unwrap().as_tensor().unwrap()).unwrap();
    let spec = format!("file:{}", flow.display());
    let mut args = vec!["swap", "--input-dir", dir.to_str().unwrap(), "--flow", &spec];
    args.extend_from_slice(FAST);
    let report = ok_json(&args);
    assert_eq!(report["config"]["flow"]["kind"], "file");

    let short = tmp.path().join("short.tnsr");
    write_tensor(&short, FlowField::zeros(2, 8, 8).unwrap().as_tensor().unwrap()).unwrap();
    let spec = format!("file:{}", short.display());
    let mut args = vec!["swap", "--input-dir", dir.to_str().unwrap(), "--flow", &spec];
    args.extend_from_slice(FAST);
    let (code, err) = error_json(&args);
    assert_eq!(code, 1);
    assert_eq!(err["kind"], "shape_mismatch");
}

#[test]
fn sweep_emits_csv_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("sweep.csv");
    let mut args = vec![
        "sweep",
        "--rho-grid",
        "0,0.8",
        "--alpha-grid",
        "0.8,1",
        "--t1-grid",
        "2,9",
        "--output",
        csv.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--steps", "6", "--window", "3", "--attention-dim", "4"]);
    let report = ok_json(&args);
    assert_eq!(report["rows"], 8);
    let table = SweepTable::read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 8);
    let failed: Vec<_> = table.rows.iter().filter(|r| r.outcome.is_err()).map(|r| r.t1).collect();
    assert_eq!(failed, vec![9; 4]);
}

#[test]
fn errors_are_json_on_stderr() {
    let (code, err) = error_json(&["swap", "--rho", "1.5"]);
    assert_eq!(code, 1);
    assert_eq!(err["kind"], "invalid_parameter");

    let (code, err) = error_json(&["metrics", "--video", "/definitely/missing.tnsr"]);
    assert_eq!(code, 1);
    assert_eq!(err["kind"], "io");

    let (code, err) = error_json(&["swap", "--no-such-flag"]);
    assert_eq!(code, 2);
    assert_eq!(err["kind"], "usage");

    let (code, err) = error_json(&["swap", "--fsai-axis", "diagonal"]);
    assert_eq!(code, 2);
    assert!(err["message"].as_str().unwrap().contains("diagonal"));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"rho": 0.5, "unknown": true}"#).unwrap();
    let (_, err) = error_json(&["swap", "--config", bad.to_str().unwrap()]);
    assert_eq!(err["kind"], "config");

    let garbage = tmp.path().join("garbage.tnsr");
    std::fs::write(&garbage, b"NOPE....").unwrap();
    let (_, err) = error_json(&["metrics", "--video", garbage.to_str().unwrap()]);
    assert_eq!(err["kind"], "bad_magic");
}

#[test]
fn help_exits_cleanly() {
    let out = fswap(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("sweep"));
}
