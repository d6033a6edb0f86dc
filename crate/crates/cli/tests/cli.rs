use std::path::Path;
use std::process::{Command, Output};

use swrc_core::io;

const SMALL: &str = r#"
[schedule]
n_train_sections = 3
n_test_sections = 2
section_len_steps = 160

[readout]
transient_steps = 40

[experiment]
arrangements = ["grid", "random"]
n_o = [4, 16]
repeats = 1
classify_n_o = 16
relax_max_steps = 200
snapshot_steps = [0, 2]
"#;

fn swrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swrc")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sweep_writes_parseable_reports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("s1");
    let b = dir.path().join("s2");
    for out in [&a, &b] {
        let o = swrc(&["sweep", "--profile", "fast", "--config", &cfg, "--seed", "3", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (records, aggregates) = io::load_report(&a).unwrap();
    assert_eq!(records.len(), 4);
    assert_eq!(aggregates.len(), 4);
    assert!(a.join("config.resolved").exists());
    assert_eq!(std::fs::read(a.join("records.csv")).unwrap(), std::fs::read(b.join("records.csv")).unwrap());
}

#[test]
fn classify_then_render_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("f1");
    let o = swrc(&["classify", "--profile", "fast", "--config", &cfg, "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("correct rate"), "{stdout}");
    let img = out.join("again.ppm");
    let o = swrc(&["render", "--weights", s(&out.join("weights.csv")), "--out", s(&img)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 16 grid electrodes span a sub-square of the 80-cell readout region
    let rendered = image::open(&img).unwrap();
    let weights = io::read_weights(&out.join("weights.csv")).unwrap();
    let span = weights.iter().map(|w| w.ix).max().unwrap() - weights.iter().map(|w| w.ix).min().unwrap() + 1;
    assert_eq!((rendered.width() as usize, rendered.height() as usize), (span, span));
}

#[test]
fn render_full_readout_weights_is_160_square() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("weights.csv");
    let mut text = String::from("cell,ix,iy,weight\n");
    for iy in 30..190 {
        for ix in 30..190 {
            let w = ((ix as f64 - 110.0) * 0.05).sin() * ((iy as f64 - 110.0) * 0.03).cos();
            text.push_str(&format!("{},{ix},{iy},{w}\n", iy * 220 + ix));
        }
    }
    std::fs::write(&csv, text).unwrap();
    let o = swrc(&["render", "--weights", s(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let img = image::open(dir.path().join("weights.ppm")).unwrap();
    assert_eq!((img.width(), img.height()), (160, 160));
    let head = std::fs::read(dir.path().join("weights.ppm")).unwrap();
    assert_eq!(&head[..2], b"P6");
}

#[test]
fn simulate_writes_frames_that_render() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("sim");
    let o = swrc(&["simulate", "--profile", "fast", "--config", &cfg, "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bin = out.join("snapshots/frame_000002.spnx");
    let frames = io::read_snapshots(&bin).unwrap();
    assert_eq!((frames[0].nx, frames[0].ny, frames[0].frame_index), (110, 110, 2));
    let img = dir.path().join("f2.ppm");
    let o = swrc(&["render", "--snapshot", s(&bin), "--out", s(&img)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(image::open(&img).unwrap().width(), 110);
    assert!(dir.path().join("f2.csv").exists());
}

#[test]
fn invalid_configuration_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    for text in ["[schedule]\nn_train_sections = -1\n", "[material]\nms = 3\n", "[schedule\n", "[integrator]\nsubsteps = 1\n"] {
        std::fs::write(&bad, text).unwrap();
        let o = swrc(&["classify", "--config", s(&bad), "--out", s(&dir.path().join("x"))]);
        assert_eq!(o.status.code(), Some(1), "{text}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = swrc(&["sweep", "--profile", "huge"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_key_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[geometry]\n\ncell_size = 10\n").unwrap();
    let o = swrc(&["sweep", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cell_size") && err.contains("line 3"), "{err}");
}

#[test]
fn runtime_failure_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = swrc(&["render", "--weights", s(&dir.path().join("missing.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    let junk = dir.path().join("junk.spnx");
    std::fs::write(&junk, b"not a snapshot").unwrap();
    let o = swrc(&["render", "--snapshot", s(&junk)]);
    assert_eq!(o.status.code(), Some(2));
}
