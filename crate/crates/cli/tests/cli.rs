use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lrcnn_core::io::{load_model, normalize_patch, read_pgm};
use lrcnn_core::network::{forward, BACKGROUND_CLASS};
use tempfile::TempDir;

fn lrcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrcnn"))
        .args(args)
        .env("LRCNN_THREADS", "1")
        .output()
        .expect("spawn lrcnn")
}

fn ok(args: &[&str]) -> String {
    let out = lrcnn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Generates a small train/test pair and trains one epoch.
fn trained(dir: &TempDir) -> (PathBuf, PathBuf, PathBuf) {
    let (train, test, model) = (p(dir, "train.ds"), p(dir, "test.ds"), p(dir, "model.lrcn"));
    ok(&["gen-data", "--seed", "1", "--per-class", "2", "--out", s(&train)]);
    ok(&["gen-data", "--seed", "2", "--per-class", "1", "--split", "test", "--out", s(&test)]);
    ok(&["train", "--data", s(&train), "--heldout", s(&test), "--out", s(&model), "--epochs", "1", "--seed", "3"]);
    (train, test, model)
}

#[test]
fn gen_data_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (p(&dir, "a.ds"), p(&dir, "b.ds"), p(&dir, "c.ds"));
    ok(&["gen-data", "--seed", "5", "--per-class", "2", "--out", s(&a)]);
    ok(&["gen-data", "--seed", "5", "--per-class", "2", "--out", s(&b)]);
    ok(&["gen-data", "--seed", "6", "--per-class", "2", "--out", s(&c)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn inspect_reports_layer_costs() {
    let dir = TempDir::new().unwrap();
    let (_, _, model) = trained(&dir);
    let out = ok(&["inspect", "--model", s(&model)]);
    assert!(out.contains("31850496"), "{out}");
    assert!(out.contains("MACs 35957248"), "{out}");
}

#[test]
fn pipeline_is_reproducible_and_full_rank_is_exact() {
    let dir = TempDir::new().unwrap();
    let (train, test, model) = trained(&dir);
    let other = p(&dir, "again.lrcn");
    ok(&["train", "--data", s(&train), "--heldout", s(&test), "--out", s(&other), "--epochs", "1", "--seed", "3"]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&other).unwrap());

    let base = ok(&["eval", "--model", s(&model), "--data", s(&test)]);
    let full = p(&dir, "full.lrcn");
    ok(&["approximate", "--model", s(&model), "--layer", "conv2,conv3", "--scheme", "2", "--capacity", "432,512", "--out", s(&full)]);
    assert_eq!(base, ok(&["eval", "--model", s(&full), "--data", s(&test)]));

    let mut runs = Vec::new();
    for name in ["d1.lrcn", "d2.lrcn"] {
        let out = p(&dir, name);
        ok(&[
            "approximate", "--model", s(&model), "--layer", "conv2", "--scheme", "2", "--capacity", "8",
            "--optimizer", "data-ref", "--data", s(&train), "--samples", "32", "--recon-epochs", "2",
            "--out", s(&out),
        ]);
        runs.push((fs::read(&out).unwrap(), ok(&["eval", "--model", s(&out), "--data", s(&test)])));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn edge_layers_need_force() {
    let dir = TempDir::new().unwrap();
    let (_, _, model) = trained(&dir);
    let out = p(&dir, "edge.lrcn");
    let refused = lrcnn(&["approximate", "--model", s(&model), "--layer", "conv1", "--scheme", "2", "--capacity", "3", "--out", s(&out)]);
    assert!(!refused.status.success());
    assert!(!out.exists());
    ok(&["approximate", "--model", s(&model), "--layer", "conv1", "--scheme", "2", "--capacity", "3", "--force", "--out", s(&out)]);
    assert!(out.exists());
}

#[test]
fn curve_writes_csv() {
    let dir = TempDir::new().unwrap();
    let (train, test, model) = trained(&dir);
    let csv = p(&dir, "curve.csv");
    let printed = ok(&[
        "curve", "--model", s(&model), "--layer", "conv2", "--scheme", "2", "--capacities", "4,8",
        "--data", s(&train), "--test", s(&test), "--runs", "5", "--warmup", "1", "--out", s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(printed, text);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "layer,scheme,capacity,optimizer,theoretical_speedup,measured_speedup,rel_error,accuracy,accuracy_drop_pp");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("conv2,scheme2,4,filter,"));
}

#[test]
fn detmap_on_one_window_matches_forward() {
    let dir = TempDir::new().unwrap();
    let (_, _, model) = trained(&dir);
    let img = p(&dir, "patch.pgm");
    let mut bytes = b"P5\n# test patch\n24 24\n255\n".to_vec();
    bytes.extend((0..24 * 24).map(|i| ((i * 37) % 251) as u8));
    fs::write(&img, bytes).unwrap();
    let csv = p(&dir, "map.csv");
    ok(&["detmap", "--model", s(&model), "--image", s(&img), "--out", s(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1);
    let got: f64 = text.trim().parse().unwrap();

    let net = load_model(&model).unwrap();
    let x = read_pgm(&img).unwrap();
    let (c, h, w) = x.shape();
    let mut data = x.into_data();
    normalize_patch(&mut data);
    let x = lrcnn_core::tensor::FeatureMap::new(c, h, w, data).unwrap();
    let probs = forward(&net, &x).unwrap().probabilities;
    let want = probs.iter().enumerate().filter(|&(i, _)| i != BACKGROUND_CLASS).map(|(_, &v)| v).fold(f32::MIN, f32::max);
    assert!((got - want as f64).abs() <= 1e-5 * want.abs().max(1e-3) as f64, "{got} vs {want}");
}

#[test]
fn errors_exit_nonzero_with_one_line() {
    let dir = TempDir::new().unwrap();
    let out = lrcnn(&["eval", "--model", s(&p(&dir, "missing.lrcn")), "--data", s(&p(&dir, "missing.ds"))]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));

    let bogus = p(&dir, "bogus.lrcn");
    fs::write(&bogus, b"not a model").unwrap();
    let out = lrcnn(&["inspect", "--model", s(&bogus)]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: "));
}
