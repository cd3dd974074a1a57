//! End-to-end runs of the `ccnn` binary.

use std::path::Path;
use std::process::Command;

use cassi_ccnn::ccnn::{build_patch_dataset, ModelFile};
use cassi_ccnn::coded_aperture::load_apertures;
use cassi_ccnn::datacube::{load_cube, load_labels};
use cassi_ccnn::evalbench::{fit_method, predict_method, run_split, ModelConfig, Report};
use cassi_ccnn::forward_model::load_measurements;

fn ccnn(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ccnn")).current_dir(dir).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let (code, stdout, stderr) = ccnn(dir, args);
    assert_eq!(code, 0, "{args:?} failed: {stderr}");
    stdout
}

fn small_scene(dir: &Path) {
    ok(dir, &["synth", "--n", "14", "--m", "14", "--l", "4", "--classes", "3", "--seed", "2", "--out", "s.hsc", "--labels", "s.pgm"]);
}

#[test]
fn synth_writes_loadable_scene() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--n", "48", "--m", "48", "--l", "8", "--classes", "5", "--seed", "3", "--out", "scene.hsc", "--labels", "gt.pgm"]);
    let cube = load_cube(dir.path().join("scene.hsc")).unwrap();
    let labels = load_labels(dir.path().join("gt.pgm")).unwrap();
    assert_eq!((cube.n(), cube.m(), cube.bands()), (48, 48, 8));
    assert_eq!(labels.distinct_classes().len(), 5);
    assert!(dir.path().join("run.json").exists());
}

#[test]
fn compare_config_lists_requested_methods() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "synth": {"n": 14, "m": 14, "l": 4, "classes": 3, "seed": 5},
        "k": 2, "b": 2, "p": 3,
        "train": {"epochs": 1, "batch": 8},
        "methods": ["ccnn", "rand-compress-3dcnn"],
        "out_dir": "cmp",
        "seed": 4
    });
    std::fs::write(dir.path().join("cmp.json"), config.to_string()).unwrap();
    ok(dir.path(), &["compare", "--config", "cmp.json"]);
    let first = std::fs::read_to_string(dir.path().join("cmp/compare.csv")).unwrap();
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("ccnn,") && lines[2].starts_with("rand-compress-3dcnn,"));
    assert!(dir.path().join("cmp/run.json").exists());

    ok(dir.path(), &["compare", "--config", "cmp.json", "--out-dir", "again"]);
    let second = std::fs::read_to_string(dir.path().join("again/compare.csv")).unwrap();
    let strip = |s: &str| s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    assert_eq!(strip(&first), strip(&second));
}

#[test]
fn saved_model_predicts_like_the_trained_one() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path());
    let common = ["--scene", "s.hsc", "--labels", "s.pgm", "--k", "2", "--b", "2", "--p", "3", "--epochs", "2", "--batch", "8", "--seed", "6"];
    let mut train = vec!["train", "--method", "ccnn", "--out", "m/model.ccnn.json"];
    train.extend(common);
    ok(dir.path(), &train);
    ok(dir.path(), &["eval", "--model", "m/model.ccnn.json", "--scene", "s.hsc", "--labels", "s.pgm", "--out", "m/report.json", "--map", "m/map.ppm"]);

    let report: Report = serde_json::from_slice(&std::fs::read(dir.path().join("m/report.json")).unwrap()).unwrap();
    let model = ModelFile::load(dir.path().join("m/model.ccnn.json")).unwrap();
    let (cfg, loaded) = ModelConfig::from_model_file(&model).unwrap();
    let cube = load_cube(dir.path().join("s.hsc")).unwrap().normalized();
    let labels = load_labels(dir.path().join("s.pgm")).unwrap();
    let split = run_split(&labels, &cfg.settings, 0).unwrap();
    let (train_set, test_set) = build_patch_dataset(&cube, &labels, &split, 3).unwrap();
    let fresh = fit_method(cfg.method, &cube, &train_set, labels.classes(), &cfg.settings, 0).unwrap();
    let a = predict_method(&fresh, &cube, &test_set, cfg.settings.noise).unwrap();
    let b = predict_method(&loaded, &cube, &test_set, cfg.settings.noise).unwrap();
    assert_eq!(a, b);
    let oa = a.iter().zip(&test_set).filter(|(p, s)| **p == s.label).count() as f64 / test_set.len() as f64;
    assert!((report.oa - oa).abs() < 1e-12);
    assert!(std::fs::read(dir.path().join("m/map.ppm")).unwrap().starts_with(b"P6\n14 14\n255\n"));
}

#[test]
fn aperture_and_simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path());
    ok(dir.path(), &["aperture", "--kind", "random", "--k", "2", "--n", "14", "--m", "14", "--l", "4", "--seed", "1", "--out", "a.json"]);
    let set = load_apertures(dir.path().join("a.json")).unwrap();
    assert_eq!(set.snapshots(), 2);
    ok(dir.path(), &["simulate", "--scene", "s.hsc", "--apertures", "a.json", "--out", "y.msc", "--matrix", "h.txt"]);
    let y = load_measurements(dir.path().join("y.msc")).unwrap();
    assert_eq!((y.n(), y.m(), y.snapshots()), (14, 14, 2));
    let triplets = std::fs::read_to_string(dir.path().join("h.txt")).unwrap();
    assert_eq!(triplets.lines().count(), 2 * 14 * 14 * 4);
}

#[test]
fn invalid_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = ccnn(dir.path(), &["compare", "--scene", "missing.hsc", "--labels", "missing.pgm"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("--scene"), "{stderr}");
    let (code, _, _) = ccnn(dir.path(), &["train", "--p", "4"]);
    assert_eq!(code, 2);
    let (code, _, _) = ccnn(dir.path(), &["synth", "--bogus"]);
    assert_eq!(code, 2);
}
