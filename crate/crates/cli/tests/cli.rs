//! End-to-end behavior of the `qmap` binary on small inputs.

use std::path::Path;
use std::process::{Command, Output};

use qmap_core::image::{load_image, save_image, Image};

fn qmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmap"))
        .args(args)
        .env_remove("QMAP_CACHE")
        .output()
        .expect("spawn qmap")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn texture(path: &Path) {
    let img = Image::from_fn(64, 64, 3, |y, x, c| ((y * 7 + x * 3 + c * 11) % 256) as f64 / 255.0);
    save_image(&img, path).unwrap();
}

const TINY: &[&str] = &[
    "--method", "fsim_gm",
    "--set", "synth.bases=5",
    "--set", "synth.size=160",
    "--set", "gen.channels=4,8",
    "--set", "gen.patch=32",
    "--set", "gen.stride=32",
    "--set", "gen.epochs=1",
    "--set", "pool.channels=4,4,4,4,4",
    "--set", "pool.fc=8",
    "--set", "pool.patch=32",
    "--set", "pool.stride=32",
    "--set", "pool.epochs=1",
];

fn tiny(out: &Path, extra: &[&str], stage: &str) -> Output {
    let mut args = vec!["--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    args.push(stage);
    qmap(&args)
}

#[test]
fn dry_run_prints_plan_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = qmap(&["--dry-run", "--out", out.to_str().unwrap(), "--seed", "11", "train-gen"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("seed=11"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("plan: write") && l.contains("gen_")), "{text}");
    assert!(!out.exists());
}

#[test]
fn identical_pair_scores_one_and_map_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    texture(&img);
    let out = dir.path().join("run");
    let o = qmap(&["--out", out.to_str().unwrap(), "--method", "ssim", "--method", "fsim_gm", "map", img.to_str().unwrap(), img.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.matches("average 1.000000").count(), 2, "{text}");
    for method in ["ssim", "fsim_gm"] {
        let map = load_image(out.join("map").join(format!("a_{method}.png"))).unwrap();
        assert!(map.height() > 0 && map.height() <= 64);
        assert!(map.data().iter().all(|&v| v == 1.0));
    }
    assert!(out.join("map/summary.jsonl").exists());
    assert!(out.join("map/config.kv").exists());
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.png");
    let o = qmap(&["--out", dir.path().to_str().unwrap(), "map", missing.to_str().unwrap(), missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere.png"), "{}", stderr(&o));
}

#[test]
fn invalid_settings_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = qmap(&["--dry-run", "--out", out, "--set", "gen.colour=3", "synth"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("gen.colour"), "{}", stderr(&o));
    let o = qmap(&["--out", out, "--set", "gen.patch=48", "--set", "gen.stride=56", "--dry-run", "train-gen"]);
    assert!(!o.status.success());
    let o = qmap(&["--out", out, "--method", "psnr", "--dry-run", "labels"]);
    assert!(!o.status.success());
}

#[test]
fn models_refuse_a_regenerated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for stage in ["synth", "labels", "train-gen", "train-pool", "eval"] {
        let o = tiny(out, &[], stage);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    for file in ["predictions.csv", "report.csv", "summary.jsonl"] {
        assert!(out.join("eval").join(file).exists(), "{file}");
    }
    assert!(tiny(out, &["--seed", "9"], "synth").status.success());
    let o = tiny(out, &[], "eval");
    assert!(!o.status.success());
    assert!(stderr(&o).contains("trained on dataset"), "{}", stderr(&o));
}
