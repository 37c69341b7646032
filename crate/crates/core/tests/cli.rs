use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use colorenh::imaging::{load_image, Image};
use colorenh::trainer::table::read_csv;
use colorenh::trainer::train::read_loss_log;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_colorenh"));
    c.env_remove("COLORENH_OUTPUT_ROOT");
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !out.status.success() {
        eprintln!("stdout:\n{}", String::from_utf8_lossy(&out.stdout));
        eprintln!("stderr:\n{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn ok(cmd: &mut Command) -> String {
    let out = run(cmd);
    assert!(out.status.success(), "command failed");
    String::from_utf8(out.stdout).unwrap()
}

fn run_dir(stdout: &str) -> PathBuf {
    let line = stdout
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .expect("run directory line");
    PathBuf::from(line)
}

/// Synthetic pairs, a manifest with two validation pairs and a small
/// config under `root`. Returns the config path.
fn setup(root: &Path, kind: &str, variant: &str, steps: u64) -> PathBuf {
    let data = root.join("data");
    ok(bin()
        .args([
            "synth", "--kind", kind, "--count", "6", "--width", "16", "--height", "12", "--seed",
            "4",
        ])
        .arg("--out")
        .arg(&data));
    ok(bin()
        .args([
            "ingest",
            "--longer-edge",
            "16",
            "--pad-size",
            "16",
            "--val-count",
            "2",
            "--split-seed",
            "1",
        ])
        .arg("--raw")
        .arg(data.join("raw"))
        .arg("--target")
        .arg(data.join("target"))
        .arg("--out")
        .arg(root.join("manifest.jsonl")));
    let config = format!(
        r#"output_dir = "runs"
variant = "{variant}"

[data]
manifest = "manifest.jsonl"

[train]
batch_size = 2
max_steps = {steps}
pad_size = 16
longer_edge = 16
lr_initial = 0.05
seed = 9

[cenet]
backbone_channels = [4, 8]
head_hidden = [8]

[prnet]
base_channels = 4
num_residual_blocks = 1
"#
    );
    let path = root.join("config.toml");
    fs::write(&path, config).unwrap();
    path
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn train_ce_writes_checkpoint_and_trending_loss_log() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path(), "affine", "CE_PRNL", 60);
    let out = ok(bin().arg("train").arg(&config).args(["--variant", "CE"]));
    let dir = run_dir(&out);
    assert!(dir.starts_with(tmp.path().join("runs")));
    assert_eq!(files(&dir), ["cenet.ckpt", "config.toml", "loss_cenet.csv"]);
    let log = read_loss_log(&dir.join("loss_cenet.csv")).unwrap();
    assert_eq!(log.len(), 60);
    assert!(log
        .iter()
        .enumerate()
        .all(|(i, r)| r.step == i as u64 && r.lr == 0.05));
    let head: f64 = log[..10].iter().map(|r| r.loss).sum();
    let tail: f64 = log[50..].iter().map(|r| r.loss).sum();
    assert!(tail < head, "{tail} vs {head}");
}

#[test]
fn resume_continues_the_step_counter() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path(), "affine", "PR", 3);
    let first = run_dir(&ok(bin().arg("train").arg(&config)));
    let second = run_dir(&ok(bin()
        .arg("train")
        .arg(&config)
        .arg("--resume")
        .arg(&first)
        .args([
            "--set",
            "train.max_steps=6",
            "--set",
            "train.lr_decay_every_steps=4",
        ])));
    let log = read_loss_log(&second.join("loss_prnet.csv")).unwrap();
    let steps: Vec<u64> = log.iter().map(|r| r.step).collect();
    assert_eq!(steps, [3, 4, 5]);
    assert_eq!(log[0].lr, 0.05);
    assert_eq!(log[1].lr, 0.05 * 0.1);
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[train]\nlearningrate = 0.1\n").unwrap();
    let out = run(bin().arg("train").arg(&path));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learningrate"));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.toml");
    fs::write(&path, "[data]\nmanifest = \"nowhere.jsonl\"\n").unwrap();
    let out = run(bin().arg("train").arg(&path));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn manifest_and_config_must_agree_on_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path(), "affine", "CE", 1);
    let out = run(bin()
        .arg("train")
        .arg(&config)
        .args(["--set", "train.pad_size=20"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_root_env_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path(), "affine", "CE", 1);
    let root = tmp.path().join("elsewhere");
    let dir = run_dir(&ok(bin()
        .arg("train")
        .arg(&config)
        .env("COLORENH_OUTPUT_ROOT", &root)));
    assert!(dir.starts_with(&root));
}

#[test]
fn initial_checkpoints_enhance_to_the_input() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path(), "affine", "CE_PRNL", 0);
    let ckpt = run_dir(&ok(bin().arg("train").arg(&config)));
    let data = tmp.path().join("data/raw");
    let inputs: Vec<PathBuf> = ["img0000.png", "img0001.png", "img0002.png"]
        .iter()
        .map(|n| data.join(n))
        .collect();
    let out_dir = tmp.path().join("out");
    let enhance = |out: &Path| {
        ok(bin()
            .arg("enhance")
            .arg("--checkpoint-dir")
            .arg(&ckpt)
            .args(["--variant", "CE_PRNL"])
            .arg("--out-dir")
            .arg(out)
            .args(&inputs));
    };
    enhance(&out_dir);
    assert_eq!(
        files(&out_dir),
        [
            "img0000_enhanced.png",
            "img0001_enhanced.png",
            "img0002_enhanced.png"
        ]
    );
    for input in &inputs {
        let stem = input.file_stem().unwrap().to_str().unwrap();
        let a = load_image(input).unwrap();
        let b = load_image(out_dir.join(format!("{stem}_enhanced.png"))).unwrap();
        assert_eq!((b.width(), b.height()), (16, 12));
        assert_eq!(a, b);
    }
    let again = tmp.path().join("again");
    enhance(&again);
    for name in files(&out_dir) {
        assert_eq!(
            fs::read(out_dir.join(&name)).unwrap(),
            fs::read(again.join(&name)).unwrap()
        );
    }
}

#[test]
fn enhance_rejects_oversize_images_and_missing_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path(), "affine", "CE", 0);
    let ckpt = run_dir(&ok(bin().arg("train").arg(&config)));
    let big = tmp.path().join("big.png");
    colorenh::imaging::save_image(&Image::filled(17, 4, [0.5; 3]), &big).unwrap();
    let out = run(bin()
        .arg("enhance")
        .arg("--checkpoint-dir")
        .arg(&ckpt)
        .args(["--variant", "CE"])
        .arg("--out-dir")
        .arg(tmp.path().join("o"))
        .arg(&big));
    assert_eq!(out.status.code(), Some(3));
    let out = run(bin()
        .arg("enhance")
        .arg("--checkpoint-dir")
        .arg(&ckpt)
        .args(["--variant", "PR"])
        .arg("--out-dir")
        .arg(tmp.path().join("o"))
        .arg(&big));
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prnet.ckpt"));
}

#[test]
fn evaluate_identity_pairs_gives_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path(), "identity", "CE_PR", 0);
    let ckpt = run_dir(&ok(bin().arg("train").arg(&config)));
    let out = ok(bin()
        .arg("evaluate")
        .arg(&config)
        .arg("--checkpoint-dir")
        .arg(&ckpt));
    let rows = read_csv(&run_dir(&out).join("eval.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.last().unwrap().label, "mean");
    assert!(rows.iter().all(|r| r.lab_l2 == 0.0 && r.ssim == 1.0));
    assert!(out.contains("mean"));
}

#[test]
fn ablate_reports_every_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path(), "affine_field", "CE", 4);
    let out = ok(bin().arg("ablate").arg(&config));
    let rows = read_csv(&run_dir(&out).join("ablation.csv")).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["baseline", "CE", "PR", "PRNL", "CE_PR", "CE_PRNL"]);
    for row in &rows {
        let printed = out
            .lines()
            .find(|l| l.split_whitespace().next() == Some(row.label.as_str()))
            .unwrap();
        let nums: Vec<f64> = printed
            .split_whitespace()
            .skip(1)
            .map(|v| v.parse().unwrap())
            .collect();
        for (p, v) in nums.iter().zip([row.lab_l2, row.psnr, row.ssim]) {
            assert!(
                (p - v).abs() < 1e-9 * v.abs().max(1.0),
                "{} {p} vs {v}",
                row.label
            );
        }
    }
}

#[test]
fn seeded_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path(), "affine_field", "CE_PRNL", 5);
    let a = run_dir(&ok(bin().arg("train").arg(&config)));
    let b = run_dir(&ok(bin().arg("train").arg(&config)));
    for name in [
        "loss_cenet.csv",
        "loss_prnet.csv",
        "cenet.ckpt",
        "prnet.ckpt",
        "config.toml",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn gradcheck_op_scope_passes_and_lists_parameters() {
    let out = ok(bin().args(["gradcheck", "--scope", "op"]));
    assert!(!out.contains("FAIL"));
    for name in [
        "linear",
        "conv2d",
        "conv_transpose2d",
        "batchnorm_train",
        "nonlocal",
        "nonlocal.theta.weight",
    ] {
        assert!(out.contains(name), "{name}");
    }
}

#[test]
fn gradcheck_full_scope_passes() {
    let out = ok(bin().args(["gradcheck", "--scope", "full"]));
    let params = out.lines().filter(|l| l.starts_with("    ")).count();
    assert!(params >= 50, "{params} parameters listed");
    assert!(!out.contains("FAIL"));
}

#[test]
fn bad_scope_is_a_usage_error() {
    let out = run(bin().args(["gradcheck", "--scope", "everything"]));
    assert_eq!(out.status.code(), Some(2));
}
