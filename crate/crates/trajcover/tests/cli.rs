use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use trajcover::experiment::SummaryTable;
use trajcover::io::{read_checkpoint, read_scene_dir, read_set};
use trajcover_core::trajset::coverage_radius;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajcover"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("TRAJCOVER_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["synth", "--no-such-flag"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["baseline", "--scenes", "nowhere"])), 2);
    assert_eq!(code(&run(dir.path(), &["synth", "--lane-width", "1.5"])), 2);
}

#[test]
fn unreadable_scene_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("bad")).unwrap();
    fs::write(dir.path().join("bad/s.json"), b"{not json").unwrap();
    assert_eq!(code(&run(dir.path(), &["baseline", "--scenes", "bad"])), 3);
}

#[test]
fn pipeline_artifacts_are_valid_and_rereadable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "4", "synth", "--n-scenes", "40", "--val-fraction", "0.25"]);
    let train = read_scene_dir(&d.join("scenes/train")).unwrap();
    let val = read_scene_dir(&d.join("scenes/val")).unwrap();
    assert_eq!((train.len(), val.len()), (30, 10));

    ok(d, &["build-set", "--scenes", "scenes/train", "--epsilon", "2", "--metric", "max_l2"]);
    let set = read_set(&d.join("set.json")).unwrap();
    let futures: Vec<_> = train.iter().map(|s| s.future_in_agent_frame().unwrap().unwrap()).collect();
    assert!(coverage_radius(&set, &futures, set.metric()) <= 2.0 + 1e-9);

    let first_val = format!("scenes/val/{}.json", val[0].id);
    ok(d, &["rasterize", "--scene", &first_val, "--output", "img.ppm"]);
    let ppm = fs::read(d.join("img.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n400 400\n255\n"));

    let small = ["--grid", "4,4", "--hidden", "16", "--epochs", "2", "--batch-size", "8", "--lr", "0.05"];
    let mut pre = vec!["pretrain", "--scenes", "scenes/train", "--set", "set.json"];
    pre.extend(small);
    ok(d, &pre);
    ok(d, &["train", "--scenes", "scenes/train", "--init", "pretrained.json", "--lambda", "1", "--epochs", "2", "--lr", "0.05"]);
    let pretrained = read_checkpoint(&d.join("pretrained.json")).unwrap();
    let model = read_checkpoint(&d.join("model.json")).unwrap();
    assert_eq!(model.set(), pretrained.set());
    assert_ne!(model.layers(), pretrained.layers());

    ok(d, &["eval", "--scenes", "scenes/val", "--checkpoint", "model.json"]);
    ok(d, &["eval", "--scenes", "scenes/val", "--physics", "--output", "physics.csv"]);
    for name in ["metrics.csv", "physics.csv"] {
        let text = fs::read_to_string(d.join(name)).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("scene_id,minade1,minade5,minade10"), "{header}");
        assert_eq!(text.lines().count(), 12);
    }
}

#[test]
fn wrong_head_and_loss_pairing_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n-scenes", "10"]);
    ok(d, &["build-set", "--scenes", "scenes", "--size", "6"]);
    let o = run(d, &["train", "--scenes", "scenes", "--set", "set.json", "--head", "ordinal_regression", "--loss", "wce_mean"]);
    assert_eq!(code(&o), 2);
}

const SWEEP: &str = r#"
seed = 3
replicates = [0, 1]
ranks = 3
[data]
n_scenes = 30
[model]
feature_grid = [4, 4]
hidden_sizes = [16]
[train]
epochs = 2
batch_size = 8
lr0 = 0.05
[axes]
lambda = [0.0, 1.0]
head = ["classification", "ordinal_regression"]
loss_variant = ["ce", "wce_mean"]
"#;

#[test]
fn sweep_records_failed_cells_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("sweep.toml"), SWEEP).unwrap();

    let first = run(d, &["sweep", "--config", "sweep.toml"]);
    assert_eq!(code(&first), 4, "{}", String::from_utf8_lossy(&first.stderr));
    let summary = fs::read(d.join("sweep/summary.csv")).unwrap();
    let table = SummaryTable::parse(&summary).unwrap();
    assert_eq!(table.rows.len(), 16);
    let failed: Vec<_> = table.rows.iter().filter(|r| table.text(r, "status") != "ok").collect();
    assert_eq!(failed.len(), 4);
    for r in &failed {
        assert_eq!((table.text(r, "head"), table.text(r, "loss_variant")), ("ordinal_regression", "wce_mean"));
        assert!(d.join("sweep/cells").join(table.text(r, "cell_id")).join("error.txt").exists());
    }
    for name in ["dac_vs_lambda.svg", "dac_by_rank.svg", "residuals_vs_anchor_count.svg"] {
        assert!(d.join("sweep/plots").join(name).exists(), "{name}");
    }

    let second = run(d, &["sweep", "--config", "sweep.toml"]);
    assert_eq!(code(&second), 4);
    assert!(String::from_utf8_lossy(&second.stdout).contains("12 reused"));
    assert_eq!(fs::read(d.join("sweep/summary.csv")).unwrap(), summary);

    // A changed hyper-parameter invalidates every cached cell.
    fs::write(d.join("sweep.toml"), SWEEP.replace("epochs = 2", "epochs = 1")).unwrap();
    let third = run(d, &["sweep", "--config", "sweep.toml"]);
    assert!(String::from_utf8_lossy(&third.stdout).contains("0 reused"));
}

#[test]
fn sweep_matches_a_fresh_run_after_partial_deletion() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = SWEEP.replace(r#"head = ["classification", "ordinal_regression"]"#, r#"head = ["classification"]"#);
    fs::write(d.join("sweep.toml"), cfg).unwrap();
    ok(d, &["sweep", "--config", "sweep.toml"]);
    let full = fs::read(d.join("sweep/summary.csv")).unwrap();
    let cells = d.join("sweep/cells");
    let victim = fs::read_dir(&cells).unwrap().next().unwrap().unwrap().path();
    fs::remove_dir_all(&victim).unwrap();
    let o = run(d, &["sweep", "--config", "sweep.toml"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("7 reused"));
    assert_eq!(fs::read(d.join("sweep/summary.csv")).unwrap(), full);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_trajcover"))
        .args(["--out"])
        .arg(dir.path())
        .args(["synth", "--n-scenes", "2"])
        .env("TRAJCOVER_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
