use std::path::Path;
use std::process::{Command, Output};

use maptraj_core::metrics::validate_report_json;
use maptraj_core::scenes::{load_scenes, SceneSchema};

fn maptraj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maptraj")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let text = format!(
        "checkpoint = \"model.ckpt\"\nlog_every = 1\n[data]\ntrain = \"data/train.jsonl\"\nvalidation = \"data/validation.jsonl\"\ntest = \"data/test.jsonl\"\n[optimizer]\nsteps = 2\nbatch_size = 4\n{extra}"
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn generate_train_evaluate_plot() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let out = maptraj(&["generate", "--out", s(&data), "--count", "20", "--seed", "9", "--split", "0.6,0.2,0.2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let schema = SceneSchema::default();
    let counts: Vec<usize> = ["train", "validation", "test"]
        .iter()
        .map(|n| load_scenes(&data.join(format!("{n}.jsonl")), &schema).unwrap().len())
        .collect();
    assert_eq!(counts.iter().sum::<usize>(), 20);
    assert!(counts.iter().all(|&c| c > 0));

    let config = write_config(root, "run.toml", "");
    let out = maptraj(&["train", "--config", s(&config)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("validation:"), "{stdout}");
    let curve = std::fs::read_to_string(root.join("model.loss.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));

    let ckpt = root.join("model.ckpt");
    let report = root.join("eval/report.json");
    let out = maptraj(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data.join("test.jsonl")), "--report", s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    validate_report_json(&value).unwrap();
    assert_eq!(value["n_scenes"], counts[2]);
    let csv = std::fs::read_to_string(report.with_extension("csv")).unwrap();
    assert!(csv.starts_with("scene_id,"));
    assert_eq!(csv.lines().count(), counts[2] + 1);

    let scene = load_scenes(&data.join("test.jsonl"), &schema).unwrap()[0].id.clone();
    let png = root.join("plot.png");
    let out = maptraj(&["plot", "--scene", &scene, "--checkpoint", s(&ckpt), "--out", s(&png)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::metadata(&png).unwrap().len() > 0);
    let out = maptraj(&["plot", "--scene", "nope", "--checkpoint", s(&ckpt), "--out", s(&png)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn ablate_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    assert_eq!(code(&maptraj(&["generate", "--out", s(&data), "--count", "12", "--seed", "2"])), 0);
    let config = write_config(root, "run.toml", "");
    let json = root.join("ablation.json");
    let out = maptraj(&[
        "ablate",
        "--config",
        s(&config),
        "--modalities",
        "ego_only,ego_neighbor_map",
        "--seeds",
        "0,1",
        "--out",
        s(&json),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("| ego_only |") && stdout.contains("ADE(6s) over seeds"), "{stdout}");
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let tables = value.as_array().unwrap();
    assert_eq!(tables.len(), 2);
    for t in tables {
        let rows = t["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 2);
        validate_report_json(&rows[0]["report"]).unwrap();
    }

    assert_eq!(code(&maptraj(&["ablate", "--config", s(&config), "--modalities", "ego,map"])), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    assert_eq!(code(&maptraj(&["generate", "--out", s(&data), "--count", "10", "--seed", "1"])), 0);

    // usage and configuration errors
    assert_eq!(code(&maptraj(&[])), 2);
    assert_eq!(code(&maptraj(&["train", "--config", s(&root.join("absent.toml"))])), 2);
    let bad = write_config(root, "bad.toml", "momentum = 0.9\n");
    let out = maptraj(&["train", "--config", s(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("momentum"));
    let missing_data = root.join("missing.toml");
    std::fs::write(&missing_data, "[data]\ntrain = \"nowhere.jsonl\"\n").unwrap();
    assert_eq!(code(&maptraj(&["train", "--config", s(&missing_data)])), 2);
    assert_eq!(code(&maptraj(&["generate", "--out", s(&data), "--split", "0.5,0.5"])), 2);

    // data errors
    let corrupt = root.join("corrupt.jsonl");
    std::fs::write(&corrupt, "not json\n").unwrap();
    std::fs::write(root.join("corrupt.toml"), "[data]\ntrain = \"corrupt.jsonl\"\n").unwrap();
    assert_eq!(code(&maptraj(&["train", "--config", s(&root.join("corrupt.toml"))])), 3);
    let garbage = root.join("garbage.ckpt");
    std::fs::write(&garbage, b"MAPTRAJ1 but not really").unwrap();
    let out = maptraj(&["evaluate", "--checkpoint", s(&garbage), "--data", s(&corrupt), "--report", s(&root.join("r.json"))]);
    assert_eq!(code(&out), 3);

    // divergence
    let diverge = write_config(root, "diverge.toml", "learning_rate = 1e300\n");
    let out = maptraj(&["train", "--config", s(&diverge)]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!root.join("model.ckpt").exists());

    // unwritable output
    let blocker = root.join("blocker");
    std::fs::write(&blocker, b"").unwrap();
    assert_eq!(code(&maptraj(&["generate", "--out", s(&blocker.join("sub")), "--count", "4"])), 1);
}
