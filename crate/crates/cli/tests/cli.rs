use std::path::{Path, PathBuf};
use std::process::Command;
use vtnet_cli::dispatch;

const TINY: &str = "\
# small enough to train in well under a second
seq_len = 30
hidden_size = 4
conv_filters1 = 2
conv_filters2 = 2
head_hidden = 4
max_epochs = 2
batch_size = 8
patience = 2
";

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["vtnet"];
    argv.extend_from_slice(args);
    dispatch(argv)
}

fn synth_small(dir: &Path, seed: u64) -> PathBuf {
    let data = dir.join("data");
    let seed = seed.to_string();
    let code = run(&[
        "synth", "--out", &s(&data), "--users", "6", "--tasks", "4", "--confused-fraction", "0.25",
        "--screen-width", "180", "--screen-height", "144", "--rate", "20", "--mean-duration", "2",
        "--sd-duration", "0.3", "--min-duration", "1.5", "--seed", &seed,
    ]);
    assert_eq!(code, 0);
    data
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.cfg");
    std::fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn synth_writes_dataset_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), 1);
    for f in ["samples.tsv", "labels.tsv", "meta.txt"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    let labels = std::fs::read_to_string(data.join("labels.tsv")).unwrap();
    assert_eq!(labels.lines().count(), 1 + 24);
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = synth_small(a.path(), 9);
    let db = synth_small(b.path(), 9);
    for f in ["samples.tsv", "labels.tsv", "meta.txt"] {
        assert_eq!(std::fs::read(da.join(f)).unwrap(), std::fs::read(db.join(f)).unwrap());
    }
}

#[test]
fn preprocess_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), 2);
    let before = std::fs::read(data.join("samples.tsv")).unwrap();
    let items = dir.path().join("items");
    assert_eq!(run(&["preprocess", "--data", &s(&data), "--out", &s(&items), "--set", "seq_len=30"]), 0);
    let index = std::fs::read_to_string(items.join("index.tsv")).unwrap();
    assert_eq!(index.lines().count(), 1 + 24 * 4);
    assert_eq!(std::fs::read(data.join("samples.tsv")).unwrap(), before);

    let images = dir.path().join("images");
    assert_eq!(run(&["render", "--data", &s(&data), "--out", &s(&images), "--task", "u000_t000"]), 0);
    let pgm = std::fs::read(images.join("u000_t000.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n30 24\n255\n"));
    assert_eq!(run(&["render", "--data", &s(&data), "--out", &s(&images), "--task", "nope"]), 1);
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), 3);
    let cfg = tiny_config(dir.path());
    let ckpt = dir.path().join("model.ckpt");
    let log = dir.path().join("train.log");
    let stats = dir.path().join("stats.json");
    let code = run(&[
        "train", "--data", &s(&data), "--variant", "vtnet", "--out", &s(&ckpt), "--log", &s(&log),
        "--stats", &s(&stats), "--config", &s(&cfg), "--seed", "4",
    ]);
    assert_eq!(code, 0);
    let model = vtnet_core::model::load_checkpoint(&ckpt).unwrap();
    assert_eq!(model.config.hidden_size, 4);
    assert_eq!(model.config.max_epochs, 2);
    let lines = std::fs::read_to_string(&log).unwrap().lines().count();
    assert!((1..=2).contains(&lines));
    let _: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
}

#[test]
fn cv_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), 5);
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("report.json");
    let table = dir.path().join("report.txt");
    let code = run(&[
        "cv", "--data", &s(&data), "--variant", "gru_only,vtnet", "--runs", "1", "--folds", "3", "--seed", "7",
        "--out", &s(&out), "--table", &s(&table), "--config", &s(&cfg), "--votes",
    ]);
    assert_eq!(code, 0);
    let json = std::fs::read_to_string(&out).unwrap();
    let report: vtnet_core::eval::EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(report.entries.len(), 2 * 3);
    assert_eq!(report.base_seed, 7);
    assert!(report.config.task_votes);
    assert!(report.entries.iter().all(|e| e.vote_metrics.is_some()));

    let again = dir.path().join("again.json");
    assert_eq!(run(&["report", "--in", &s(&out), "--format", "json", "--out", &s(&again)]), 0);
    assert_eq!(std::fs::read_to_string(&again).unwrap(), json);
    let rendered = dir.path().join("rendered.txt");
    assert_eq!(run(&["report", "--in", &s(&out), "--format", "table", "--out", &s(&rendered)]), 0);
    assert_eq!(std::fs::read(&rendered).unwrap(), std::fs::read(&table).unwrap());
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.lines().any(|l| l.starts_with("GRU")));
    assert!(text.lines().any(|l| l.starts_with("VTNet")));
}

#[test]
fn report_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(run(&["report", "--in", &s(&bad)]), 1);
    assert_eq!(run(&["report", "--in", &s(&bad), "--format", "xml"]), 2);
}

#[test]
fn config_errors_are_domain_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), 6);
    let out = dir.path().join("r.json");
    assert_eq!(run(&["cv", "--data", &s(&data), "--out", &s(&out), "--set", "hiden=3"]), 1);
    assert_eq!(run(&["cv", "--data", &s(&data), "--out", &s(&out), "--set", "noequals"]), 2);
    assert!(!out.exists());
}

#[test]
fn binary_exit_codes_and_seed_env() {
    let bin = env!("CARGO_BIN_EXE_vtnet");
    let status = Command::new(bin).arg("trane").output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    let synth = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(bin);
        cmd.args(["synth", "--users", "2", "--tasks", "2", "--rate", "20", "--mean-duration", "2"]);
        cmd.args(["--sd-duration", "0.2", "--min-duration", "1.5", "--out", &s(&out)]);
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        cmd.env_remove("VTNET_SEED");
        if let Some(e) = env {
            cmd.env("VTNET_SEED", e);
        }
        assert_eq!(cmd.status().unwrap().code(), Some(0));
        std::fs::read(out.join("samples.tsv")).unwrap()
    };
    let from_env = synth("a", Some("11"), None);
    let from_flag = synth("b", None, Some("11"));
    let flag_wins = synth("c", Some("12"), Some("11"));
    let default = synth("d", None, None);
    assert_eq!(from_env, from_flag);
    assert_eq!(flag_wins, from_flag);
    assert_ne!(default, from_flag);

    let bad = Command::new(bin)
        .args(["synth", "--out", &s(&dir.path().join("e"))])
        .env("VTNET_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
