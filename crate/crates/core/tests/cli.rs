use std::path::Path;
use std::process::Command;

const TINY_RASTRIGIN: &str = "\
[experiment]
testbed = rastrigin
methods = adam, gd_ls, l2o_dm
seeds = 1, 2

[rastrigin]
train = 8
test = 3
starts = 2
steps = 30

[meta]
epochs = 2
horizon = 10
unroll = 5
hidden = 4
layers = 1
";

fn l2o(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_l2o"))
        .args(args)
        .env("OPEN_L2O_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_RASTRIGIN);
    let out = dir.path().join("out");
    let o = l2o(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["records.csv", "timings.csv", "failures.txt", "summary.csv", "summary.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("l2o_dm") && summary.contains("adam"));
}

#[test]
fn train_then_eval_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_RASTRIGIN);
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let o = l2o(&["train", "--config", &cfg, "--method", "l2o_dm", "--out", &d("train")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("train/models/l2o_dm_s1.ol2o").exists());
    let o = l2o(&["eval", "--config", &cfg, "--models", &d("train"), "--out", &d("eval")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = l2o(&["run", "--config", &cfg, "--out", &d("run")]);
    assert_eq!(o.status.code(), Some(0));
    let eval = std::fs::read(dir.path().join("eval/records.csv")).unwrap();
    let run = std::fs::read_to_string(dir.path().join("run/records.csv")).unwrap();
    // the full run also logs meta-training losses; evaluation rows agree byte for byte
    let without_meta: String = run.lines().filter(|l| !l.contains(",meta_loss,")).map(|l| format!("{l}\n")).collect();
    assert_eq!(String::from_utf8(eval).unwrap(), without_meta);
    let o = l2o(&["report", "--in", &d("eval"), "--out", &d("report")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("report/summary.csv").exists());
}

#[test]
fn seed_override_and_gen() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_RASTRIGIN);
    let out = dir.path().join("data");
    let o = l2o(&["gen", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec![std::ffi::OsString::from("data_s9.ol2o")]);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let bad = write_config(dir.path(), "[experiment]\ntestbed = rastrigin\nmethods = lista\n");
    assert_eq!(l2o(&["run", "--config", &bad, "--out", out]).status.code(), Some(2));
    let bad = write_config(dir.path(), "[experiment]\ntestbed = lasso\nfoo = 1\n");
    assert_eq!(l2o(&["run", "--config", &bad, "--out", out]).status.code(), Some(2));
    let ok = write_config(dir.path(), TINY_RASTRIGIN);
    assert_eq!(l2o(&["train", "--config", &ok, "--method", "adam", "--out", out]).status.code(), Some(2));
    assert_eq!(l2o(&["run", "--config", "/nonexistent.cfg", "--out", out]).status.code(), Some(2));
    assert_eq!(l2o(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn run_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_RASTRIGIN);
    let models = dir.path().join("models");
    std::fs::create_dir_all(&models).unwrap();
    std::fs::write(models.join("l2o_dm_s1.ol2o"), b"OL2O garbage").unwrap();
    let out = dir.path().join("out");
    let o = l2o(&["eval", "--config", &cfg, "--models", models.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let failures = std::fs::read_to_string(out.join("failures.txt")).unwrap();
    assert!(failures.starts_with("l2o_dm seed 1"), "{failures}");
    // the other methods still produced their records
    let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert!(records.contains(",adam,") && records.contains(",gd_ls,"));
}

#[test]
fn report_of_missing_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none");
    let o = l2o(&["report", "--in", missing.to_str().unwrap(), "--out", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
