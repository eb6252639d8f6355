//! End-to-end runs of the `ist` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ist")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ist(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

const SMALL_TRAIN: &[&str] = &[
    "train", "--dims", "16,24,24,4", "--epochs", "2", "--batch", "16", "--n", "1", "--J", "3",
];

fn small_train_config(dir: &Path) -> String {
    let path = dir.join("train.toml");
    fs::write(
        &path,
        "epochs = 2\nbatch = 16\ndims = [16, 24, 24, 4]\n[blobs]\nclasses = 4\ndim = 16\nper_class = 50\n",
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn costmodel_writes_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = ok(&["costmodel", "--n", "1,2,4", "--out", out]);
    let csv = read(dir.path(), "cost.csv");
    assert_eq!(stdout, csv);
    assert!(csv.contains("\n2,73600000,2080000,75366400000,"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn one_site_ist_and_data_parallel_share_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_train_config(dir.path());
    let columns = |strategy: &str| {
        let out = dir.path().join(strategy);
        let mut args = SMALL_TRAIN.to_vec();
        args.extend(["--config", &config, "--strategy", strategy, "--out", out.to_str().unwrap()]);
        ok(&args);
        read(&out, "metrics.csv")
            .lines()
            .skip(2)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{}", f[4], f[5])
            })
            .collect::<Vec<_>>()
    };
    let ist = columns("ist");
    assert_eq!(ist.len(), 2);
    assert_eq!(ist, columns("data_parallel"));
}

#[test]
fn outputs_repeat_across_runs_and_exec_modes() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_train_config(dir.path());
    let mut reports = Vec::new();
    for (k, exec) in ["parallel", "parallel", "sequential"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let out = out.to_str().unwrap();
        ok(&["--exec", exec, "train", "--config", &config, "--n", "2", "--out", out]);
        // Few samples: the moment verdict may go either way, the file must not.
        ist(&["--exec", exec, "mask-stats", "--samples", "2000", "--out", out]);
        let p = Path::new(out);
        reports.push((read(p, "report.json"), read(p, "metrics.csv"), read(p, "mask_stats.json")));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_train_config(dir.path());
    let out = dir.path().join("o");
    ok(&["train", "--config", &config, "--epochs", "1", "--eta", "0.02", "--out", out.to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&read(&out, "report.json")).unwrap();
    assert_eq!(report["config"]["epochs"], 1);
    assert_eq!(report["config"]["eta"], 0.02);
    assert_eq!(report["config"]["batch"], 16);
    assert_eq!(report["report"]["epochs"].as_array().unwrap().len(), 1);
}

#[test]
fn bad_input_exits_nonzero() {
    assert_eq!(ist(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(ist(&["train", "--strategy", "magic"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "epochs = 1\nlearning_rate = 3\n").unwrap();
    let out = ist(&["train", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let out = ist(&["train", "--dims", "5,8,3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gdci_verify_at_xi_one_and_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = ok(&["gdci-verify", "--xi", "1.0", "--T", "300", "--runs", "4", "--out", out]);
    assert!(stdout.contains("xi=1"));
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "gdci_report.json")).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["omega"], 0.0);

    let refused = ist(&["gdci-verify", "--xi", "0.9", "--out", out]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("inadmissible"));
}

#[test]
fn gen_data_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.csv");
    ok(&["gen-data", "--classes", "3", "--dim", "5", "--per-class", "7", "--seed", "2", "--out", path.to_str().unwrap()]);
    let expected = ist::data::gen_blobs(3, 5, 7, 1.0, 2).unwrap().to_csv_string();
    assert_eq!(read(dir.path(), "b.csv"), expected);
}
