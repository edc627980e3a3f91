use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fembed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fembed")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("fembed-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&p);
    fs::create_dir_all(&p).unwrap();
    p
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, format!("output_dir = {}\n{body}", dir.join("out").display())).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = fembed(&["train", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    assert_eq!(fembed(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(fembed(&["evaluate", "x.cfg"]).status.code(), Some(1));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = scratch("invalid");
    let cfg = write_config(&dir, "task = premise_selection\ntraining.seed = 0\nencoder.colour = red\n");
    assert_eq!(fembed(&["train", &cfg]).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = scratch("runtime");
    let cfg = write_config(&dir, "task = premise_selection\ntraining.seed = 0\ndata.source = probe\n");
    let o = fembed(&["evaluate", &cfg, "--checkpoint", "/nonexistent/best.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn prepare_data_twice_is_byte_identical() {
    let dir = scratch("prepare");
    let cfg = write_config(&dir, "task = holist_supervised\ntraining.seed = 0\ndata.theorems = 60\n");
    let read_all = || -> Vec<(String, Vec<u8>)> {
        let o = fembed(&["prepare-data", &cfg]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap().lines().map(|p| (p.to_string(), fs::read(p).unwrap())).collect()
    };
    let a = read_all();
    assert_eq!(a.len(), 3);
    assert_eq!(a, read_all());
}

#[test]
fn train_then_analyze_lists_k_sorted_neighbours() {
    let dir = scratch("analyze");
    let cfg = write_config(
        &dir,
        "task = premise_selection\ntraining.seed = 0\nencoder.arch = MPNN\nencoder.d = 16\ndata.source = probe\ndata.probe_examples = 200\ndata.probe_symbols = 8\ntraining.epochs = 2\nanalysis.k = 4\n",
    );
    let o = fembed(&["train", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = dir.join("out/checkpoints/best.json");
    let ck = ck.to_str().unwrap();

    let o = fembed(&["evaluate", &cfg, "--checkpoint", ck]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("accuracy = "));

    let o = fembed(&["analyze", &cfg, "--checkpoint", ck, "--query", "(rel c0 c1)"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<(f64, String)> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| {
            let (d, e) = l.split_once('\t').unwrap();
            (d.parse().unwrap(), e.to_string())
        })
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.windows(2).all(|w| w[0].0 <= w[1].0));
    assert!(rows.iter().all(|r| r.1 != "(rel c0 c1)"));

    let o = fembed(&["analyze", &cfg, "--checkpoint", ck, "--query", "(rel c0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = scratch("seed");
    let cfg = write_config(&dir, "task = premise_selection\ntraining.seed = 0\nencoder.d = 8\ndata.source = probe\ndata.probe_examples = 100\ntraining.epochs = 1\n");
    assert_eq!(fembed(&["train", &cfg, "--seed", "9"]).status.code(), Some(0));
    let report = fs::read_to_string(dir.join("out/report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["config"]["training"]["seed"], 9);
}
