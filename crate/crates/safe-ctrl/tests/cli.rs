use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use safe_ctrl::output::list_files;

const BIN: &str = env!("CARGO_BIN_EXE_safe-ctrl");

fn safe_ctrl(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("SAFE_CTRL_OUT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

const SYNTHETIC: &str = "env = synthetic-linear\nseed = 2\nepisodes = 3\nhorizon = 15\n";
const PENDULUM: &str = "# tiny pendulum run\nenv = pendulum\nseed = 0\nepisodes = 2\nhorizon = 12\ntest_trials = 2\nreference_episodes = 1\nmppi.rollouts = 6\nmppi.horizon = 5\n";

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_all(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    list_files(dir)
        .unwrap()
        .into_iter()
        .map(|rel| {
            let bytes = fs::read(dir.join(&rel)).unwrap();
            (rel, bytes)
        })
        .collect()
}

#[test]
fn missing_required_key_exits_2_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    for key in ["env", "seed", "episodes", "horizon"] {
        let text: String = SYNTHETIC.lines().filter(|l| !l.starts_with(key)).map(|l| format!("{l}\n")).collect();
        let cfg = write_config(tmp.path(), "c.cfg", &text);
        let o = safe_ctrl(&["run", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path());
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains(&format!("`{key}`")), "{}", stderr(&o));
    }
}

#[test]
fn bad_values_methods_and_keys_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.cfg", SYNTHETIC);
    let c = cfg.to_str().unwrap();
    for args in [
        vec!["run", "--config", c, "--method", "sarsa"],
        vec!["run", "--config", c, "--override", "eta=fast"],
        vec!["run", "--config", c, "--override", "colour=blue"],
        vec!["run", "--config", c, "--override", "eta"],
        vec!["run", "--config", c, "--override", "eta=-1"],
        vec!["verify", "everything"],
        vec!["frobnicate"],
    ] {
        let o = safe_ctrl(&args, tmp.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn same_config_twice_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.cfg", SYNTHETIC);
    for out in ["a", "b"] {
        let o = safe_ctrl(&["run", "--config", cfg.to_str().unwrap(), "--out", out], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = read_all(&tmp.path().join("a/algorithm1"));
    let b = read_all(&tmp.path().join("b/algorithm1"));
    assert!(a.len() >= 10);
    assert_eq!(a, b);
    assert_eq!(
        fs::read(tmp.path().join("a/algorithm1/manifest.json")).unwrap(),
        fs::read(tmp.path().join("b/algorithm1/manifest.json")).unwrap()
    );
}

#[test]
fn manifest_hashes_every_file_and_rederives_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.cfg", SYNTHETIC);
    let o = safe_ctrl(&["run", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", "o"], tmp.path());
    assert!(o.status.success());
    let dir = tmp.path().join("o/algorithm1");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    let files = manifest["files"].as_object().unwrap();
    assert_eq!(files.len(), list_files(&dir).unwrap().len());
    for (rel, hash) in files {
        let bytes = fs::read(dir.join(rel)).unwrap();
        assert_eq!(hash.as_str().unwrap(), safe_ctrl::output::sha256_hex(&bytes));
    }
    // The stored config alone reproduces the run.
    let o = safe_ctrl(&["run", "--config", "o/algorithm1/config.txt", "--out", "again"], tmp.path());
    assert!(o.status.success());
    assert_eq!(read_all(&dir), read_all(&tmp.path().join("again/algorithm1")));
}

#[test]
fn method_all_writes_aligned_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.cfg", PENDULUM);
    let o = safe_ctrl(&["run", "--config", cfg.to_str().unwrap(), "--method", "all", "--out", "o"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let names = ["algorithm1", "gt-mppi", "nom-mppi", "nom-mppi-cbf", "exploitation", "unconstrained-ts"];
    let mut dirs: Vec<String> = fs::read_dir(tmp.path().join("o"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    dirs.sort();
    let mut expect: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    expect.sort();
    assert_eq!(dirs, expect);
    for name in names {
        let mut r = csv::Reader::from_path(tmp.path().join("o").join(name).join("episodes.csv")).unwrap();
        let eps: Vec<String> = r.records().map(|rec| rec.unwrap()[0].to_string()).collect();
        assert_eq!(eps, ["0", "1"], "{name}");
    }
}

#[test]
fn episodes_flag_and_env_var_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.cfg", SYNTHETIC);
    let o = Command::new(BIN)
        .args(["run", "--config", cfg.to_str().unwrap(), "--episodes", "1"])
        .current_dir(tmp.path())
        .env("SAFE_CTRL_OUT", tmp.path().join("from-env"))
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = fs::read_to_string(tmp.path().join("from-env/algorithm1/episodes.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(!text.contains('\r'));
}

fn compare_table(tmp: &Path, dirs: &[&str]) -> Vec<BTreeMap<String, String>> {
    let mut args = vec!["compare"];
    args.extend_from_slice(dirs);
    let o = safe_ctrl(&args, tmp);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_reader(o.stdout.as_slice());
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

#[test]
fn compare_single_run_reproduces_its_episode_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.cfg", PENDULUM);
    assert!(safe_ctrl(&["run", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path()).status.success());
    let table = compare_table(tmp.path(), &["o"]);
    let mut r = csv::Reader::from_path(tmp.path().join("o/algorithm1/episodes.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let rows: Vec<BTreeMap<String, String>> = r
        .records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect();
    assert_eq!(table.len(), rows.len());
    for (t, e) in table.iter().zip(&rows) {
        assert_eq!(t["reward_mean"], e["mean_test_reward"]);
        assert_eq!(t["max_theta_mean"], e["test_monitor_max"]);
        assert_eq!(t["min_theta_mean"], e["test_monitor_min"]);
        assert_eq!(t["regret_mean"], e["regret"]);
        assert_eq!(t["reward_std"], "0");
        assert_eq!(t["seeds"], "1");
    }
}

#[test]
fn compare_four_seeds_takes_arithmetic_mean_and_std() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.cfg", PENDULUM);
    let mut rewards = Vec::new();
    for seed in 0..4 {
        let out = format!("s{seed}");
        let o = safe_ctrl(
            &["run", "--config", cfg.to_str().unwrap(), "--seed", &seed.to_string(), "--out", &out],
            tmp.path(),
        );
        assert!(o.status.success());
        let mut r = csv::Reader::from_path(tmp.path().join(&out).join("algorithm1/episodes.csv")).unwrap();
        let last: f64 = r.records().last().unwrap().unwrap()[3].parse().unwrap();
        rewards.push(last);
    }
    let table = compare_table(tmp.path(), &["s0", "s1", "s2", "s3"]);
    let row = table.iter().find(|r| r["episode"] == "1").unwrap();
    assert_eq!(row["seeds"], "4");
    let mean = rewards.iter().sum::<f64>() / 4.0;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 3.0;
    let got_mean: f64 = row["reward_mean"].parse().unwrap();
    let got_std: f64 = row["reward_std"].parse().unwrap();
    assert!((got_mean - mean).abs() <= 1e-9 * mean.abs());
    assert!((got_std - var.sqrt()).abs() <= 1e-9 * (1.0 + var.sqrt()));
    assert!(got_std > 0.0);
}

#[test]
fn compare_rejects_mismatched_horizons_naming_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.cfg", SYNTHETIC);
    let c = cfg.to_str().unwrap();
    assert!(safe_ctrl(&["run", "--config", c, "--out", "short"], tmp.path()).status.success());
    assert!(safe_ctrl(&["run", "--config", c, "--override", "horizon=16", "--out", "long"], tmp.path()).status.success());
    let o = safe_ctrl(&["compare", "short", "long"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("horizon") && msg.contains("short") && msg.contains("long"), "{msg}");
}

fn jsonl(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn verify_noiseless_prop1_passes_with_rate_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = safe_ctrl(&["verify", "prop1", "--override", "synthetic.noise=0", "--out", "v"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = jsonl(&tmp.path().join("v/verify.jsonl"));
    let filtered = lines.iter().find(|l| l["check"] == "filtered").unwrap();
    assert_eq!(filtered["rate"], 0.0);
    assert_eq!(filtered["ok"], true);
}

#[test]
fn verify_envelope_passes_and_appends() {
    let tmp = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        assert!(safe_ctrl(&["verify", "envelope", "--out", "v"], tmp.path()).status.success());
    }
    let lines = jsonl(&tmp.path().join("v/verify.jsonl"));
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], lines[2]);
    let env = &lines[0];
    assert!(env["rate"].as_f64().unwrap() <= 0.059);
    assert_eq!(lines[1]["check"], "margin-disabled");
    assert_eq!(lines[1]["pass"], false);
}

#[test]
fn corrupted_margin_fails_demonstrably() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "v.cfg",
        "env = synthetic-linear\nseed = 0\nepisodes = 1\nhorizon = 100\nmargin_scale = 0\ndelta_s = 0.01\n",
    );
    let o = safe_ctrl(&["verify", "prop1", "--config", cfg.to_str().unwrap(), "--out", "v"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("prop1/filtered"));
}

#[test]
fn verify_all_passes_by_default() {
    let tmp = tempfile::tempdir().unwrap();
    let o = safe_ctrl(&["verify", "all", "--out", "v"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = jsonl(&tmp.path().join("v/verify.jsonl"));
    assert_eq!(lines.len(), 7);
    assert!(lines.iter().all(|l| l["ok"] == true));
}
