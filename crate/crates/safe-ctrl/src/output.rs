//! On-disk formats: CSV rows, JSON snapshots and the hash manifest.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use safe_ctrl_core::envs::Environment;
use safe_ctrl_core::features::FeatureMap;
use safe_ctrl_core::learner::{EpisodeRecord, ModelSnapshot, TrialSummary};
use safe_ctrl_core::EpisodeTrace;

/// Bumped whenever a CSV header or JSON field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const EPISODE_HEADER: [&str; 20] = [
    "episode",
    "train_cost",
    "train_reward",
    "mean_test_reward",
    "std_test_reward",
    "test_trials",
    "train_monitor_min",
    "train_monitor_max",
    "test_monitor_min",
    "test_monitor_max",
    "train_min_barrier",
    "test_min_barrier",
    "test_violations",
    "train_infeasible",
    "test_infeasible",
    "constraint_active",
    "thompson_fallback",
    "beta",
    "reference_cost",
    "regret",
];

pub const TEST_HEADER: [&str; 8] = [
    "episode",
    "trial",
    "reward",
    "monitor_min",
    "monitor_max",
    "min_barrier",
    "violated",
    "infeasible",
];

/// Plain decimal rendering shared by every CSV.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn csv_writer(path: &Path) -> io::Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path)?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

pub fn episode_row(record: &EpisodeRecord, reference_cost: f64, regret: f64) -> Vec<String> {
    let tests = &record.tests;
    let fold = |f: fn(&TrialSummary) -> f64, init: f64, pick: fn(f64, f64) -> f64| {
        tests.iter().map(f).fold(init, pick)
    };
    let violations = tests.iter().filter(|t| t.min_barrier < 0.0).count();
    let test_infeasible: usize = tests.iter().map(|t| t.infeasible).sum();
    let train = &record.train_summary;
    vec![
        record.episode.to_string(),
        num(train.cost),
        num(train.reward()),
        num(record.mean_test_reward()),
        num(record.std_test_reward()),
        tests.len().to_string(),
        num(train.monitor_min),
        num(train.monitor_max),
        num(fold(|t| t.monitor_min, f64::INFINITY, f64::min)),
        num(fold(|t| t.monitor_max, f64::NEG_INFINITY, f64::max)),
        num(train.min_barrier),
        num(fold(|t| t.min_barrier, f64::INFINITY, f64::min)),
        violations.to_string(),
        train.infeasible.to_string(),
        test_infeasible.to_string(),
        record.train.active_count().to_string(),
        record.thompson_fallback.to_string(),
        record.model.as_ref().map_or(String::new(), |m| num(m.beta)),
        num(reference_cost),
        num(regret),
    ]
}

pub fn test_rows(record: &EpisodeRecord) -> Vec<Vec<String>> {
    record
        .tests
        .iter()
        .enumerate()
        .map(|(j, t)| {
            vec![
                record.episode.to_string(),
                j.to_string(),
                num(t.reward()),
                num(t.monitor_min),
                num(t.monitor_max),
                num(t.min_barrier),
                (t.min_barrier < 0.0).to_string(),
                t.infeasible.to_string(),
            ]
        })
        .collect()
}

pub fn write_trace(path: &Path, env: &Environment, trace: &EpisodeTrace) -> io::Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["step".to_string()];
    header.extend((0..env.state_dim()).map(|i| format!("x{i}")));
    header.extend((0..env.control_dim()).map(|i| format!("u{i}")));
    header.extend(["cost", "barrier", env.monitor_name(), "constraint_active", "qp_infeasible"].map(String::from));
    w.write_record(&header)?;
    for (h, s) in trace.steps.iter().enumerate() {
        let mut row = vec![h.to_string()];
        row.extend(s.state.iter().map(|v| num(*v)));
        row.extend(s.control.iter().map(|v| num(*v)));
        row.push(num(s.cost));
        row.push(num(s.barrier));
        row.push(num(env.monitor(s.state.as_slice())));
        row.push(s.constraint_active.to_string());
        row.push(s.qp_infeasible.to_string());
        w.write_record(&row)?;
    }
    w.flush()
}

/// Row-major nested arrays for any matrix-like value.
pub fn matrix_json(rows: usize, cols: usize, get: impl Fn(usize, usize) -> f64) -> Value {
    Value::Array(
        (0..rows)
            .map(|i| Value::Array((0..cols).map(|j| json!(get(i, j))).collect()))
            .collect(),
    )
}

pub fn model_json(episode: Option<usize>, model: &ModelSnapshot, record: Option<&EpisodeRecord>) -> Value {
    let e = &model.estimate;
    let s = &model.information;
    let sampled = record
        .and_then(|r| r.sampled_weights.as_ref())
        .map_or(Value::Null, |w| matrix_json(w.nrows(), w.ncols(), |i, j| w[(i, j)]));
    json!({
        "schema_version": SCHEMA_VERSION,
        "episode": episode,
        "beta": model.beta,
        "count": model.count,
        "estimate": matrix_json(e.nrows(), e.ncols(), |i, j| e[(i, j)]),
        "information": matrix_json(s.nrows(), s.ncols(), |i, j| s[(i, j)]),
        "sampled_weights": sampled,
        "thompson_fallback": record.map(|r| r.thompson_fallback),
    })
}

pub fn features_json(features: &FeatureMap) -> Value {
    match features {
        FeatureMap::Rff(map) => {
            let omega = map.omega();
            let d = map.input_dim();
            json!({
                "schema_version": SCHEMA_VERSION,
                "kind": "rff",
                "mode": format!("{:?}", map.mode()),
                "dim": map.dim(),
                "bandwidth": map.bandwidth(),
                "input_scale": map.input_scale(),
                "omega": matrix_json(map.dim(), d, |i, j| omega[i * d + j]),
                "phase": map.phase(),
            })
        }
        FeatureMap::Monomials(map) => json!({
            "schema_version": SCHEMA_VERSION,
            "kind": "monomials",
            "dim": map.dim(),
            "degree": map.degree(),
            "state_dim": map.state_dim(),
        }),
    }
}

pub fn write_json(path: &Path, value: &Value) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// Every file below `dir` except the manifest itself, as sorted relative paths.
pub fn list_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                out.push(path.strip_prefix(root).map_err(io::Error::other)?.to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// Writes `manifest.json` with the config hash, seed and the SHA-256 of every
/// other file in `dir`. Contains no timestamps, so reruns are byte-identical.
pub fn write_manifest(dir: &Path, config_text: &str, seed: u64, extra: Value) -> io::Result<()> {
    let mut files = serde_json::Map::new();
    for rel in list_files(dir)? {
        let bytes = fs::read(dir.join(&rel))?;
        let key = rel.iter().map(|c| c.to_string_lossy()).collect::<Vec<_>>().join("/");
        files.insert(key, json!(sha256_hex(&bytes)));
    }
    let mut manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "generator": concat!("safe-ctrl ", env!("CARGO_PKG_VERSION")),
        "config_sha256": sha256_hex(config_text.as_bytes()),
        "seed": seed,
        "files": files,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut manifest, extra) {
        m.extend(e);
    }
    write_json(&dir.join("manifest.json"), &manifest)
}
