//! Aggregates per-episode CSVs of several runs into mean/std curves per method.

use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use safe_ctrl_core::learner::{mean, std_dev};

use crate::config::{config_from_pairs, parse_pairs};
use crate::output::num;

/// One method directory: its episodes and the settings that must agree.
struct MethodDir {
    path: PathBuf,
    method: String,
    env: String,
    horizon: usize,
    rows: Vec<BTreeMap<String, f64>>,
}

fn read_method_dir(path: &Path) -> Result<MethodDir> {
    let text = fs::read_to_string(path.join("config.txt"))
        .with_context(|| format!("reading {}", path.join("config.txt").display()))?;
    let cfg = config_from_pairs(&parse_pairs(&text)?).with_context(|| format!("parsing config of {}", path.display()))?;
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(path.join("summary.json"))?)
        .with_context(|| format!("parsing summary of {}", path.display()))?;
    let method = summary["method"]
        .as_str()
        .with_context(|| format!("{} has no method name", path.display()))?
        .to_string();
    let mut reader = csv::Reader::from_path(path.join("episodes.csv"))?;
    let headers = reader.headers()?.clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = headers
            .iter()
            .zip(record.iter())
            .map(|(h, v)| (h.to_string(), v.parse::<f64>().unwrap_or(f64::NAN)))
            .collect();
        rows.push(row);
    }
    Ok(MethodDir {
        path: path.to_path_buf(),
        method,
        env: cfg.env.as_str().to_string(),
        horizon: cfg.horizon,
        rows,
    })
}

/// Accepts either method directories or run roots holding method directories.
fn expand(dirs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for dir in dirs {
        if dir.join("episodes.csv").is_file() {
            out.push(dir.clone());
            continue;
        }
        let mut children: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("episodes.csv").is_file())
            .collect();
        if children.is_empty() {
            bail!("{} holds no run output", dir.display());
        }
        children.sort();
        out.extend(children);
    }
    Ok(out)
}

/// Builds the comparison table. Pendulum tables carry `max_theta`/`min_theta`
/// curves; the others carry the smallest barrier value `min_h`.
pub fn compare(dirs: &[PathBuf]) -> Result<String> {
    if dirs.is_empty() {
        bail!("compare needs at least one run directory");
    }
    let runs = expand(dirs)?
        .iter()
        .map(|p| read_method_dir(p))
        .collect::<Result<Vec<_>>>()?;
    let first = &runs[0];
    for r in &runs[1..] {
        if r.horizon != first.horizon {
            bail!(
                "mismatched horizons: {} has {} but {} has {}",
                first.path.display(),
                first.horizon,
                r.path.display(),
                r.horizon
            );
        }
        if r.env != first.env {
            bail!(
                "mismatched environments: {} is {} but {} is {}",
                first.path.display(),
                first.env,
                r.path.display(),
                r.env
            );
        }
    }
    let curves: &[(&str, &str)] = if first.env == "pendulum" {
        &[("max_theta", "test_monitor_max"), ("min_theta", "test_monitor_min")]
    } else {
        &[("min_h", "test_min_barrier")]
    };

    let mut by_method: BTreeMap<&str, Vec<&MethodDir>> = BTreeMap::new();
    for r in &runs {
        by_method.entry(r.method.as_str()).or_default().push(r);
    }

    let mut header = vec!["method", "episode", "seeds", "reward_mean", "reward_std"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for (name, _) in curves {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    header.extend(["regret_mean", "regret_std"].map(String::from));

    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    out.write_record(&header)?;
    for (method, group) in by_method {
        let episodes = group.iter().map(|g| g.rows.len()).max().unwrap_or(0);
        for ep in 0..episodes {
            let present: Vec<&BTreeMap<String, f64>> = group.iter().filter_map(|g| g.rows.get(ep)).collect();
            let column = |name: &str| -> Vec<f64> {
                present.iter().map(|r| r.get(name).copied().unwrap_or(f64::NAN)).collect()
            };
            let mut row = vec![method.to_string(), ep.to_string(), present.len().to_string()];
            for name in std::iter::once("mean_test_reward")
                .chain(curves.iter().map(|c| c.1))
                .chain(std::iter::once("regret"))
            {
                let values = column(name);
                row.push(num(mean(values.iter().copied())));
                row.push(num(std_dev(values.iter().copied())));
            }
            out.write_record(&row)?;
        }
    }
    Ok(String::from_utf8(out.into_inner()?)?)
}
