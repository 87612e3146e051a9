//! Executes methods and persists one directory per method.

use anyhow::{Context, Result};
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};

use safe_ctrl_core::learner::{mean, regret_curve, EpisodeRecord, Experiment, Method, RunRecord};
use safe_ctrl_core::ExperimentConfig;

use crate::config::to_canonical;
use crate::output::{
    csv_writer, episode_row, features_json, model_json, test_rows, write_json, write_manifest, write_trace,
    EPISODE_HEADER, SCHEMA_VERSION, TEST_HEADER,
};

/// Names accepted by `--method`; `all` expands to [`Method::COMPARED`].
pub fn parse_methods(name: &str) -> Option<Vec<Method>> {
    if name == "all" {
        Some(Method::COMPARED.to_vec())
    } else {
        Method::parse(name).map(|m| vec![m])
    }
}

pub struct MethodRun {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub regret: Vec<f64>,
}

pub struct RunOutput {
    pub reference_cost: f64,
    pub methods: Vec<MethodRun>,
}

impl RunOutput {
    pub fn faulted(&self) -> bool {
        self.methods.iter().any(|m| m.record.fault.is_some())
    }
}

/// Runs every method on one shared experiment (same features, initial data
/// and reference cost) and writes `root/<method>/`.
pub fn run_methods(cfg: &ExperimentConfig, methods: &[Method], root: &Path) -> Result<RunOutput> {
    let exp = Experiment::new(cfg.clone()).context("building the experiment")?;
    let reference_cost = exp.reference_cost().context("computing the reference cost")?;
    let mut out = Vec::new();
    for &method in methods {
        let dir = root.join(method.as_str());
        let (record, regret) = run_one(&exp, method, reference_cost, &dir)
            .with_context(|| format!("writing {}", dir.display()))?;
        out.push(MethodRun { dir, record, regret });
    }
    Ok(RunOutput {
        reference_cost,
        methods: out,
    })
}

struct EpisodeSink {
    episodes: csv::Writer<fs::File>,
    tests: csv::Writer<fs::File>,
    cumulative: f64,
}

impl EpisodeSink {
    fn write(&mut self, exp: &Experiment, dir: &Path, e: &EpisodeRecord, reference: f64) -> Result<()> {
        self.cumulative += e.train_summary.cost - reference;
        self.episodes.write_record(episode_row(e, reference, self.cumulative))?;
        self.episodes.flush()?;
        for row in test_rows(e) {
            self.tests.write_record(row)?;
        }
        self.tests.flush()?;
        write_trace(&dir.join(format!("traces/train_{:03}.csv", e.episode)), &exp.env, &e.train)?;
        if let Some(m) = &e.model {
            write_json(
                &dir.join(format!("models/episode_{:03}.json", e.episode)),
                &model_json(Some(e.episode), m, Some(e)),
            )?;
        }
        Ok(())
    }
}

fn run_one(exp: &Experiment, method: Method, reference: f64, dir: &Path) -> Result<(RunRecord, Vec<f64>)> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir.join("traces"))?;
    if method.learns() {
        fs::create_dir_all(dir.join("models"))?;
    }
    let cfg = &exp.config;
    let config_text = to_canonical(cfg);
    fs::write(dir.join("config.txt"), &config_text)?;
    write_json(&dir.join("features.json"), &features_json(&exp.features))?;

    let mut episodes = csv_writer(&dir.join("episodes.csv"))?;
    episodes.write_record(EPISODE_HEADER)?;
    let mut tests = csv_writer(&dir.join("tests.csv"))?;
    tests.write_record(TEST_HEADER)?;
    let mut sink = EpisodeSink {
        episodes,
        tests,
        cumulative: 0.0,
    };
    // Episodes are written as they finish so an interrupted run keeps them.
    let mut io_error = None;
    let record = exp.run_with(method, &mut |e| {
        if io_error.is_none() {
            io_error = sink.write(exp, dir, e, reference).err();
        }
    });
    if let Some(err) = io_error {
        return Err(err);
    }
    if let Some(m) = &record.initial_model {
        write_json(&dir.join("models/initial.json"), &model_json(None, m, None))?;
    }

    let regret = regret_curve(&record.train_costs(), reference);
    let done = record.episodes.len();
    let tail = &record.episodes[done.saturating_sub(10)..];
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "method": method.as_str(),
        "env": cfg.env.as_str(),
        "seed": cfg.seed,
        "episodes_requested": cfg.episodes,
        "episodes_completed": done,
        "horizon": cfg.horizon,
        "reference_cost": reference,
        "final_regret": regret.last(),
        "final10_mean_test_reward": mean(tail.iter().map(EpisodeRecord::mean_test_reward)),
        "test_violations": record.episodes.iter().flat_map(|e| &e.tests).filter(|t| t.min_barrier < 0.0).count(),
        "train_violations": record.episodes.iter().filter(|e| e.train_summary.min_barrier < 0.0).count(),
        "infeasible_steps": record.episodes.iter().map(|e| e.train_summary.infeasible + e.tests.iter().map(|t| t.infeasible).sum::<usize>()).sum::<usize>(),
        "thompson_fallbacks": record.episodes.iter().filter(|e| e.thompson_fallback).count(),
        "fault": record.fault.as_ref().map(|f| f.to_string()),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    write_manifest(
        dir,
        &config_text,
        cfg.seed,
        json!({ "method": method.as_str(), "env": cfg.env.as_str() }),
    )?;
    Ok((record, regret))
}
