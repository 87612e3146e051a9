//! The `verify` suites: Monte Carlo checks of the safety guarantees at fixed
//! trial counts, each reported as one JSON line.
//!
//! | suite      | check              | trials | horizon |
//! |------------|--------------------|--------|---------|
//! | `prop1`    | `filtered`         | 2000   | 100     |
//! | `prop1`    | `noiseless`        | 2000   | 100     |
//! | `prop1`    | `adversarial`      | 200    | 100     |
//! | `envelope` | `envelope`         | 5000   | 100     |
//! | `envelope` | `margin-disabled`  | 2000   | 200     |
//! | `thm1`     | `exact-model`      | 500    | 60      |
//! | `thm1`     | `biased-model`     | 500    | 60      |
//!
//! Checks marked as negative controls are expected to fail; a suite breaches
//! when any check disagrees with its expectation.

use anyhow::Result;
use serde_json::{json, Value};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use safe_ctrl_core::envs::{Environment, SyntheticParams};
use safe_ctrl_core::features::{FeatureMap, MonomialMap};
use safe_ctrl_core::verify::{
    verify_depth_bound, verify_forward_invariance, verify_noise_envelope, DepthReport, DepthSetup,
    InvariancePolicy, InvarianceSetup, RateReport,
};
use safe_ctrl_core::{ExperimentConfig, NoiseSpec};

pub const SUITES: [&str; 3] = ["prop1", "envelope", "thm1"];

pub const PROP1_TRIALS: usize = 2000;
pub const ENVELOPE_TRIALS: usize = 5000;
pub const DEPTH_TRIALS: usize = 500;
/// Prediction error injected into the constant weight for `thm1`.
pub const DEPTH_MODEL_ERROR: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub suite: &'static str,
    pub check: &'static str,
    /// `false` for negative controls.
    pub expect_pass: bool,
    pub pass: bool,
    pub details: Value,
}

impl CheckResult {
    pub fn ok(&self) -> bool {
        self.pass == self.expect_pass
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "suite": self.suite,
            "check": self.check,
            "expect_pass": self.expect_pass,
            "pass": self.pass,
            "ok": self.ok(),
        });
        if let (Value::Object(m), Value::Object(d)) = (&mut v, &self.details) {
            m.extend(d.clone());
        }
        v
    }
}

fn rate_json(r: &RateReport) -> Value {
    json!({
        "trials": r.trials,
        "failures": r.failures,
        "rate": r.rate,
        "bound": r.bound,
        "ci_low": r.ci_low,
        "ci_high": r.ci_high,
    })
}

fn depth_json(r: &DepthReport) -> Value {
    json!({
        "trials": r.trials,
        "worst_depth": r.worst_depth,
        "model_error": r.model_error,
        "trajectory_error": r.trajectory_error,
        "bound": r.bound,
        "within": r.within,
        "infeasible_steps": r.infeasible_steps,
    })
}

fn synthetic(cfg: &ExperimentConfig, noise: f64) -> Result<Environment> {
    Ok(Environment::synthetic(SyntheticParams {
        noise,
        ..cfg.synthetic.clone()
    })?)
}

fn invariance(
    cfg: &ExperimentConfig,
    noise: f64,
    policy: InvariancePolicy,
    horizon: usize,
    trials: usize,
) -> Result<InvarianceSetup> {
    let env = synthetic(cfg, noise)?;
    Ok(InvarianceSetup {
        x0: env.initial_state(),
        env,
        eta: cfg.eta,
        delta_s: cfg.delta_s,
        horizon,
        trials,
        seed: cfg.seed,
        margin_scale: cfg.margin_scale,
        policy,
    })
}

/// The nominal control that drives the synthetic state toward the barrier.
fn push_down(cfg: &ExperimentConfig) -> InvariancePolicy {
    InvariancePolicy::Filtered {
        nominal: constant_control(-cfg.synthetic.max_control),
    }
}

fn constant_control(v: f64) -> safe_ctrl_core::Control {
    safe_ctrl_core::Control::from_element(1, v)
}

pub fn prop1(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>> {
    let noise = cfg.synthetic.noise;
    let filtered = verify_forward_invariance(&invariance(cfg, noise, push_down(cfg), 100, PROP1_TRIALS)?)?;
    let noiseless = verify_forward_invariance(&invariance(cfg, 0.0, push_down(cfg), 100, PROP1_TRIALS)?)?;
    let unfiltered = InvariancePolicy::Unfiltered {
        nominal: constant_control(-cfg.synthetic.max_control),
    };
    let adversarial = verify_forward_invariance(&invariance(cfg, noise, unfiltered, 100, 200)?)?;
    Ok(vec![
        CheckResult {
            suite: "prop1",
            check: "filtered",
            expect_pass: true,
            pass: filtered.pass && (noise > 0.0 || filtered.failures == 0),
            details: rate_json(&filtered),
        },
        CheckResult {
            suite: "prop1",
            check: "noiseless",
            expect_pass: true,
            pass: noiseless.failures == 0,
            details: rate_json(&noiseless),
        },
        CheckResult {
            suite: "prop1",
            check: "adversarial",
            expect_pass: false,
            pass: adversarial.rate < 1.0,
            details: rate_json(&adversarial),
        },
    ])
}

pub fn envelope(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>> {
    let sigma = if cfg.synthetic.noise > 0.0 { cfg.synthetic.noise } else { 0.05 };
    let noise = NoiseSpec::new(vec![sigma; 2])?;
    let report = verify_noise_envelope(&noise, 100, cfg.delta_s, ENVELOPE_TRIALS, cfg.seed, cfg.margin_scale);
    // Negative control: the filter without its noise margin, a small δ_s and a
    // long horizon.
    let mut corrupted = cfg.clone();
    corrupted.margin_scale = 0.0;
    corrupted.delta_s = 0.01;
    let disabled = verify_forward_invariance(&invariance(&corrupted, sigma, push_down(cfg), 200, PROP1_TRIALS)?)?;
    Ok(vec![
        CheckResult {
            suite: "envelope",
            check: "envelope",
            expect_pass: true,
            pass: report.pass,
            details: rate_json(&report),
        },
        CheckResult {
            suite: "envelope",
            check: "margin-disabled",
            expect_pass: false,
            pass: disabled.pass,
            details: rate_json(&disabled),
        },
    ])
}

pub fn depth_setup(cfg: &ExperimentConfig, model_error: f64, trials: usize) -> Result<DepthSetup> {
    let env = synthetic(cfg, 0.0)?;
    let truth = env.true_weights().expect("the synthetic residual is linear in its features");
    let mut weights = truth.clone();
    weights[(0, 0)] += model_error;
    Ok(DepthSetup {
        env,
        features: FeatureMap::Monomials(MonomialMap::new(2, 1)),
        weights,
        true_weights: truth,
        eta: cfg.eta,
        delta_s: cfg.delta_s,
        horizon: 60,
        trials,
        seed: cfg.seed,
    })
}

pub fn thm1(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>> {
    let exact = verify_depth_bound(&depth_setup(cfg, 0.0, DEPTH_TRIALS)?)?;
    let biased = verify_depth_bound(&depth_setup(cfg, DEPTH_MODEL_ERROR, DEPTH_TRIALS)?)?;
    Ok(vec![
        CheckResult {
            suite: "thm1",
            check: "exact-model",
            expect_pass: true,
            pass: exact.worst_depth >= 0.0,
            details: depth_json(&exact),
        },
        CheckResult {
            suite: "thm1",
            check: "biased-model",
            expect_pass: true,
            pass: biased.worst_depth >= biased.bound - 1e-8,
            details: depth_json(&biased),
        },
    ])
}

pub fn run_suite(name: &str, cfg: &ExperimentConfig) -> Result<Vec<CheckResult>> {
    match name {
        "prop1" => prop1(cfg),
        "envelope" => envelope(cfg),
        "thm1" => thm1(cfg),
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s, cfg)?);
            }
            Ok(out)
        }
        other => anyhow::bail!("unknown suite `{other}` (expected prop1, thm1, envelope or all)"),
    }
}

/// Appends one JSON object per check to `path`.
pub fn append_results(path: &Path, results: &[CheckResult]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    for r in results {
        writeln!(file, "{}", r.to_json())?;
    }
    Ok(())
}
