//! Monte Carlo checks of the probabilistic safety guarantees.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::cbf::{check_exact, noise_envelope};
use crate::domain::{seeded_rng, substream, NoiseSpec};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::filter::FilterStatus;
use crate::learner::{FilterMode, SafetyLayer};
use crate::model::ResidualModel;

/// `δ_s + 3√(δ_s/M)`: three-sigma binomial slack above a target rate.
pub fn binomial_bound(delta_s: f64, trials: usize) -> f64 {
    delta_s + 3.0 * libm::sqrt(delta_s / trials as f64)
}

/// 95% Wilson score interval for `failures` out of `trials`.
pub fn wilson_interval(failures: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = failures as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * libm::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// An observed event rate compared against an upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub trials: usize,
    pub failures: usize,
    pub rate: f64,
    pub bound: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub pass: bool,
}

impl RateReport {
    fn new(failures: usize, trials: usize, bound: f64) -> Self {
        let rate = failures as f64 / trials.max(1) as f64;
        let (ci_low, ci_high) = wilson_interval(failures, trials);
        Self {
            trials,
            failures,
            rate,
            bound,
            ci_low,
            ci_high,
            pass: rate <= bound,
        }
    }
}

/// Closed-loop policy whose safety is measured.
#[derive(Debug, Clone, PartialEq)]
pub enum InvariancePolicy {
    /// `nominal` filtered by the barrier constraint with the exact residual.
    Filtered { nominal: DVector<f64> },
    /// `nominal` applied as is.
    Unfiltered { nominal: DVector<f64> },
}

#[derive(Debug, Clone)]
pub struct InvarianceSetup {
    pub env: Environment,
    pub x0: DVector<f64>,
    pub eta: f64,
    pub delta_s: f64,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    /// Multiplies the noise margin; `0` disables it.
    pub margin_scale: f64,
    pub policy: InvariancePolicy,
}

/// Fraction of trajectories whose barrier value drops below zero at some
/// step, against the bound `δ_s + 3√(δ_s/M)`.
pub fn verify_forward_invariance(setup: &InvarianceSetup) -> Result<RateReport> {
    let env = &setup.env;
    if !(env.barrier_value(setup.x0.as_slice()) > 0.0) {
        return Err(Error::InvalidConfig {
            key: "x0",
            reason: "initial state must be strictly safe".into(),
        });
    }
    let safety = SafetyLayer::new(env, setup.eta, setup.delta_s, setup.horizon, setup.margin_scale);
    let mut failures = 0;
    for i in 0..setup.trials {
        let mut rng = substream(setup.seed, "noise", i as u64);
        let mut x = setup.x0.clone();
        let mut violated = false;
        for _ in 0..setup.horizon {
            let u = match &setup.policy {
                InvariancePolicy::Filtered { nominal } => {
                    safety.filter(env, FilterMode::Known, x.as_slice(), nominal).0
                }
                InvariancePolicy::Unfiltered { nominal } => env.bounds().clamp(nominal),
            };
            x = env.step_true(&x, &u, &mut rng)?;
            if env.barrier_value(x.as_slice()) < 0.0 {
                violated = true;
                break;
            }
        }
        if violated {
            failures += 1;
        }
    }
    Ok(RateReport::new(
        failures,
        setup.trials,
        binomial_bound(setup.delta_s, setup.trials),
    ))
}

/// Fraction of `H`-step noise sequences in which some coordinate exceeds
/// `scale·σ̄√(2 ln(Hn/δ_s))`; `scale = 1` is the envelope itself.
pub fn verify_noise_envelope(
    noise: &NoiseSpec,
    horizon: usize,
    delta_s: f64,
    trials: usize,
    seed: u64,
    scale: f64,
) -> RateReport {
    let n = noise.dim();
    let p = scale * noise_envelope(noise.sigma_bar(), n, horizon, delta_s);
    let mut failures = 0;
    for i in 0..trials {
        let mut rng = substream(seed, "noise", i as u64);
        let mut exceeded = false;
        for _ in 0..horizon {
            let eps = noise.sample(&mut rng);
            exceeded |= eps.iter().any(|e| e.abs() > p);
        }
        if exceeded {
            failures += 1;
        }
    }
    RateReport::new(failures, trials, binomial_bound(delta_s, trials))
}

#[derive(Debug, Clone)]
pub struct DepthSetup {
    /// A one-dimensional environment whose residual is representable by
    /// `features`.
    pub env: Environment,
    pub features: FeatureMap,
    /// The model used by the filter.
    pub weights: DMatrix<f64>,
    pub true_weights: DMatrix<f64>,
    pub eta: f64,
    pub delta_s: f64,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthReport {
    /// Smallest barrier value over all trajectories and steps.
    pub worst_depth: f64,
    /// `max ‖(W̃ − W*)φ‖₂` over a grid of the state box.
    pub model_error: f64,
    /// Largest model error met along the simulated trajectories.
    pub trajectory_error: f64,
    /// `−L·ε/η`.
    pub bound: f64,
    /// Trajectories whose depth stays above the bound (to `1e-8`).
    pub within: usize,
    pub trials: usize,
    pub infeasible_steps: usize,
    pub pass: bool,
}

const GRID_POINTS: usize = 2001;

/// Worst barrier depth reached by the filter that trusts `W̃`, against
/// `−L·ε/η` where `ε` is the measured model error. The filter enforces the
/// exact constraint for `W̃`; the constant nominal controls, drawn from
/// `[u⁻, 0]`, push toward the boundary.
pub fn verify_depth_bound(setup: &DepthSetup) -> Result<DepthReport> {
    let env = &setup.env;
    if env.state_dim() != 1 || env.barriers().len() != 1 {
        return Err(Error::InvalidConfig {
            key: "env",
            reason: "depth check needs a one-dimensional environment with one barrier".into(),
        });
    }
    let (lo, hi) = env.state_box();
    let (grid_lo, grid_hi) = (lo[0] - 1.0, hi[0]);
    let diff = &setup.weights - &setup.true_weights;
    let error_at = |x: f64| -> f64 {
        let phi = setup.features.eval(&[x], &[]);
        (&diff * phi).norm()
    };
    let model_error = (0..GRID_POINTS)
        .map(|i| error_at(grid_lo + (grid_hi - grid_lo) * i as f64 / (GRID_POINTS - 1) as f64))
        .fold(0.0, f64::max);
    let lipschitz = env.barriers()[0].lipschitz();
    let bound = -lipschitz * model_error / setup.eta;
    let safety = SafetyLayer::new(env, setup.eta, setup.delta_s, setup.horizon, 1.0);
    let mode = FilterMode::Signed {
        weights: &setup.weights,
        features: &setup.features,
    };
    let mut worst = f64::INFINITY;
    let mut trajectory_error: f64 = 0.0;
    let mut within = 0;
    let mut infeasible_steps = 0;
    for i in 0..setup.trials {
        let mut rng = substream(setup.seed, "depth", i as u64);
        let mut x = DVector::from_element(1, rng.gen_range(lo[0]..=hi[0]).max(1e-3));
        let lower = env.bounds().lower()[0];
        let nominal = DVector::from_element(1, rng.gen_range(lower..=0.0));
        let mut depth = env.barrier_value(x.as_slice());
        let mut noise_rng = substream(setup.seed, "noise", i as u64);
        for _ in 0..setup.horizon {
            trajectory_error = trajectory_error.max(error_at(x[0]));
            let (u, status) = safety.filter(env, mode, x.as_slice(), &nominal);
            if status == FilterStatus::InfeasibleFallback {
                infeasible_steps += 1;
            }
            x = env.step_true(&x, &u, &mut noise_rng)?;
            depth = depth.min(env.barrier_value(x.as_slice()));
        }
        worst = worst.min(depth);
        if depth >= bound - 1e-8 {
            within += 1;
        }
    }
    let required = if env.noise().sigma_bar() == 0.0 {
        setup.trials
    } else {
        libm::ceil((1.0 - setup.delta_s) * setup.trials as f64) as usize
    };
    Ok(DepthReport {
        worst_depth: worst,
        model_error,
        trajectory_error,
        bound,
        within,
        trials: setup.trials,
        infeasible_steps,
        pass: within >= required && infeasible_steps == 0,
    })
}

/// Barrier values along a trajectory, with the realized noise, for auditing
/// the one-step recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionAudit {
    pub barrier: Vec<f64>,
    pub noise: Vec<DVector<f64>>,
}

/// Simulates the signed-filter policy and records the barrier sequence and
/// noise draws.
pub fn audit_recursion(setup: &DepthSetup, x0: f64, nominal: f64, seed: u64) -> Result<RecursionAudit> {
    let env = &setup.env;
    let safety = SafetyLayer::new(env, setup.eta, setup.delta_s, setup.horizon, 1.0);
    let mode = FilterMode::Signed {
        weights: &setup.weights,
        features: &setup.features,
    };
    let mut rng = substream(seed, "noise", 0);
    let mut x = DVector::from_element(1, x0);
    let u_star = DVector::from_element(1, nominal);
    let mut barrier = vec![env.barrier_value(x.as_slice())];
    let mut noise = Vec::with_capacity(setup.horizon);
    for _ in 0..setup.horizon {
        let (u, _) = safety.filter(env, mode, x.as_slice(), &u_star);
        let eps = env.noise().sample(&mut rng);
        let d = env.residual(x.as_slice(), u.as_slice()) + &eps;
        x = env.step_nominal(&x, &u, &d)?;
        barrier.push(env.barrier_value(x.as_slice()));
        noise.push(eps);
    }
    Ok(RecursionAudit { barrier, noise })
}

/// Counts of the search for controls that satisfy the linearized learned
/// constraint but not the exact one-step condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImplicationReport {
    pub samples: usize,
    /// (sample, barrier) pairs where the linear constraint held.
    pub linear_held: usize,
    pub counterexamples: usize,
}

/// Draws `samples` triples `(x, u, W̃)` with `x` safe, `W̃ ∈ Ball₀` (fresh every
/// ten samples) and `u` either the filter output or a uniform control, and
/// checks that the linear constraint implies the exact condition under `W̃`.
pub fn verify_implication(
    env: &Environment,
    features: &FeatureMap,
    model: &ResidualModel,
    safety: &SafetyLayer,
    samples: usize,
    seed: u64,
) -> ImplicationReport {
    let mut rng = seeded_rng(seed, "implication");
    let draw = |rng: &mut crate::SimRng| loop {
        let scale = rng.gen_range(0.05..2.0);
        let (w, fallback) = model.thompson_sample(scale, rng, 20);
        if !fallback && model.ball0().contains(&w) {
            return w;
        }
    };
    let mut w = draw(&mut rng);
    let mut next = vec![0.0; env.state_dim()];
    let mut report = ImplicationReport {
        samples,
        linear_held: 0,
        counterexamples: 0,
    };
    for i in 0..samples {
        if i % 10 == 0 {
            w = draw(&mut rng);
        }
        let mode = FilterMode::Learned {
            weights: &w,
            features,
        };
        let x = env.sample_safe_state(&mut rng);
        let u_star = env.sample_control(&mut rng);
        let u = if i % 2 == 0 {
            safety.filter(env, mode, x.as_slice(), &u_star).0
        } else {
            env.sample_control(&mut rng)
        };
        let cs = safety.constraints(env, mode, x.as_slice(), u_star.as_slice());
        let d = &w * features.eval(x.as_slice(), u.as_slice());
        env.predict_into(x.as_slice(), u.as_slice(), d.as_slice(), &mut next);
        for ((c, b), margin) in cs.iter().zip(env.barriers()).zip(&safety.margins) {
            if c.slack(u.as_slice()) >= 0.0 {
                report.linear_held += 1;
                if !check_exact(b, x.as_slice(), &next, *margin, safety.spec.eta) {
                    report.counterexamples += 1;
                }
            }
        }
    }
    report
}
