//! Value types, seeded random streams and the experiment configuration.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::envs::{EnvId, PendulumParams, SyntheticParams, UnicycleParams};
use crate::error::{Error, Result};
use crate::planner::MppiConfig;

/// State `x` in the environment's units.
pub type State = DVector<f64>;
/// Control `u`.
pub type Control = DVector<f64>;
/// Random source used throughout the simulator.
pub type SimRng = ChaCha8Rng;

/// Per-coordinate control limits `[u⁻, u⁺]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl ControlBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        crate::error::check_dim("control upper bound", lower.len(), upper.len())?;
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u))
        {
            return Err(Error::InvalidConfig {
                key: "control_bounds",
                reason: "bounds must be finite with lower <= upper".into(),
            });
        }
        Ok(Self {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    pub fn symmetric(limit: f64, dim: usize) -> Result<Self> {
        Self::new(alloc::vec![-limit; dim], alloc::vec![limit; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// `u⁺ − u⁻` per coordinate.
    pub fn range(&self) -> DVector<f64> {
        &self.upper - &self.lower
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        u.len() == self.dim()
            && u
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len(),
            u.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(v, (l, h))| v.clamp(*l, *h)),
        )
    }

    pub fn clamp_in_place(&self, u: &mut [f64]) {
        for (v, (l, h)) in u.iter_mut().zip(self.lower.iter().zip(self.upper.iter())) {
            *v = v.clamp(*l, *h);
        }
    }
}

/// Diagonal Gaussian process noise `ε ~ N(0, diag(σ₁², …, σₙ²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    sigmas: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidConfig {
                key: "noise_sigma",
                reason: "standard deviations must be finite and nonnegative".into(),
            });
        }
        Ok(Self { sigmas })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            sigmas: alloc::vec![0.0; dim],
        }
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn dim(&self) -> usize {
        self.sigmas.len()
    }

    /// σ̄, the largest per-coordinate standard deviation.
    pub fn sigma_bar(&self) -> f64 {
        self.sigmas.iter().copied().fold(0.0, f64::max)
    }

    pub fn sample(&self, rng: &mut SimRng) -> DVector<f64> {
        sample_gaussian_noise(self, rng)
    }
}

/// Draws one noise vector; coordinate `i` has standard deviation `σᵢ`.
pub fn sample_gaussian_noise(spec: &NoiseSpec, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_iterator(
        spec.dim(),
        spec.sigmas.iter().map(|s| {
            let g: f64 = rng.sample(StandardNormal);
            s * g
        }),
    )
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Reproducible random stream keyed by `(seed, label)`.
pub fn seeded_rng(seed: u64, stream: &str) -> SimRng {
    substream(seed, stream, 0)
}

/// Reproducible random stream keyed by `(seed, label, index)`; used to give
/// every episode and test trial its own stream.
pub fn substream(seed: u64, stream: &str, index: u64) -> SimRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(stream).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"safectrl");
    ChaCha8Rng::from_seed(key)
}

/// One executed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub state: State,
    pub control: Control,
    pub cost: f64,
    pub next_state: State,
    /// Smallest barrier value at `state` (all barriers of the environment).
    pub barrier: f64,
    /// The safety filter moved the nominal control.
    pub constraint_active: bool,
    /// The QP had no feasible point and the max-margin fallback was used.
    pub qp_infeasible: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
}

impl EpisodeTrace {
    pub fn with_capacity(horizon: usize) -> Self {
        Self {
            steps: Vec::with_capacity(horizon),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Σₕ c(xₕ, uₕ).
    pub fn cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    pub fn infeasible_count(&self) -> usize {
        self.steps.iter().filter(|s| s.qp_infeasible).count()
    }

    pub fn active_count(&self) -> usize {
        self.steps.iter().filter(|s| s.constraint_active).count()
    }

    /// Smallest barrier value over the visited states, including the final one.
    pub fn min_barrier(&self, final_barrier: impl Fn(&State) -> f64) -> f64 {
        let mut m = self
            .steps
            .iter()
            .map(|s| s.barrier)
            .fold(f64::INFINITY, f64::min);
        if let Some(last) = self.steps.last() {
            m = m.min(final_barrier(&last.next_state));
        }
        m
    }
}

/// Every hyperparameter of an experiment. Replaying a run with the same value
/// reproduces it bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub seed: u64,
    /// Number of training episodes `T`.
    pub episodes: usize,
    /// Episode length `H`.
    pub horizon: usize,
    /// Ridge regularizer `λ`.
    pub ridge_lambda: f64,
    /// Assumed bound `C₁ ≥ ‖W*‖₂`; also the norm cap of the confidence ball.
    pub norm_bound: f64,
    pub delta: f64,
    pub delta_s: f64,
    pub eta: f64,
    /// Calibration error level `ε` assumed for the initial ball.
    pub epsilon: f64,
    pub thompson_scale: f64,
    pub thompson_max_attempts: usize,
    /// Thompson draws per episode; the draw with the lowest planned cost wins.
    pub thompson_draws: usize,
    /// Size `N` of the initial data set.
    pub initial_samples: usize,
    pub feature_dim: usize,
    pub feature_bandwidth: f64,
    pub mppi: MppiConfig,
    pub test_trials: usize,
    pub reference_episodes: usize,
    pub random_initial_state: bool,
    /// Multiplies the stochastic barrier margin; `0` disables it.
    pub margin_scale: f64,
    pub pendulum: PendulumParams,
    pub unicycle: UnicycleParams,
    pub synthetic: SyntheticParams,
}

impl ExperimentConfig {
    /// Defaults for one environment.
    pub fn preset(env: EnvId) -> Self {
        let base = Self {
            env,
            seed: 0,
            episodes: 50,
            horizon: 200,
            ridge_lambda: 1.0,
            norm_bound: 10.0,
            delta: 0.05,
            delta_s: 0.05,
            eta: 0.5,
            epsilon: 0.05,
            thompson_scale: 1.0,
            thompson_max_attempts: 50,
            thompson_draws: 1,
            initial_samples: 50,
            feature_dim: 100,
            feature_bandwidth: 1.0,
            mppi: MppiConfig::default(),
            test_trials: 20,
            reference_episodes: 100,
            random_initial_state: false,
            margin_scale: 1.0,
            pendulum: PendulumParams::default(),
            unicycle: UnicycleParams::default(),
            synthetic: SyntheticParams::default(),
        };
        match env {
            EnvId::Pendulum => Self {
                horizon: 200,
                ridge_lambda: 0.1,
                norm_bound: 20.0,
                eta: 0.5,
                thompson_scale: 0.3,
                initial_samples: 8,
                feature_dim: 20,
                feature_bandwidth: 1.0,
                mppi: MppiConfig {
                    rollouts: 32,
                    horizon: 25,
                    temperature: 1.0,
                    exploration: 0.5,
                },
                ..base
            },
            EnvId::Unicycle | EnvId::UnicycleObstacle => Self {
                episodes: 10,
                horizon: 100,
                ridge_lambda: 0.1,
                norm_bound: 50.0,
                eta: 0.3,
                thompson_scale: 0.05,
                initial_samples: 30,
                feature_dim: 80,
                feature_bandwidth: 1.0,
                test_trials: 5,
                reference_episodes: 20,
                mppi: MppiConfig {
                    rollouts: 128,
                    horizon: 25,
                    temperature: 1.0,
                    exploration: 0.4,
                },
                ..base
            },
            EnvId::SyntheticLinear => Self {
                episodes: 10,
                horizon: 50,
                ridge_lambda: 1.0,
                norm_bound: 5.0,
                thompson_scale: 0.05,
                initial_samples: 20,
                feature_dim: 3,
                test_trials: 2,
                reference_episodes: 10,
                mppi: MppiConfig {
                    rollouts: 64,
                    horizon: 10,
                    temperature: 1.0,
                    exploration: 0.3,
                },
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(key: &'static str, reason: impl Into<String>) -> Result<()> {
            Err(Error::InvalidConfig {
                key,
                reason: reason.into(),
            })
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if self.episodes == 0 {
            return bad("episodes", "must be at least 1");
        }
        if self.horizon == 0 {
            return bad("horizon", "must be at least 1");
        }
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda > 0.0) {
            return bad("ridge_lambda", "must be positive");
        }
        if !(self.norm_bound.is_finite() && self.norm_bound > 0.0) {
            return bad("norm_bound", "must be positive");
        }
        if !unit(self.delta) {
            return bad("delta", "must lie in (0, 1)");
        }
        if !unit(self.delta_s) {
            return bad("delta_s", "must lie in (0, 1)");
        }
        if !unit(self.eta) {
            return bad("eta", "must lie in (0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if !(self.thompson_scale.is_finite() && self.thompson_scale >= 0.0) {
            return bad("thompson_scale", "must be nonnegative");
        }
        if self.thompson_max_attempts == 0 {
            return bad("thompson_max_attempts", "must be at least 1");
        }
        if self.thompson_draws == 0 {
            return bad("thompson_draws", "must be at least 1");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be at least 1");
        }
        if !(self.feature_bandwidth.is_finite() && self.feature_bandwidth > 0.0) {
            return bad("feature_bandwidth", "must be positive");
        }
        if self.mppi.rollouts == 0 {
            return bad("mppi.rollouts", "must be at least 1");
        }
        if self.mppi.horizon == 0 {
            return bad("mppi.horizon", "must be at least 1");
        }
        if !(self.mppi.temperature.is_finite() && self.mppi.temperature > 0.0) {
            return bad("mppi.temperature", "must be positive");
        }
        if !(self.mppi.exploration.is_finite() && self.mppi.exploration > 0.0) {
            return bad("mppi.exploration", "must be positive");
        }
        if !(self.margin_scale.is_finite() && self.margin_scale >= 0.0) {
            return bad("margin_scale", "must be nonnegative");
        }
        match self.env {
            EnvId::Pendulum => self.pendulum.validate(),
            EnvId::Unicycle | EnvId::UnicycleObstacle => self.unicycle.validate(),
            EnvId::SyntheticLinear => self.synthetic.validate(),
        }
        .map_err(|e| match e {
            Error::InvalidConfig { key, reason } => Error::InvalidConfig {
                key,
                reason: format!("{reason} (environment {})", self.env.as_str()),
            },
            other => other,
        })
    }
}
