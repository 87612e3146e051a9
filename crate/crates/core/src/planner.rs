//! Model predictive path integral (MPPI) planning over a dynamics model.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{ControlBounds, SimRng};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::features::FeatureMap;

/// Cost assigned to rollouts that leave the finite range.
pub const DIVERGED_COST: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct MppiConfig {
    /// Number of sampled rollouts `K`.
    pub rollouts: usize,
    /// Planning horizon `H_p` (capped at the episode length).
    pub horizon: usize,
    pub temperature: f64,
    /// Exploration std as a fraction of each control's half-range.
    pub exploration: f64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            rollouts: 512,
            horizon: 30,
            temperature: 1.0,
            exploration: 0.3,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &'static str, reason: &str| {
            Err(Error::InvalidConfig {
                key,
                reason: reason.into(),
            })
        };
        if self.rollouts == 0 {
            return bad("mppi.rollouts", "need at least one rollout");
        }
        if self.horizon == 0 {
            return bad("mppi.horizon", "must be at least 1");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("mppi.temperature", "must be positive");
        }
        if !(self.exploration.is_finite() && self.exploration > 0.0) {
            return bad("mppi.exploration", "must be positive");
        }
        Ok(())
    }
}

/// Dynamics used inside rollouts.
#[derive(Debug, Clone, Copy)]
pub enum PlanningModel<'a> {
    /// `F̂ + Ĝu + d*`, the noiseless true system.
    Truth,
    /// `F̂ + Ĝu`.
    Nominal,
    /// `F̂ + Ĝu + W̃φ(x, u)`.
    Learned {
        weights: &'a DMatrix<f64>,
        features: &'a FeatureMap,
    },
}

/// Scratch space for allocation-free model steps.
#[derive(Debug, Clone)]
pub struct StepBuffers {
    residual: Vec<f64>,
    phi: Vec<f64>,
    zero_control: Vec<f64>,
}

impl StepBuffers {
    pub fn new(n: usize, m: usize, r: usize) -> Self {
        Self {
            residual: vec![0.0; n],
            phi: vec![0.0; r],
            zero_control: vec![0.0; m],
        }
    }
}

impl PlanningModel<'_> {
    pub fn buffers(&self, env: &Environment) -> StepBuffers {
        let r = match self {
            PlanningModel::Learned { features, .. } => features.dim(),
            _ => 0,
        };
        StepBuffers::new(env.state_dim(), env.control_dim(), r)
    }

    /// Mean next state under the model.
    pub fn step_into(&self, env: &Environment, x: &[f64], u: &[f64], buf: &mut StepBuffers, out: &mut [f64]) {
        match self {
            PlanningModel::Truth => env.residual_into(x, u, &mut buf.residual),
            PlanningModel::Nominal => buf.residual.iter_mut().for_each(|v| *v = 0.0),
            PlanningModel::Learned { weights, features } => {
                features.eval_into(x, u, &mut buf.phi);
                for (i, d) in buf.residual.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, p) in buf.phi.iter().enumerate() {
                        acc += weights[(i, j)] * p;
                    }
                    *d = acc;
                }
            }
        }
        env.predict_into(x, u, &buf.residual, out);
    }

    /// Predicted residual at `(x, u)`.
    pub fn residual(&self, env: &Environment, x: &[f64], u: &[f64]) -> DVector<f64> {
        let mut buf = self.buffers(env);
        let mut out = vec![0.0; env.state_dim()];
        self.step_into(env, x, u, &mut buf, &mut out);
        DVector::from_vec(buf.residual)
    }
}

/// `Σₕ c(xₕ, uₕ) + c(x_{H_p}, 0)` along the model's mean dynamics; `controls`
/// is row-major `H_p × m`. Diverging rollouts cost [`DIVERGED_COST`] and
/// return `false`.
pub fn rollout_cost(
    env: &Environment,
    model: &PlanningModel<'_>,
    x0: &[f64],
    controls: &[f64],
    buf: &mut StepBuffers,
    state: &mut [f64],
    next: &mut [f64],
) -> (f64, bool) {
    let m = env.control_dim();
    state.copy_from_slice(x0);
    let mut total = 0.0;
    for u in controls.chunks_exact(m) {
        total += env.cost(state, u);
        model.step_into(env, state, u, buf, next);
        if !next.iter().all(|v| v.is_finite()) {
            return (DIVERGED_COST, false);
        }
        state.copy_from_slice(next);
    }
    total += env.cost(state, &buf.zero_control);
    if total.is_finite() {
        (total, true)
    } else {
        (DIVERGED_COST, false)
    }
}

/// `wᵢ ∝ exp(−(Sᵢ − min S)/τ)`, normalized.
pub fn mppi_weights(costs: &[f64], temperature: f64) -> Vec<f64> {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs
        .iter()
        .map(|s| libm::exp(-(s - min) / temperature))
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Result of one planning step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutput {
    pub control: DVector<f64>,
    pub best_cost: f64,
    pub effective_samples: f64,
    /// Every rollout diverged; the previous nominal control was returned.
    pub degenerate: bool,
}

/// Receding-horizon MPPI planner with a warm-started nominal sequence.
#[derive(Debug, Clone)]
pub struct Mppi {
    config: MppiConfig,
    bounds: ControlBounds,
    std: Vec<f64>,
    nominal: Vec<f64>,
    samples: Vec<f64>,
    costs: Vec<f64>,
}

impl Mppi {
    /// Planner with horizon `min(H_p, episode_horizon)`.
    pub fn new(config: MppiConfig, bounds: ControlBounds, episode_horizon: usize) -> Self {
        let m = bounds.dim();
        let hp = config.horizon.min(episode_horizon).max(1);
        let std = bounds
            .range()
            .iter()
            .map(|r| config.exploration * r / 2.0)
            .collect();
        let mut nominal = vec![0.0; hp * m];
        for row in nominal.chunks_exact_mut(m) {
            bounds.clamp_in_place(row);
        }
        Self {
            samples: vec![0.0; config.rollouts * hp * m],
            costs: vec![0.0; config.rollouts],
            config,
            bounds,
            std,
            nominal,
        }
    }

    pub fn horizon(&self) -> usize {
        self.nominal.len() / self.bounds.dim()
    }

    /// Row-major `H_p × m` warm-start sequence.
    pub fn nominal(&self) -> &[f64] {
        &self.nominal
    }

    pub fn reset(&mut self) {
        let m = self.bounds.dim();
        self.nominal.iter_mut().for_each(|v| *v = 0.0);
        for row in self.nominal.chunks_exact_mut(m) {
            self.bounds.clamp_in_place(row);
        }
    }

    /// Plans from `x` and returns the first control; shifts the sequence.
    pub fn plan_step(
        &mut self,
        env: &Environment,
        model: &PlanningModel<'_>,
        x: &[f64],
        rng: &mut SimRng,
    ) -> PlanOutput {
        let m = self.bounds.dim();
        let len = self.nominal.len();
        let k = self.config.rollouts;
        for s in 0..k {
            let seq = &mut self.samples[s * len..(s + 1) * len];
            seq.copy_from_slice(&self.nominal);
            if s > 0 {
                for (i, v) in seq.iter_mut().enumerate() {
                    let g: f64 = StandardNormal.sample(rng);
                    *v += self.std[i % m] * g;
                }
                for row in seq.chunks_exact_mut(m) {
                    self.bounds.clamp_in_place(row);
                }
            }
        }
        let mut buf = model.buffers(env);
        let n = env.state_dim();
        let mut state = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut any_finite = false;
        for s in 0..k {
            let seq = &self.samples[s * len..(s + 1) * len];
            let (c, ok) = rollout_cost(env, model, x, seq, &mut buf, &mut state, &mut next);
            any_finite |= ok;
            self.costs[s] = c;
        }
        let best_cost = self.costs.iter().copied().fold(f64::INFINITY, f64::min);
        if !any_finite {
            let control = DVector::from_column_slice(&self.nominal[..m]);
            self.shift();
            return PlanOutput {
                control,
                best_cost,
                effective_samples: 0.0,
                degenerate: true,
            };
        }
        let w = mppi_weights(&self.costs, self.config.temperature);
        let mut updated = vec![0.0; len];
        for (s, ws) in w.iter().enumerate() {
            if *ws == 0.0 {
                continue;
            }
            let seq = &self.samples[s * len..(s + 1) * len];
            for (u, v) in updated.iter_mut().zip(seq) {
                *u += ws * v;
            }
        }
        for row in updated.chunks_exact_mut(m) {
            self.bounds.clamp_in_place(row);
        }
        self.nominal.copy_from_slice(&updated);
        let control = DVector::from_column_slice(&self.nominal[..m]);
        self.shift();
        PlanOutput {
            control,
            best_cost,
            effective_samples: 1.0 / w.iter().map(|v| v * v).sum::<f64>(),
            degenerate: false,
        }
    }

    fn shift(&mut self) {
        let m = self.bounds.dim();
        let len = self.nominal.len();
        self.nominal.copy_within(m..len, 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::seeded_rng;
    use crate::envs::{Environment, SyntheticParams};
    use rand::Rng;

    fn synthetic() -> Environment {
        Environment::synthetic(SyntheticParams::default()).unwrap()
    }

    #[test]
    fn weight_examples() {
        let w = mppi_weights(&[3.0, 3.0, 3.0, 3.0], 0.7);
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let w = mppi_weights(&[0.0, DIVERGED_COST], 1.0);
        assert_eq!(w, vec![1.0, 0.0]);
        let tau = 0.37;
        let w = mppi_weights(&[0.0, tau * 2f64.ln()], tau);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12 && (w[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weights_on_simplex() {
        let mut rng = seeded_rng(1, "test");
        for _ in 0..200 {
            let costs: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..50.0)).collect();
            let w = mppi_weights(&costs, rng.gen_range(0.1..5.0));
            assert!(w.iter().all(|v| *v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rollout_matches_resimulation() {
        let env = synthetic();
        let mut rng = seeded_rng(2, "test");
        for _ in 0..100 {
            let x0 = [rng.gen_range(0.0..3.0)];
            let seq: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut buf = PlanningModel::Truth.buffers(&env);
            let (c, ok) = rollout_cost(&env, &PlanningModel::Truth, &x0, &seq, &mut buf, &mut [0.0], &mut [0.0]);
            assert!(ok);
            let mut x = DVector::from_column_slice(&x0);
            let mut oracle = 0.0;
            for u in &seq {
                let u = DVector::from_element(1, *u);
                oracle += env.cost(x.as_slice(), u.as_slice());
                let d = env.residual(x.as_slice(), u.as_slice());
                x = env.step_nominal(&x, &u, &d).unwrap();
            }
            oracle += env.cost(x.as_slice(), &[0.0]);
            assert!((c - oracle).abs() <= 1e-12 * (1.0 + oracle));
        }
    }

    #[test]
    fn zero_cost_at_goal() {
        let env = synthetic();
        let goal = SyntheticParams::default().goal;
        let mut buf = PlanningModel::Nominal.buffers(&env);
        let (c, _) = rollout_cost(&env, &PlanningModel::Nominal, &[goal], &[0.0], &mut buf, &mut [0.0], &mut [0.0]);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn single_noiseless_rollout_keeps_nominal() {
        let env = synthetic();
        let cfg = MppiConfig {
            rollouts: 1,
            horizon: 5,
            temperature: 1.0,
            exploration: 1e-3,
        };
        let mut p = Mppi::new(cfg, env.bounds().clone(), 50);
        let out = p.plan_step(&env, &PlanningModel::Nominal, &[1.0], &mut seeded_rng(3, "mppi"));
        assert_eq!(out.control[0], 0.0);
    }

    #[test]
    fn replay_is_identical() {
        let env = synthetic();
        let run = || {
            let mut p = Mppi::new(MppiConfig::default(), env.bounds().clone(), 50);
            let mut rng = seeded_rng(4, "mppi");
            (0..3)
                .map(|_| p.plan_step(&env, &PlanningModel::Truth, &[1.2], &mut rng).control[0])
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn controls_stay_in_box() {
        let env = synthetic();
        let mut p = Mppi::new(
            MppiConfig {
                exploration: 5.0,
                ..MppiConfig::default()
            },
            env.bounds().clone(),
            50,
        );
        let mut rng = seeded_rng(5, "mppi");
        for _ in 0..20 {
            let out = p.plan_step(&env, &PlanningModel::Truth, &[2.5], &mut rng);
            assert!(env.bounds().contains(&out.control, 0.0));
        }
    }

    #[test]
    fn approaches_one_step_minimizer() {
        let env = synthetic();
        let p = SyntheticParams::default();
        let x0 = 0.0;
        let d = p.weights[0];
        let optimum = (p.goal - x0 - d) / 1.1;
        let error = |k: usize| -> f64 {
            (0..40)
                .map(|seed| {
                    let cfg = MppiConfig {
                        rollouts: k,
                        horizon: 1,
                        temperature: 1e-4,
                        exploration: 0.3,
                    };
                    let mut planner = Mppi::new(cfg, env.bounds().clone(), 10);
                    let mut rng = seeded_rng(seed, "mppi");
                    let out = planner.plan_step(&env, &PlanningModel::Truth, &[x0], &mut rng);
                    (out.control[0] - optimum).abs()
                })
                .sum::<f64>()
                / 40.0
        };
        let coarse = error(64);
        let fine = error(1024);
        assert!(fine <= 0.5 * coarse, "K=64 error {coarse}, K=1024 error {fine}");
    }
}
