//! The episodic safe-learning loop, its baselines and regret accounting.
//!
//! Every method runs the same pipeline per step: MPPI proposes `u*` under a
//! planning model, an optional barrier filter projects it, and the true
//! system executes it. Methods differ only in the planning model, the filter
//! and whether the residual model is updated after each episode.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::cbf::{linearize, noise_margin, BarrierSpec, LinearConstraint, ResidualTerm};
use crate::domain::{seeded_rng, substream, EpisodeTrace, ExperimentConfig, SimRng, State, TraceStep};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::filter::{project_safe, FilterStatus};
use crate::model::{ModelParams, ResidualModel, Transition};
use crate::planner::{Mppi, PlanningModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Thompson-sampled model for planning and for the barrier filter.
    Algorithm1,
    /// Planning on the true dynamics, no filter.
    GtMppi,
    /// Planning on the nominal model, no filter.
    NomMppi,
    /// Planning on the nominal model, filter with zero residual.
    NomMppiCbf,
    /// The ridge estimate in place of the Thompson draw.
    Exploitation,
    /// Thompson sampling without the filter.
    UnconstrainedTs,
    /// Planning on the true dynamics with the exact-residual filter; the
    /// reference policy for regret.
    GtMppiCbf,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Algorithm1,
        Method::GtMppi,
        Method::NomMppi,
        Method::NomMppiCbf,
        Method::Exploitation,
        Method::UnconstrainedTs,
        Method::GtMppiCbf,
    ];

    /// Algorithm 1 and the five comparison baselines.
    pub const COMPARED: [Method; 6] = [
        Method::Algorithm1,
        Method::GtMppi,
        Method::NomMppi,
        Method::NomMppiCbf,
        Method::Exploitation,
        Method::UnconstrainedTs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Algorithm1 => "algorithm1",
            Method::GtMppi => "gt-mppi",
            Method::NomMppi => "nom-mppi",
            Method::NomMppiCbf => "nom-mppi-cbf",
            Method::Exploitation => "exploitation",
            Method::UnconstrainedTs => "unconstrained-ts",
            Method::GtMppiCbf => "gt-mppi-cbf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn learns(self) -> bool {
        matches!(
            self,
            Method::Algorithm1 | Method::Exploitation | Method::UnconstrainedTs
        )
    }

    fn thompson(self) -> bool {
        matches!(self, Method::Algorithm1 | Method::UnconstrainedTs)
    }
}

/// Which barrier filter guards the executed control.
#[derive(Debug, Clone, Copy)]
pub enum FilterMode<'a> {
    Off,
    /// Zero residual.
    Nominal,
    Learned {
        weights: &'a DMatrix<f64>,
        features: &'a FeatureMap,
    },
    /// The true residual, exactly.
    Known,
    /// A learned state-only residual `W̃φ(x)` entered with its sign, so the
    /// constraint is exact for affine barriers.
    Signed {
        weights: &'a DMatrix<f64>,
        features: &'a FeatureMap,
    },
}

/// Added to every constraint threshold so that round-off in the executed
/// step cannot turn a barrier value that decays toward zero negative.
pub const CONSTRAINT_BACKOFF: f64 = 1e-10;

/// Environment plus the barrier data the filter needs at every step.
#[derive(Debug, Clone)]
pub struct SafetyLayer {
    pub spec: BarrierSpec,
    /// Noise margin of each barrier, already multiplied by `margin_scale`.
    pub margins: Vec<f64>,
}

impl SafetyLayer {
    pub fn new(env: &Environment, eta: f64, delta_s: f64, horizon: usize, margin_scale: f64) -> Self {
        let spec = env.safe_set_spec(eta, delta_s);
        let sigma_bar = env.noise().sigma_bar();
        let margins = spec
            .barriers
            .iter()
            .map(|b| margin_scale * noise_margin(b.lipschitz(), sigma_bar, env.state_dim(), horizon, delta_s))
            .collect();
        Self { spec, margins }
    }

    /// Linear constraints at `x` for the nominal control `u_star`.
    pub fn constraints(
        &self,
        env: &Environment,
        mode: FilterMode<'_>,
        x: &[f64],
        u_star: &[f64],
    ) -> Vec<LinearConstraint> {
        if matches!(mode, FilterMode::Off) {
            return Vec::new();
        }
        let drift = env.drift(x);
        let g = env.input_map(x);
        let range: f64 = env.bounds().range().iter().sum();
        let learned = match mode {
            FilterMode::Learned { weights, features } => Some((
                weights,
                features.eval(x, u_star),
                features.control_lipschitz(x),
            )),
            _ => None,
        };
        let known = match mode {
            FilterMode::Known => Some(env.residual_affine_parts(x)),
            FilterMode::Signed { weights, features } => Some((
                weights * features.eval(x, u_star),
                DMatrix::zeros(env.state_dim(), env.control_dim()),
            )),
            _ => None,
        };
        self.spec
            .barriers
            .iter()
            .zip(&self.margins)
            .map(|(b, margin)| {
                let term = match (&learned, &known) {
                    (Some((w, phi, lip)), _) => ResidualTerm::Learned {
                        weights: w,
                        phi: phi.as_slice(),
                        control_lipschitz: lip,
                        control_range: range,
                    },
                    (_, Some((g1, g2))) => ResidualTerm::Known { offset: g1, gain: g2 },
                    _ => ResidualTerm::Zero,
                };
                let mut c = linearize(b, x, drift.as_slice(), &g, term, *margin, self.spec.eta);
                c.b += CONSTRAINT_BACKOFF;
                c
            })
            .collect()
    }

    /// Filtered control and the filter status.
    pub fn filter(
        &self,
        env: &Environment,
        mode: FilterMode<'_>,
        x: &[f64],
        u_star: &DVector<f64>,
    ) -> (DVector<f64>, FilterStatus) {
        let cs = self.constraints(env, mode, x, u_star.as_slice());
        if cs.is_empty() {
            return (env.bounds().clamp(u_star), FilterStatus::Unmodified);
        }
        project_safe(u_star, &cs, env.bounds())
    }
}

/// Streams driving one episode.
pub struct EpisodeStreams {
    pub noise: SimRng,
    pub mppi: SimRng,
}

/// Runs one closed-loop episode of `horizon` steps from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    env: &Environment,
    safety: &SafetyLayer,
    planner: &mut Mppi,
    plan_model: PlanningModel<'_>,
    filter: FilterMode<'_>,
    x0: &State,
    horizon: usize,
    streams: &mut EpisodeStreams,
) -> (EpisodeTrace, Option<Error>) {
    planner.reset();
    let mut trace = EpisodeTrace::with_capacity(horizon);
    let mut x = x0.clone();
    for h in 0..horizon {
        let plan = planner.plan_step(env, &plan_model, x.as_slice(), &mut streams.mppi);
        let (u, status) = safety.filter(env, filter, x.as_slice(), &plan.control);
        let next = match env.step_true(&x, &u, &mut streams.noise) {
            Ok(v) => v,
            Err(Error::NonFiniteState { env: id, .. }) => {
                return (trace, Some(Error::NonFiniteState { env: id, step: h }));
            }
            Err(e) => return (trace, Some(e)),
        };
        trace.steps.push(TraceStep {
            cost: env.cost(x.as_slice(), u.as_slice()),
            barrier: env.barrier_value(x.as_slice()),
            constraint_active: status != FilterStatus::Unmodified,
            qp_infeasible: status == FilterStatus::InfeasibleFallback,
            state: x,
            control: u,
            next_state: next.clone(),
        });
        x = next;
    }
    (trace, None)
}

/// Summary of one evaluation rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub cost: f64,
    pub monitor_min: f64,
    pub monitor_max: f64,
    pub min_barrier: f64,
    pub infeasible: usize,
}

impl TrialSummary {
    pub fn of(env: &Environment, trace: &EpisodeTrace) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut visit = |x: &State| {
            let v = env.monitor(x.as_slice());
            lo = lo.min(v);
            hi = hi.max(v);
        };
        for s in &trace.steps {
            visit(&s.state);
        }
        if let Some(last) = trace.steps.last() {
            visit(&last.next_state);
        }
        Self {
            cost: trace.cost(),
            monitor_min: lo,
            monitor_max: hi,
            min_barrier: trace.min_barrier(|x| env.barrier_value(x.as_slice())),
            infeasible: trace.infeasible_count(),
        }
    }

    pub fn reward(&self) -> f64 {
        -self.cost
    }
}

/// `W̄`, `Σ`, `β` after an episode's update.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub estimate: DMatrix<f64>,
    pub information: DMatrix<f64>,
    pub beta: f64,
    pub count: usize,
}

impl ModelSnapshot {
    pub fn of(model: &ResidualModel) -> Self {
        Self {
            estimate: model.estimate().clone(),
            information: model.information().clone(),
            beta: model.beta(),
            count: model.count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub train: EpisodeTrace,
    pub train_summary: TrialSummary,
    pub tests: Vec<TrialSummary>,
    /// The weights used for planning this episode (learning methods).
    pub sampled_weights: Option<DMatrix<f64>>,
    pub thompson_fallback: bool,
    /// Model after the update (learning methods).
    pub model: Option<ModelSnapshot>,
}

impl EpisodeRecord {
    pub fn mean_test_reward(&self) -> f64 {
        mean(self.tests.iter().map(TrialSummary::reward))
    }

    pub fn std_test_reward(&self) -> f64 {
        std_dev(self.tests.iter().map(TrialSummary::reward))
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub method: Method,
    pub episodes: Vec<EpisodeRecord>,
    pub initial_model: Option<ModelSnapshot>,
    /// Fault that stopped the run early, if any.
    pub fault: Option<Error>,
}

impl RunRecord {
    pub fn train_costs(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.train_summary.cost).collect()
    }
}

/// Everything shared by the methods of one experiment: the environment, the
/// frozen features, the initial model and the barrier layer.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub env: Environment,
    pub features: FeatureMap,
    pub initial_data: Vec<Transition>,
    pub initial_model: ResidualModel,
    pub safety: SafetyLayer,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let env = Environment::from_config(&config)?;
        Self::with_env(config, env)
    }

    /// Experiment on an explicitly constructed environment (custom noise,
    /// custom parameters).
    pub fn with_env(config: ExperimentConfig, env: Environment) -> Result<Self> {
        config.validate()?;
        let mut frng = seeded_rng(config.seed, "features");
        let features = FeatureMap::build(
            &env.default_features(),
            config.feature_dim,
            config.feature_bandwidth,
            env.state_dim(),
            env.control_dim(),
            &mut frng,
        )?;
        let safety = SafetyLayer::new(&env, config.eta, config.delta_s, config.horizon, config.margin_scale);
        let mut drng = seeded_rng(config.seed, "initial-data");
        let initial_data = collect_initial_data(&env, &safety, config.initial_samples, &mut drng)?;
        let params = ModelParams {
            lambda: config.ridge_lambda,
            norm_bound: config.norm_bound,
            delta: config.delta,
            sigma_bar: env.noise().sigma_bar(),
            online_samples: config.episodes * config.horizon,
        };
        let initial_model = ResidualModel::fit_initial(&env, &features, &initial_data, params)?;
        Ok(Self {
            config,
            env,
            features,
            initial_data,
            initial_model,
            safety,
        })
    }

    fn planner(&self) -> Mppi {
        Mppi::new(self.config.mppi.clone(), self.env.bounds().clone(), self.config.horizon)
    }

    fn initial_state(&self, stream: &str, index: u64) -> State {
        if self.config.random_initial_state {
            let mut rng = substream(self.config.seed, stream, index);
            self.env.sample_initial_state(&mut rng)
        } else {
            self.env.initial_state()
        }
    }

    fn train_streams(&self, t: usize) -> EpisodeStreams {
        EpisodeStreams {
            noise: substream(self.config.seed, "noise", t as u64),
            mppi: substream(self.config.seed, "mppi", t as u64),
        }
    }

    fn test_streams(&self, index: u64) -> EpisodeStreams {
        EpisodeStreams {
            noise: substream(self.config.seed, "test-noise", index),
            mppi: substream(self.config.seed, "test-mppi", index),
        }
    }

    /// Runs `method` for `config.episodes` episodes.
    pub fn run(&self, method: Method) -> RunRecord {
        self.run_with(method, &mut |_| {})
    }

    /// As [`Experiment::run`], calling `on_episode` after each episode.
    pub fn run_with(&self, method: Method, on_episode: &mut dyn FnMut(&EpisodeRecord)) -> RunRecord {
        let cfg = &self.config;
        let mut model = self.initial_model.clone();
        let mut planner = self.planner();
        let mut record = RunRecord {
            method,
            episodes: Vec::with_capacity(cfg.episodes),
            initial_model: method.learns().then(|| ModelSnapshot::of(&model)),
            fault: None,
        };
        for t in 0..cfg.episodes {
            let mut fallback = false;
            let weights = if method.learns() {
                if method.thompson() {
                    let mut rng = substream(cfg.seed, "thompson", t as u64);
                    let (w, fb) = self.thompson_choice(&model, &mut rng);
                    fallback = fb;
                    Some(w)
                } else {
                    Some(model.estimate().clone())
                }
            } else {
                None
            };
            let x0 = self.initial_state("initial-state", t as u64);
            let (plan_model, filter) = self.pipeline(method, weights.as_ref());
            let mut streams = self.train_streams(t);
            let (train, fault) = run_episode(
                &self.env,
                &self.safety,
                &mut planner,
                plan_model,
                filter,
                &x0,
                cfg.horizon,
                &mut streams,
            );
            if let Some(e) = fault {
                record.fault = Some(e);
                return record;
            }
            if method.learns() {
                if let Err(e) = model.update(&self.env, &self.features, &train) {
                    record.fault = Some(e);
                    return record;
                }
            }
            let test_weights = method.learns().then(|| model.estimate().clone());
            let mut tests = Vec::with_capacity(cfg.test_trials);
            for j in 0..cfg.test_trials {
                let index = (t * cfg.test_trials + j) as u64;
                let x0 = self.initial_state("test-initial-state", index);
                let (plan_model, filter) = self.pipeline(method, test_weights.as_ref());
                let mut streams = self.test_streams(index);
                let (trace, fault) = run_episode(
                    &self.env,
                    &self.safety,
                    &mut planner,
                    plan_model,
                    filter,
                    &x0,
                    cfg.horizon,
                    &mut streams,
                );
                if let Some(e) = fault {
                    record.fault = Some(e);
                    return record;
                }
                tests.push(TrialSummary::of(&self.env, &trace));
            }
            let ep = EpisodeRecord {
                episode: t,
                train_summary: TrialSummary::of(&self.env, &train),
                train,
                tests,
                sampled_weights: weights,
                thompson_fallback: fallback,
                model: method.learns().then(|| ModelSnapshot::of(&model)),
            };
            on_episode(&ep);
            record.episodes.push(ep);
        }
        record
    }

    fn pipeline<'a>(
        &'a self,
        method: Method,
        weights: Option<&'a DMatrix<f64>>,
    ) -> (PlanningModel<'a>, FilterMode<'a>) {
        let learned = || {
            let w = weights.expect("learning methods carry weights");
            (
                PlanningModel::Learned {
                    weights: w,
                    features: &self.features,
                },
                FilterMode::Learned {
                    weights: w,
                    features: &self.features,
                },
            )
        };
        match method {
            Method::Algorithm1 | Method::Exploitation => learned(),
            Method::UnconstrainedTs => (learned().0, FilterMode::Off),
            Method::GtMppi => (PlanningModel::Truth, FilterMode::Off),
            Method::NomMppi => (PlanningModel::Nominal, FilterMode::Off),
            Method::NomMppiCbf => (PlanningModel::Nominal, FilterMode::Nominal),
            Method::GtMppiCbf => (PlanningModel::Truth, FilterMode::Known),
        }
    }

    /// One Thompson draw, or the best of several by planned cost from `x₀`.
    fn thompson_choice(&self, model: &ResidualModel, rng: &mut SimRng) -> (DMatrix<f64>, bool) {
        let cfg = &self.config;
        let (first, mut fallback) =
            model.thompson_sample(cfg.thompson_scale, rng, cfg.thompson_max_attempts);
        if cfg.thompson_draws <= 1 {
            return (first, fallback);
        }
        let x0 = self.env.initial_state();
        let score = |w: &DMatrix<f64>, index: u64| {
            let mut planner = self.planner();
            let mut prng = substream(cfg.seed, "thompson-score", index);
            let model = PlanningModel::Learned {
                weights: w,
                features: &self.features,
            };
            planner.plan_step(&self.env, &model, x0.as_slice(), &mut prng).best_cost
        };
        let mut best_score = score(&first, 0);
        let mut best = first;
        for d in 1..cfg.thompson_draws {
            let (w, fb) = model.thompson_sample(cfg.thompson_scale, rng, cfg.thompson_max_attempts);
            let s = score(&w, d as u64);
            if s < best_score {
                best_score = s;
                best = w;
                fallback = fb;
            }
        }
        (best, fallback)
    }

    /// `J*`: mean cost of `reference_episodes` episodes of the true-model
    /// planner with the exact-residual filter.
    pub fn reference_cost(&self) -> Result<f64> {
        let mut planner = self.planner();
        let mut total = 0.0;
        let count = self.config.reference_episodes.max(1);
        for i in 0..count {
            let x0 = self.initial_state("reference-initial-state", i as u64);
            let mut streams = EpisodeStreams {
                noise: substream(self.config.seed, "reference-noise", i as u64),
                mppi: substream(self.config.seed, "reference-mppi", i as u64),
            };
            let (trace, fault) = run_episode(
                &self.env,
                &self.safety,
                &mut planner,
                PlanningModel::Truth,
                FilterMode::Known,
                &x0,
                self.config.horizon,
                &mut streams,
            );
            if let Some(e) = fault {
                return Err(e);
            }
            total += trace.cost();
        }
        Ok(total / count as f64)
    }
}

/// Uniform safe states with uniform controls, each passed through the
/// nominal barrier filter and executed once on the true system.
pub fn collect_initial_data(
    env: &Environment,
    safety: &SafetyLayer,
    count: usize,
    rng: &mut SimRng,
) -> Result<Vec<Transition>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let x = env.sample_safe_state(rng);
        let u_raw = env.sample_control(rng);
        let (u, _) = safety.filter(env, FilterMode::Nominal, x.as_slice(), &u_raw);
        let next = env.step_true(&x, &u, rng)?;
        out.push(Transition {
            state: x,
            control: u,
            next_state: next,
        });
    }
    Ok(out)
}

/// Cumulative `Σ (costₜ − J*)`.
pub fn regret_curve(episode_costs: &[f64], reference: f64) -> Vec<f64> {
    let mut acc = 0.0;
    episode_costs
        .iter()
        .map(|c| {
            acc += c - reference;
            acc
        })
        .collect()
}

/// Least-squares slope of `ys` against `xs` and its standard error.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = mean(xs.iter().copied());
    let my = mean(ys.iter().copied());
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - intercept - slope * x;
            e * e
        })
        .sum();
    let se = if n > 2.0 {
        libm::sqrt(rss / (n - 2.0) / sxx)
    } else {
        f64::INFINITY
    };
    (slope, se)
}

/// Slope (and standard error) of the average regret `regretₜ/t` over the
/// 1-based episodes `first..=last`.
pub fn average_regret_slope(regret: &[f64], first: usize, last: usize) -> (f64, f64) {
    let last = last.min(regret.len());
    let xs: Vec<f64> = (first..=last).map(|t| t as f64).collect();
    let ys: Vec<f64> = (first..=last).map(|t| regret[t - 1] / t as f64).collect();
    ols_slope(&xs, &ys)
}

pub fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Sample standard deviation (`n − 1` denominator); 0 for fewer than two values.
pub fn std_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v.iter().copied());
    libm::sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;
    use alloc::vec;

    fn tiny(env: EnvId) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(env);
        cfg.episodes = 2;
        cfg.horizon = 8;
        cfg.test_trials = 1;
        cfg.reference_episodes = 2;
        cfg.mppi.rollouts = 8;
        cfg.mppi.horizon = 4;
        cfg
    }

    #[test]
    fn regret_examples() {
        assert_eq!(regret_curve(&[3.0, 3.0], 2.0), vec![1.0, 2.0]);
        assert_eq!(regret_curve(&[2.0, 2.0, 2.0], 2.0), vec![0.0; 3]);
    }

    #[test]
    fn slope_of_a_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (s, se) = ols_slope(&xs, &ys);
        assert!((s - 2.0).abs() < 1e-12 && se < 1e-12);
    }

    #[test]
    fn no_episodes() {
        let mut exp = Experiment::new(tiny(EnvId::SyntheticLinear)).unwrap();
        exp.config.episodes = 0;
        let rec = exp.run(Method::Algorithm1);
        assert!(rec.episodes.is_empty());
        assert_eq!(rec.initial_model, Some(ModelSnapshot::of(&exp.initial_model)));
    }

    #[test]
    fn zero_scale_matches_exploitation() {
        let mut cfg = tiny(EnvId::SyntheticLinear);
        cfg.thompson_scale = 0.0;
        let exp = Experiment::new(cfg).unwrap();
        let a = exp.run(Method::Algorithm1);
        let b = exp.run(Method::Exploitation);
        assert_eq!(a.train_costs(), b.train_costs());
    }

    #[test]
    fn controls_in_box() {
        let exp = Experiment::new(tiny(EnvId::Unicycle)).unwrap();
        for m in Method::ALL {
            let rec = exp.run(m);
            assert!(rec.fault.is_none());
            for e in &rec.episodes {
                for s in &e.train.steps {
                    assert!(exp.env.bounds().contains(&s.control, 1e-12));
                }
            }
        }
    }
}
