//! Ground-truth and nominal control-affine dynamics for the simulated systems.
//!
//! Every environment is split as `x' = F̂(x) + Ĝ(x)u + d*(x, u) + ε` where the
//! learner knows `F̂`, `Ĝ` and the noise level but not the residual `d*`.
//!
//! * `pendulum`: torque-limited inverted pendulum (θ = 0 upright) with a
//!   `0.05·cos(θ − 3)` additive disturbance on θ and a nominal model built
//!   from wrong mass and length. The barrier pair keeps θ in `[−π/8, 5π/4]`.
//! * `unicycle` / `unicycle-obstacle`: kinematic unicycle pushed by an
//!   unknown wind field acting on position. The obstacle variant adds one
//!   static disk to avoid.
//! * `synthetic-linear`: scalar integrator `x' = x + u + W*·(1, x, x²) + ε`
//!   whose residual is exactly representable by a monomial dictionary.
//!
//! Both paper environments have the same barrier relative degree for the
//! nominal and the true system, so a barrier that is valid for the nominal
//! model stays valid for the true one. That property is a design requirement
//! of the environments here and is not checked at runtime.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::cbf::{Barrier, BarrierSpec};
use crate::domain::{ControlBounds, NoiseSpec, SimRng, State};
use crate::error::{check_dim, Error, Result};
use crate::features::FeatureKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvId {
    Pendulum,
    Unicycle,
    UnicycleObstacle,
    SyntheticLinear,
}

impl EnvId {
    pub const ALL: [EnvId; 4] = [
        EnvId::Pendulum,
        EnvId::Unicycle,
        EnvId::UnicycleObstacle,
        EnvId::SyntheticLinear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::Pendulum => "pendulum",
            EnvId::Unicycle => "unicycle",
            EnvId::UnicycleObstacle => "unicycle-obstacle",
            EnvId::SyntheticLinear => "synthetic-linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

fn invalid(key: &'static str, reason: &str) -> Error {
    Error::InvalidConfig {
        key,
        reason: reason.to_string(),
    }
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = libm::fmod(theta + PI, two_pi);
    if a < 0.0 {
        a += two_pi;
    }
    let w = a - PI;
    if w <= -PI {
        w + two_pi
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams {
    pub gravity: f64,
    pub dt: f64,
    pub mass: f64,
    pub length: f64,
    pub nominal_mass: f64,
    pub nominal_length: f64,
    pub max_torque: f64,
    /// Amplitude of the `A·cos(θ − φ)` disturbance on θ.
    pub disturbance: f64,
    pub disturbance_phase: f64,
    pub lower_angle: f64,
    pub upper_angle: f64,
    pub noise: Vec<f64>,
    pub x0: Vec<f64>,
    /// Half-widths of the box around `x0` used in random-initial-state mode.
    pub x0_spread: Vec<f64>,
    /// Largest |θ̇| used when sampling initial data.
    pub data_speed: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            dt: 0.05,
            mass: 1.0,
            length: 1.0,
            nominal_mass: 1.8,
            nominal_length: 1.8,
            max_torque: 15.0,
            disturbance: 0.05,
            disturbance_phase: 3.0,
            lower_angle: -PI / 8.0,
            upper_angle: 5.0 * PI / 4.0,
            noise: vec![0.002, 0.01],
            x0: vec![PI, -3.0],
            x0_spread: vec![0.5, 0.5],
            data_speed: 6.0,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.gravity)
            && pos(self.dt)
            && pos(self.mass)
            && pos(self.length)
            && pos(self.nominal_mass)
            && pos(self.nominal_length)
            && pos(self.max_torque))
        {
            return Err(invalid(
                "pendulum",
                "gravity, dt, masses, lengths and max_torque must be positive",
            ));
        }
        if !(self.lower_angle < self.upper_angle) {
            return Err(invalid("pendulum.lower_angle", "must be below upper_angle"));
        }
        if self.noise.len() != 2 || self.x0.len() != 2 || self.x0_spread.len() != 2 {
            return Err(invalid("pendulum.noise", "noise, x0 and x0_spread need 2 entries"));
        }
        if !(self.x0[0] > self.lower_angle && self.x0[0] < self.upper_angle) {
            return Err(invalid("pendulum.x0", "initial angle must lie inside the safe interval"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnicycleParams {
    pub dt: f64,
    pub max_speed: f64,
    pub max_turn_rate: f64,
    /// Gain applied to the analytic wind formula.
    pub wind_gain: f64,
    /// East-pointing wind speed inside the rectangle.
    pub wind_rect_speed: f64,
    /// `[x_min, x_max, y_min, y_max]` of the uniform-wind rectangle.
    pub wind_rect: [f64; 4],
    pub goal: [f64; 2],
    pub position_weight: f64,
    pub control_weight: f64,
    /// Divides the quadratic cost.
    pub cost_scale: f64,
    pub obstacle_center: [f64; 2],
    pub obstacle_radius: f64,
    pub noise: Vec<f64>,
    pub x0: Vec<f64>,
    pub x0_spread: Vec<f64>,
    /// `[x_min, x_max, y_min, y_max]` of the state box (Lipschitz bounds, plotting).
    pub state_box: [f64; 4],
    /// `[x_min, x_max, y_min, y_max]` region where initial data is collected.
    pub data_box: [f64; 4],
}

impl Default for UnicycleParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_speed: 1.0,
            max_turn_rate: 2.0,
            wind_gain: 0.2,
            wind_rect_speed: 1.5,
            wind_rect: [-2.0, 3.0, -2.6, -0.2],
            goal: [3.5, 0.5],
            position_weight: 1.0,
            control_weight: 0.05,
            cost_scale: 1.0,
            obstacle_center: [0.5, 0.5],
            obstacle_radius: 0.5,
            noise: vec![0.005, 0.005, 0.005],
            x0: vec![-2.5, 0.5, 0.0],
            x0_spread: vec![0.3, 0.3, 0.3],
            state_box: [-4.0, 6.0, -3.0, 3.0],
            data_box: [-3.5, 4.5, 0.0, 1.5],
        }
    }
}

impl UnicycleParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.dt)
            && pos(self.max_speed)
            && pos(self.max_turn_rate)
            && pos(self.cost_scale)
            && pos(self.obstacle_radius))
        {
            return Err(invalid(
                "unicycle",
                "dt, speeds, cost_scale and obstacle_radius must be positive",
            ));
        }
        if !(pos(self.position_weight) && pos(self.control_weight)) {
            return Err(invalid("unicycle.position_weight", "cost weights must be positive"));
        }
        if self.noise.len() != 3 || self.x0.len() != 3 || self.x0_spread.len() != 3 {
            return Err(invalid("unicycle.noise", "noise, x0 and x0_spread need 3 entries"));
        }
        for b in [&self.wind_rect, &self.state_box, &self.data_box] {
            if !(b[0] < b[1] && b[2] < b[3]) {
                return Err(invalid("unicycle.state_box", "boxes need min < max"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    /// True residual weights on the dictionary `(1, x, x²)`.
    pub weights: Vec<f64>,
    pub max_control: f64,
    pub goal: f64,
    pub control_weight: f64,
    pub noise: f64,
    pub x0: f64,
    pub x0_spread: f64,
    /// `[x_min, x_max]` box for initial data and diagnostics.
    pub state_box: [f64; 2],
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            weights: vec![0.05, -0.1, 0.02],
            max_control: 1.0,
            goal: -0.5,
            control_weight: 0.1,
            noise: 0.05,
            x0: 1.0,
            x0_spread: 0.5,
            state_box: [0.0, 3.0],
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != 3 {
            return Err(invalid("synthetic.weights", "need 3 dictionary weights"));
        }
        if !(self.max_control > 0.0 && self.noise >= 0.0 && self.control_weight > 0.0) {
            return Err(invalid(
                "synthetic.max_control",
                "max_control and control_weight must be positive, noise nonnegative",
            ));
        }
        if !(self.state_box[0] < self.state_box[1]) {
            return Err(invalid("synthetic.state_box", "needs min < max"));
        }
        if self.x0 <= 0.0 {
            return Err(invalid("synthetic.x0", "initial state must be strictly safe (x0 > 0)"));
        }
        Ok(())
    }
}

/// The unknown wind field on position `p`: the analytic formula outside the
/// rectangle, a uniform East-pointing wind of speed `rect_speed` inside.
pub fn wind_field(p: [f64; 2], rect: [f64; 4], rect_speed: f64) -> [f64; 2] {
    if in_rect(p, rect) {
        [rect_speed, 0.0]
    } else {
        wind_formula(p)
    }
}

/// `[cos(x₁ − 4)(x₂ − 3), sin(x₁ − 4)(x₂ − 3)]`.
pub fn wind_formula(p: [f64; 2]) -> [f64; 2] {
    let s = p[1] - 3.0;
    [libm::cos(p[0] - 4.0) * s, libm::sin(p[0] - 4.0) * s]
}

fn in_rect(p: [f64; 2], rect: [f64; 4]) -> bool {
    p[0] >= rect[0] && p[0] <= rect[1] && p[1] >= rect[2] && p[1] <= rect[3]
}

#[derive(Debug, Clone, PartialEq)]
enum Dynamics {
    Pendulum(PendulumParams),
    Unicycle(UnicycleParams),
    Synthetic(SyntheticParams),
}

/// A simulated system with known nominal part, hidden residual, cost and
/// safe set.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    id: EnvId,
    dynamics: Dynamics,
    noise: NoiseSpec,
    bounds: ControlBounds,
    barriers: Vec<Barrier>,
}

impl Environment {
    pub fn from_config(cfg: &crate::domain::ExperimentConfig) -> Result<Self> {
        match cfg.env {
            EnvId::Pendulum => Self::pendulum(cfg.pendulum.clone()),
            EnvId::Unicycle => Self::unicycle(cfg.unicycle.clone(), false),
            EnvId::UnicycleObstacle => Self::unicycle(cfg.unicycle.clone(), true),
            EnvId::SyntheticLinear => Self::synthetic(cfg.synthetic.clone()),
        }
    }

    pub fn pendulum(p: PendulumParams) -> Result<Self> {
        p.validate()?;
        let barriers = vec![
            Barrier::affine(vec![1.0, 0.0], -p.lower_angle),
            Barrier::affine(vec![-1.0, 0.0], p.upper_angle),
        ];
        Ok(Self {
            id: EnvId::Pendulum,
            noise: NoiseSpec::new(p.noise.clone())?,
            bounds: ControlBounds::symmetric(p.max_torque, 1)?,
            barriers,
            dynamics: Dynamics::Pendulum(p),
        })
    }

    pub fn unicycle(p: UnicycleParams, with_obstacle: bool) -> Result<Self> {
        p.validate()?;
        let barriers = if with_obstacle {
            vec![Barrier::disk(p.obstacle_center, p.obstacle_radius, p.state_box)]
        } else {
            Vec::new()
        };
        Ok(Self {
            id: if with_obstacle {
                EnvId::UnicycleObstacle
            } else {
                EnvId::Unicycle
            },
            noise: NoiseSpec::new(p.noise.clone())?,
            bounds: ControlBounds::new(vec![0.0, -p.max_turn_rate], vec![p.max_speed, p.max_turn_rate])?,
            barriers,
            dynamics: Dynamics::Unicycle(p),
        })
    }

    pub fn synthetic(p: SyntheticParams) -> Result<Self> {
        p.validate()?;
        Ok(Self {
            id: EnvId::SyntheticLinear,
            noise: NoiseSpec::new(vec![p.noise])?,
            bounds: ControlBounds::symmetric(p.max_control, 1)?,
            barriers: vec![Barrier::affine(vec![1.0], 0.0)],
            dynamics: Dynamics::Synthetic(p),
        })
    }

    pub fn id(&self) -> EnvId {
        self.id
    }

    pub fn state_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::Pendulum(_) => 2,
            Dynamics::Unicycle(_) => 3,
            Dynamics::Synthetic(_) => 1,
        }
    }

    pub fn control_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// Same environment with different process noise.
    pub fn with_noise(mut self, noise: NoiseSpec) -> Result<Self> {
        check_dim("noise", self.state_dim(), noise.dim())?;
        self.noise = noise;
        Ok(self)
    }

    pub fn bounds(&self) -> &ControlBounds {
        &self.bounds
    }

    pub fn barriers(&self) -> &[Barrier] {
        &self.barriers
    }

    /// Barrier set with the decay rate and confidence used by the filter.
    pub fn safe_set_spec(&self, eta: f64, delta_s: f64) -> BarrierSpec {
        BarrierSpec::new(self.barriers.clone(), eta, delta_s)
    }

    /// Smallest barrier value at `x`; `+∞` when the environment has none.
    pub fn barrier_value(&self, x: &[f64]) -> f64 {
        self.barriers
            .iter()
            .map(|b| b.value(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Scalar tracked in the per-episode summaries: θ for the pendulum, the
    /// smallest barrier value elsewhere (distance-like for the unicycle).
    pub fn monitor(&self, x: &[f64]) -> f64 {
        match &self.dynamics {
            Dynamics::Pendulum(_) => x[0],
            Dynamics::Unicycle(p) => {
                let dx = x[0] - p.goal[0];
                let dy = x[1] - p.goal[1];
                libm::sqrt(dx * dx + dy * dy)
            }
            Dynamics::Synthetic(_) => x[0],
        }
    }

    /// Name of [`Environment::monitor`] for CSV headers.
    pub fn monitor_name(&self) -> &'static str {
        match self.dynamics {
            Dynamics::Pendulum(_) => "theta",
            Dynamics::Unicycle(_) => "goal_distance",
            Dynamics::Synthetic(_) => "x",
        }
    }

    pub fn initial_state(&self) -> State {
        match &self.dynamics {
            Dynamics::Pendulum(p) => DVector::from_column_slice(&p.x0),
            Dynamics::Unicycle(p) => DVector::from_column_slice(&p.x0),
            Dynamics::Synthetic(p) => DVector::from_element(1, p.x0),
        }
    }

    /// Initial state drawn uniformly from a box around `x0`, rejected until
    /// strictly inside the safe set.
    pub fn sample_initial_state(&self, rng: &mut SimRng) -> State {
        let (x0, spread): (Vec<f64>, Vec<f64>) = match &self.dynamics {
            Dynamics::Pendulum(p) => (p.x0.clone(), p.x0_spread.clone()),
            Dynamics::Unicycle(p) => (p.x0.clone(), p.x0_spread.clone()),
            Dynamics::Synthetic(p) => (vec![p.x0], vec![p.x0_spread]),
        };
        for _ in 0..1000 {
            let x: Vec<f64> = x0
                .iter()
                .zip(&spread)
                .map(|(c, s)| if *s > 0.0 { rng.gen_range(c - s..=c + s) } else { *c })
                .collect();
            if self.barrier_value(&x) > 0.0 {
                return DVector::from_vec(x);
            }
        }
        DVector::from_vec(x0)
    }

    /// Uniform state from the data-collection box, restricted to the safe set.
    pub fn sample_safe_state(&self, rng: &mut SimRng) -> State {
        loop {
            let x: Vec<f64> = match &self.dynamics {
                Dynamics::Pendulum(p) => vec![
                    rng.gen_range(p.lower_angle..=p.upper_angle),
                    rng.gen_range(-p.data_speed..=p.data_speed),
                ],
                Dynamics::Unicycle(p) => vec![
                    rng.gen_range(p.data_box[0]..=p.data_box[1]),
                    rng.gen_range(p.data_box[2]..=p.data_box[3]),
                    rng.gen_range(-PI..=PI),
                ],
                Dynamics::Synthetic(p) => vec![rng.gen_range(p.state_box[0]..=p.state_box[1])],
            };
            if self.barrier_value(&x) >= 0.0 {
                return DVector::from_vec(x);
            }
        }
    }

    /// Uniform admissible control.
    pub fn sample_control(&self, rng: &mut SimRng) -> DVector<f64> {
        let lo = self.bounds.lower();
        let hi = self.bounds.upper();
        DVector::from_iterator(
            lo.len(),
            lo.iter().zip(hi.iter()).map(|(l, h)| rng.gen_range(*l..=*h)),
        )
    }

    /// Default feature construction for the learned residual.
    pub fn default_features(&self) -> FeatureKind {
        match self.dynamics {
            Dynamics::Pendulum(_) => FeatureKind::Rff {
                input_scale: vec![1.0, 0.1],
            },
            Dynamics::Unicycle(_) => FeatureKind::Rff {
                input_scale: vec![1.0, 1.0, 0.0],
            },
            Dynamics::Synthetic(_) => FeatureKind::Monomials { degree: 2 },
        }
    }

    /// Exact residual weights when the residual is representable by the
    /// default features.
    pub fn true_weights(&self) -> Option<DMatrix<f64>> {
        match &self.dynamics {
            Dynamics::Synthetic(p) => Some(DMatrix::from_row_slice(1, 3, &p.weights)),
            _ => None,
        }
    }

    /// `F̂(x)`.
    pub fn drift(&self, x: &[f64]) -> State {
        let mut out = vec![0.0; self.state_dim()];
        self.drift_into(x, &mut out);
        DVector::from_vec(out)
    }

    pub(crate) fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.dynamics {
            Dynamics::Pendulum(p) => {
                let a = 1.5 * p.gravity / p.nominal_length;
                let w = x[1] + a * libm::sin(x[0]) * p.dt;
                out[1] = w;
                out[0] = x[0] + w * p.dt;
            }
            Dynamics::Unicycle(_) | Dynamics::Synthetic(_) => out.copy_from_slice(x),
        }
    }

    /// `Ĝ(x)`, an `n × m` matrix.
    pub fn input_map(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.dynamics {
            Dynamics::Pendulum(p) => {
                let b = self.pendulum_nominal_gain(p);
                DMatrix::from_column_slice(2, 1, &[b * p.dt * p.dt, b * p.dt])
            }
            Dynamics::Unicycle(p) => DMatrix::from_row_slice(
                3,
                2,
                &[
                    p.dt * libm::cos(x[2]),
                    0.0,
                    p.dt * libm::sin(x[2]),
                    0.0,
                    0.0,
                    p.dt,
                ],
            ),
            Dynamics::Synthetic(_) => DMatrix::from_element(1, 1, 1.0),
        }
    }

    // Inertia term of the nominal model uses the printed `3/(m'·l²)` form.
    fn pendulum_nominal_gain(&self, p: &PendulumParams) -> f64 {
        3.0 / (p.nominal_mass * p.length * p.length)
    }

    /// `F̂(x) + Ĝ(x)u + residual` without allocating; the hot path of rollouts.
    pub fn predict_into(&self, x: &[f64], u: &[f64], residual: &[f64], out: &mut [f64]) {
        match &self.dynamics {
            Dynamics::Pendulum(p) => {
                let a = 1.5 * p.gravity / p.nominal_length;
                let b = self.pendulum_nominal_gain(p);
                let w = x[1] + (a * libm::sin(x[0]) + b * u[0]) * p.dt;
                out[1] = w + residual[1];
                out[0] = x[0] + w * p.dt + residual[0];
            }
            Dynamics::Unicycle(p) => {
                out[0] = x[0] + p.dt * u[0] * libm::cos(x[2]) + residual[0];
                out[1] = x[1] + p.dt * u[0] * libm::sin(x[2]) + residual[1];
                out[2] = x[2] + p.dt * u[1] + residual[2];
            }
            Dynamics::Synthetic(_) => out[0] = x[0] + u[0] + residual[0],
        }
    }

    /// True unmodelled dynamics `d*(x, u)`.
    pub fn residual_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.dynamics {
            Dynamics::Pendulum(p) => {
                let a = 1.5 * p.gravity / p.length;
                let a_nom = 1.5 * p.gravity / p.nominal_length;
                let b = 3.0 / (p.mass * p.length * p.length);
                let b_nom = self.pendulum_nominal_gain(p);
                let dw = ((a - a_nom) * libm::sin(x[0]) + (b - b_nom) * u[0]) * p.dt;
                out[1] = dw;
                out[0] = dw * p.dt + p.disturbance * libm::cos(x[0] - p.disturbance_phase);
            }
            Dynamics::Unicycle(p) => {
                let pos = [x[0], x[1]];
                let w = if in_rect(pos, p.wind_rect) {
                    [p.wind_rect_speed, 0.0]
                } else {
                    let f = wind_formula(pos);
                    [p.wind_gain * f[0], p.wind_gain * f[1]]
                };
                out[0] = p.dt * w[0];
                out[1] = p.dt * w[1];
                out[2] = 0.0;
            }
            Dynamics::Synthetic(p) => {
                let z = x[0];
                out[0] = p.weights[0] + p.weights[1] * z + p.weights[2] * z * z;
            }
        }
    }

    pub fn residual(&self, x: &[f64], u: &[f64]) -> State {
        let mut out = vec![0.0; self.state_dim()];
        self.residual_into(x, u, &mut out);
        DVector::from_vec(out)
    }

    /// The true residual is affine in `u` for every environment here:
    /// returns `(g₁(x), g₂(x))` with `d*(x, u) = g₁(x) + g₂(x)u`.
    pub fn residual_affine_parts(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.control_dim();
        let zero = vec![0.0; m];
        let g1 = self.residual(x, &zero);
        let mut g2 = DMatrix::zeros(self.state_dim(), m);
        for j in 0..m {
            let mut e = zero.clone();
            e[j] = 1.0;
            let col = self.residual(x, &e) - &g1;
            g2.set_column(j, &col);
        }
        (g1, g2)
    }

    fn check_inputs(&self, x: &[f64], u: &[f64]) -> Result<()> {
        check_dim("state", self.state_dim(), x.len())?;
        check_dim("control", self.control_dim(), u.len())
    }

    fn finite_or_fault(&self, x: State, step: usize) -> Result<State> {
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::NonFiniteState {
                env: self.id.as_str(),
                step,
            })
        }
    }

    /// One step of the true system: `F̂(x) + Ĝ(x)u + d*(x, u) + ε`.
    pub fn step_true(&self, x: &State, u: &DVector<f64>, rng: &mut SimRng) -> Result<State> {
        self.check_inputs(x.as_slice(), u.as_slice())?;
        let d = self.residual(x.as_slice(), u.as_slice());
        let eps = self.noise.sample(rng);
        let mut out = vec![0.0; self.state_dim()];
        let total = d + eps;
        self.predict_into(x.as_slice(), u.as_slice(), total.as_slice(), &mut out);
        self.finite_or_fault(DVector::from_vec(out), 0)
    }

    /// Deterministic model step `F̂(x) + Ĝ(x)u + d̃`.
    pub fn step_nominal(&self, x: &State, u: &DVector<f64>, residual: &DVector<f64>) -> Result<State> {
        self.check_inputs(x.as_slice(), u.as_slice())?;
        check_dim("predicted residual", self.state_dim(), residual.len())?;
        let mut out = vec![0.0; self.state_dim()];
        self.predict_into(x.as_slice(), u.as_slice(), residual.as_slice(), &mut out);
        self.finite_or_fault(DVector::from_vec(out), 0)
    }

    /// Immediate cost `c(x, u) ≥ 0`.
    pub fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        match &self.dynamics {
            Dynamics::Pendulum(_) => {
                let th = wrap_angle(x[0]);
                th * th + 0.1 * x[1] * x[1] + 0.001 * u[0] * u[0]
            }
            Dynamics::Unicycle(p) => {
                let dx = x[0] - p.goal[0];
                let dy = x[1] - p.goal[1];
                (p.position_weight * (dx * dx + dy * dy)
                    + p.control_weight * (u[0] * u[0] + u[1] * u[1]))
                    / p.cost_scale
            }
            Dynamics::Synthetic(p) => {
                let e = x[0] - p.goal;
                e * e + p.control_weight * u[0] * u[0]
            }
        }
    }

    /// Box of states used for grid diagnostics: `(lower, upper)`.
    pub fn state_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.dynamics {
            Dynamics::Pendulum(p) => (
                vec![p.lower_angle, -p.data_speed],
                vec![p.upper_angle, p.data_speed],
            ),
            Dynamics::Unicycle(p) => (
                vec![p.state_box[0], p.state_box[2], -PI],
                vec![p.state_box[1], p.state_box[3], PI],
            ),
            Dynamics::Synthetic(p) => (vec![p.state_box[0]], vec![p.state_box[1]]),
        }
    }

    /// Time step in seconds.
    pub fn dt(&self) -> f64 {
        match &self.dynamics {
            Dynamics::Pendulum(p) => p.dt,
            Dynamics::Unicycle(p) => p.dt,
            Dynamics::Synthetic(_) => 1.0,
        }
    }
}
