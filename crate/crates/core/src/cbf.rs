//! Stochastic discrete-time control barrier functions: the noise margin,
//! the exact one-step constraint and its linearization in the control.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

/// A safety function `h(x)`; the safe set is `{x : h(x) ≥ 0}`.
#[derive(Debug, Clone, PartialEq)]
pub enum Barrier {
    /// `h(x) = normal·x + offset`.
    Affine { normal: Vec<f64>, offset: f64 },
    /// `h(x) = ‖(x₀, x₁) − center‖² − radius²`, with `lipschitz` a bound on
    /// `‖∇h‖` over the configured state box.
    Disk {
        center: [f64; 2],
        radius: f64,
        lipschitz: f64,
    },
}

impl Barrier {
    pub fn affine(normal: Vec<f64>, offset: f64) -> Self {
        Barrier::Affine { normal, offset }
    }

    /// Obstacle barrier. The Lipschitz constant is the largest gradient
    /// norm found on a 101×101 grid over `state_box` (`[x_min, x_max,
    /// y_min, y_max]`), doubled as a safety factor.
    pub fn disk(center: [f64; 2], radius: f64, state_box: [f64; 4]) -> Self {
        const GRID: usize = 101;
        let mut sup: f64 = 0.0;
        for i in 0..GRID {
            let px = state_box[0] + (state_box[1] - state_box[0]) * i as f64 / (GRID - 1) as f64;
            for j in 0..GRID {
                let py =
                    state_box[2] + (state_box[3] - state_box[2]) * j as f64 / (GRID - 1) as f64;
                let g = 2.0 * libm::hypot(px - center[0], py - center[1]);
                sup = sup.max(g);
            }
        }
        Barrier::Disk {
            center,
            radius,
            lipschitz: 2.0 * sup,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Barrier::Affine { normal, offset } => {
                normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + offset
            }
            Barrier::Disk { center, radius, .. } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                dx * dx + dy * dy - radius * radius
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        match self {
            Barrier::Affine { normal, .. } => {
                for (gi, ni) in g.iter_mut().zip(normal) {
                    *gi = *ni;
                }
            }
            Barrier::Disk { center, .. } => {
                g[0] = 2.0 * (x[0] - center[0]);
                g[1] = 2.0 * (x[1] - center[1]);
            }
        }
        g
    }

    /// Lipschitz constant `L` of `h` on the state box.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Barrier::Affine { normal, .. } => {
                libm::sqrt(normal.iter().map(|v| v * v).sum::<f64>())
            }
            Barrier::Disk { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Barrier::Affine { .. })
    }
}

/// The barriers of an environment together with decay rate `η` and safety
/// confidence `δ_s`. All barriers are enforced jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSpec {
    pub barriers: Vec<Barrier>,
    pub eta: f64,
    pub delta_s: f64,
}

impl BarrierSpec {
    pub fn new(barriers: Vec<Barrier>, eta: f64, delta_s: f64) -> Self {
        Self {
            barriers,
            eta,
            delta_s,
        }
    }

    /// Smallest barrier value; `+∞` without barriers.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.barriers
            .iter()
            .map(|b| b.value(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Noise margin of each barrier for an `n`-dimensional state over `H` steps.
    pub fn margins(&self, n: usize, horizon: usize, sigma_bar: f64) -> Vec<f64> {
        self.barriers
            .iter()
            .map(|b| noise_margin(b.lipschitz(), sigma_bar, n, horizon, self.delta_s))
            .collect()
    }
}

/// `L·σ̄·√(2n·ln(Hn/δ_s))`: the decrease slack that absorbs Gaussian noise
/// over `H` steps with probability `1 − δ_s`.
pub fn noise_margin(lipschitz: f64, sigma_bar: f64, n: usize, horizon: usize, delta_s: f64) -> f64 {
    let n = n as f64;
    let hn = horizon as f64 * n;
    lipschitz * sigma_bar * libm::sqrt(2.0 * n * libm::log(hn / delta_s))
}

/// Per-coordinate noise level `σ̄√(2 ln(Hn/δ_s))` below which every noise
/// coordinate stays with probability `1 − δ_s` over `H` steps.
pub fn noise_envelope(sigma_bar: f64, n: usize, horizon: usize, delta_s: f64) -> f64 {
    sigma_bar * libm::sqrt(2.0 * libm::log((horizon * n) as f64 / delta_s))
}

/// Exact constraint `h(x') − margin ≥ (1 − η)·h(x)` for the predicted next
/// state `x' = f̂(x, u) + d̃(x, u)`.
pub fn check_exact(barrier: &Barrier, x: &[f64], predicted_next: &[f64], margin: f64, eta: f64) -> bool {
    barrier.value(predicted_next) - margin >= (1.0 - eta) * barrier.value(x)
}

/// `a·u ≥ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub a: DVector<f64>,
    pub b: f64,
}

impl LinearConstraint {
    pub fn new(a: DVector<f64>, b: f64) -> Self {
        Self { a, b }
    }

    pub fn slack(&self, u: &[f64]) -> f64 {
        self.a.iter().zip(u).map(|(a, v)| a * v).sum::<f64>() - self.b
    }

    pub fn holds(&self, u: &[f64], tol: f64) -> bool {
        self.slack(u) >= -tol
    }
}

/// How the residual enters the linearized constraint.
#[derive(Debug, Clone, Copy)]
pub enum ResidualTerm<'a> {
    /// No residual: the nominal-only constraint.
    Zero,
    /// A learned `W̃φ(x, u)` bounded around the nominal control `u*`.
    Learned {
        weights: &'a DMatrix<f64>,
        /// `φ(x, u*)`.
        phi: &'a [f64],
        /// `L_{x,φ}`.
        control_lipschitz: &'a DVector<f64>,
        /// `Σⱼ (u⁺ⱼ − u⁻ⱼ)`.
        control_range: f64,
    },
    /// An exactly known residual `g₁(x) + g₂(x)u`.
    Known {
        offset: &'a DVector<f64>,
        gain: &'a DMatrix<f64>,
    },
}

/// Linear control constraint that implies the exact constraint whenever `h`
/// is affine or convex. Expanded at the drift image `F̂(x)`:
/// `a = ∇h(F̂(x))ᵀĜ(x)` and
/// `b = −η·h(x) + margin − (h(F̂(x)) − h(x)) + |∇h·W̃φ(x,u*)|
///      + Σᵢ |(∇h·W̃)ᵢ|·L_{x,φ,i}·Σⱼ(u⁺ⱼ − u⁻ⱼ)`.
pub fn linearize(
    barrier: &Barrier,
    x: &[f64],
    drift: &[f64],
    input_map: &DMatrix<f64>,
    residual: ResidualTerm<'_>,
    margin: f64,
    eta: f64,
) -> LinearConstraint {
    let grad = barrier.gradient(drift);
    let h_x = barrier.value(x);
    let lie_drift = barrier.value(drift) - h_x;
    let mut a = input_map.tr_mul(&grad);
    let mut b = -eta * h_x + margin - lie_drift;
    match residual {
        ResidualTerm::Zero => {}
        ResidualTerm::Learned {
            weights,
            phi,
            control_lipschitz,
            control_range,
        } => {
            let gw = weights.tr_mul(&grad);
            let along: f64 = gw.iter().zip(phi).map(|(g, p)| g * p).sum();
            let slope: f64 = gw
                .iter()
                .zip(control_lipschitz.iter())
                .map(|(g, l)| g.abs() * l)
                .sum();
            b += along.abs() + slope * control_range;
        }
        ResidualTerm::Known { offset, gain } => {
            a += gain.tr_mul(&grad);
            b -= grad.dot(offset);
        }
    }
    LinearConstraint::new(a, b)
}

/// Evaluates both forms at `u`: `(linear satisfied, exact satisfied)`.
pub fn implication_check(
    barrier: &Barrier,
    constraint: &LinearConstraint,
    x: &[f64],
    u: &[f64],
    predicted_next: &[f64],
    margin: f64,
    eta: f64,
) -> (bool, bool) {
    (
        constraint.slack(u) >= 0.0,
        check_exact(barrier, x, predicted_next, margin, eta),
    )
}
