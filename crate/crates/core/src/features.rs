//! Feature maps `φ(x, u)` for the residual model `d(x, u) = W φ(x, u)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::SimRng;
use crate::error::{check_dim, Error, Result};

/// Whether the features see the control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    StateOnly,
    StateControl,
}

/// Recipe for building a feature map.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    /// Random Fourier features; `input_scale` multiplies each input
    /// coordinate before projection (0 drops the coordinate). Its length
    /// selects the mode: `n` for state-only, `n + m` for state-control.
    Rff { input_scale: Vec<f64> },
    /// Per-coordinate monomials `(1, zᵢ, zᵢ², …)` of the state.
    Monomials { degree: usize },
}

/// Random Fourier feature map `φᵢ(z) = √(2/r)·cos(Ωᵢ·(s ⊙ z) + bᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    /// Row-major `r × d_in`.
    omega: Vec<f64>,
    phase: Vec<f64>,
    bandwidth: f64,
    mode: InputMode,
    state_dim: usize,
    input_scale: Vec<f64>,
    norm: f64,
}

impl RffMap {
    /// Draws `Ω` with i.i.d. `N(0, 1/γ²)` entries and `b ~ U[0, 2π)`.
    pub fn build(
        features: usize,
        state_dim: usize,
        mode: InputMode,
        input_scale: Vec<f64>,
        bandwidth: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if features == 0 {
            return Err(Error::InvalidConfig {
                key: "feature_dim",
                reason: "need at least one feature".into(),
            });
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidConfig {
                key: "feature_bandwidth",
                reason: "must be positive".into(),
            });
        }
        let d_in = input_scale.len();
        let mut omega = Vec::with_capacity(features * d_in);
        for _ in 0..features * d_in {
            let g: f64 = rng.sample(StandardNormal);
            omega.push(g / bandwidth);
        }
        let phase = (0..features).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        Self::from_parts(omega, phase, bandwidth, mode, state_dim, input_scale)
    }

    /// Rebuilds a map from stored parameters (row-major `Ω`).
    pub fn from_parts(
        omega: Vec<f64>,
        phase: Vec<f64>,
        bandwidth: f64,
        mode: InputMode,
        state_dim: usize,
        input_scale: Vec<f64>,
    ) -> Result<Self> {
        let r = phase.len();
        let d_in = input_scale.len();
        check_dim("rff frequency matrix", r * d_in, omega.len())?;
        if d_in < state_dim || (mode == InputMode::StateOnly && d_in != state_dim) {
            return Err(Error::DimensionMismatch {
                what: "rff input scale",
                expected: state_dim,
                found: d_in,
            });
        }
        Ok(Self {
            omega,
            phase,
            bandwidth,
            mode,
            state_dim,
            input_scale,
            norm: libm::sqrt(2.0 / r as f64),
        })
    }

    pub fn dim(&self) -> usize {
        self.phase.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_scale.len()
    }

    pub fn mode(&self) -> InputMode {
        self.mode
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.input_scale
    }

    /// Row-major frequencies.
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn omega_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.input_dim(), &self.omega)
    }

    /// Evaluates on a full input vector `z` (`x`, or `(x, u)` stacked).
    pub fn eval(&self, z: &[f64]) -> Result<DVector<f64>> {
        check_dim("feature input", self.input_dim(), z.len())?;
        let mut out = vec![0.0; self.dim()];
        self.eval_split(z, &[], &mut out);
        Ok(DVector::from_vec(out))
    }

    fn eval_split(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let d_in = self.input_dim();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.omega[i * d_in..(i + 1) * d_in];
            let mut arg = self.phase[i];
            for (j, (w, s)) in row.iter().zip(&self.input_scale).enumerate() {
                let zj = if j < x.len() { x[j] } else { u[j - x.len()] };
                arg += w * s * zj;
            }
            *o = self.norm * libm::cos(arg);
        }
    }

    /// `L_{x,φ}`: per-feature bound on `|∂φᵢ/∂u|`, `√(2/r)·Σⱼ |Ωᵢⱼ sⱼ|`
    /// over the control block. Zero in state-only mode.
    pub fn control_lipschitz(&self) -> DVector<f64> {
        let r = self.dim();
        if self.mode == InputMode::StateOnly {
            return DVector::zeros(r);
        }
        let d_in = self.input_dim();
        DVector::from_iterator(
            r,
            (0..r).map(|i| {
                let row = &self.omega[i * d_in..(i + 1) * d_in];
                self.norm
                    * row[self.state_dim..]
                        .iter()
                        .zip(&self.input_scale[self.state_dim..])
                        .map(|(w, s)| (w * s).abs())
                        .sum::<f64>()
            }),
        )
    }
}

/// Per-coordinate monomials of the state, `(1, x₁, …, xₙ, x₁², …)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialMap {
    degree: usize,
    state_dim: usize,
}

impl MonomialMap {
    pub fn new(degree: usize, state_dim: usize) -> Self {
        Self { degree, state_dim }
    }

    pub fn dim(&self) -> usize {
        1 + self.degree * self.state_dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        let mut k = 1;
        for p in 1..=self.degree {
            for xi in x {
                out[k] = libm::pow(*xi, p as f64);
                k += 1;
            }
        }
    }
}

/// The feature map used by the residual model.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Rff(RffMap),
    Monomials(MonomialMap),
}

impl FeatureMap {
    pub fn build(
        kind: &FeatureKind,
        features: usize,
        bandwidth: f64,
        state_dim: usize,
        control_dim: usize,
        rng: &mut SimRng,
    ) -> Result<Self> {
        match kind {
            FeatureKind::Rff { input_scale } => {
                let mode = if input_scale.len() == state_dim {
                    InputMode::StateOnly
                } else if input_scale.len() == state_dim + control_dim {
                    InputMode::StateControl
                } else {
                    return Err(Error::DimensionMismatch {
                        what: "feature_scale",
                        expected: state_dim,
                        found: input_scale.len(),
                    });
                };
                Ok(FeatureMap::Rff(RffMap::build(
                    features,
                    state_dim,
                    mode,
                    input_scale.clone(),
                    bandwidth,
                    rng,
                )?))
            }
            FeatureKind::Monomials { degree } => {
                Ok(FeatureMap::Monomials(MonomialMap::new(*degree, state_dim)))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Rff(m) => m.dim(),
            FeatureMap::Monomials(m) => m.dim(),
        }
    }

    pub fn mode(&self) -> InputMode {
        match self {
            FeatureMap::Rff(m) => m.mode(),
            FeatureMap::Monomials(_) => InputMode::StateOnly,
        }
    }

    /// `φ(x, u)` written into `out` (length `r`).
    pub fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            FeatureMap::Rff(m) => match m.mode {
                InputMode::StateOnly => m.eval_split(x, &[], out),
                InputMode::StateControl => m.eval_split(x, u, out),
            },
            FeatureMap::Monomials(m) => m.eval_into(x, out),
        }
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, u, &mut out);
        DVector::from_vec(out)
    }

    /// Local Lipschitz vector `L_{x,φ}` of `φ(x, ·)`.
    pub fn control_lipschitz(&self, _x: &[f64]) -> DVector<f64> {
        match self {
            FeatureMap::Rff(m) => m.control_lipschitz(),
            FeatureMap::Monomials(m) => DVector::zeros(m.dim()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::seeded_rng;

    fn rff(r: usize, d: usize, seed: u64) -> RffMap {
        RffMap::build(
            r,
            d,
            InputMode::StateOnly,
            vec![1.0; d],
            1.0,
            &mut seeded_rng(seed, "features"),
        )
        .unwrap()
    }

    #[test]
    fn constant_feature() {
        let m = RffMap::from_parts(vec![0.0, 0.0], vec![0.0], 1.0, InputMode::StateOnly, 2, vec![1.0, 1.0])
            .unwrap();
        for z in [[0.0, 0.0], [3.0, -7.0]] {
            let phi = m.eval(&z).unwrap();
            assert!((phi[0] - libm::sqrt(2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_arithmetic() {
        let m = RffMap::from_parts(vec![0.0, 0.0], vec![0.0, PI / 2.0], 1.0, InputMode::StateOnly, 1, vec![1.0])
            .unwrap();
        let phi = m.eval(&[0.4]).unwrap();
        assert!((phi[0] - 1.0).abs() < 1e-15);
        assert!(phi[1].abs() < 1e-15);
    }

    #[test]
    fn bounded_by_sqrt_two() {
        let m = rff(50, 3, 1);
        let mut rng = seeded_rng(2, "z");
        for _ in 0..10_000 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
            assert!(m.eval(&z).unwrap().norm() <= libm::sqrt(2.0) + 1e-12);
        }
    }

    #[test]
    fn same_seed_same_map() {
        assert_eq!(rff(20, 2, 9), rff(20, 2, 9));
        assert_ne!(rff(20, 2, 9), rff(20, 2, 10));
    }

    #[test]
    fn dimension_mismatch_faults() {
        assert!(rff(5, 2, 0).eval(&[1.0]).is_err());
    }

    #[test]
    fn null_space_shift_leaves_features() {
        // Ω rows only touch the first coordinate.
        let omega = vec![1.3, 0.0, -0.4, 0.0, 2.2, 0.0];
        let m = RffMap::from_parts(omega, vec![0.1, 0.5, 1.0], 1.0, InputMode::StateOnly, 2, vec![1.0, 1.0])
            .unwrap();
        let a = m.eval(&[0.7, -3.0]).unwrap();
        let b = m.eval(&[0.7, 12.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lipschitz_in_input() {
        let m = rff(30, 2, 5);
        let op = crate::linalg::spectral_norm(&m.omega_matrix());
        let k = op * libm::sqrt(2.0 / 30.0);
        let mut rng = seeded_rng(6, "pairs");
        for _ in 0..2000 {
            let z: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let w: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let dz = DVector::from_column_slice(&z) - DVector::from_column_slice(&w);
            let dphi = m.eval(&z).unwrap() - m.eval(&w).unwrap();
            assert!(dphi.norm() <= k * dz.norm() + 1e-12);
        }
    }

    #[test]
    fn control_lipschitz_cases() {
        assert_eq!(rff(4, 2, 0).control_lipschitz(), DVector::zeros(4));
        let m = RffMap::from_parts(vec![0.5, 0.0], vec![0.0], 1.0, InputMode::StateControl, 1, vec![1.0, 1.0])
            .unwrap();
        assert_eq!(m.control_lipschitz(), DVector::zeros(1));
        let m = RffMap::from_parts(vec![2.0], vec![0.3], 1.0, InputMode::StateControl, 0, vec![1.0]).unwrap();
        assert!((m.control_lipschitz()[0] - libm::sqrt(2.0) * 2.0).abs() < 1e-15);
    }

    #[test]
    fn control_lipschitz_bounds_feature_change() {
        let map = FeatureMap::Rff(
            RffMap::build(
                25,
                2,
                InputMode::StateControl,
                vec![1.0, 0.5, 0.3, 0.2],
                1.0,
                &mut seeded_rng(8, "features"),
            )
            .unwrap(),
        );
        let mut rng = seeded_rng(11, "triples");
        for _ in 0..10_000 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let u: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lip = map.control_lipschitz(&x);
            let du: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            let diff = map.eval(&x, &u) - map.eval(&x, &v);
            assert!(diff.amax() <= lip.max() * du + 1e-12);
        }
    }

    #[test]
    fn monomials() {
        let m = MonomialMap::new(2, 1);
        let mut out = [0.0; 3];
        m.eval_into(&[3.0], &mut out);
        assert_eq!(out, [1.0, 3.0, 9.0]);
    }
}
