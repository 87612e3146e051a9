//! Online ridge regression of the residual weights `W`, the confidence balls
//! around the estimate, and Thompson sampling from them.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{EpisodeTrace, SimRng};
use crate::envs::Environment;
use crate::error::{check_dim, Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{solve_right_spd, spectral_norm, sym_inv_sqrt, weighted_spectral_norm};

/// `√λ·C₁ + σ̄·√(8n·ln 5 + 8r·ln(1 + samples/λ) + 8·ln(1/δ))`.
pub fn confidence_radius(
    lambda: f64,
    norm_bound: f64,
    sigma_bar: f64,
    n: usize,
    r: usize,
    samples: f64,
    delta: f64,
) -> f64 {
    let inner = 8.0 * n as f64 * libm::log(5.0)
        + 8.0 * r as f64 * libm::log(1.0 + samples / lambda)
        + 8.0 * libm::log(1.0 / delta);
    libm::sqrt(lambda) * norm_bound + sigma_bar * libm::sqrt(inner)
}

/// Hyperparameters of the residual model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub lambda: f64,
    /// `C₁`, the assumed bound on `‖W*‖₂`.
    pub norm_bound: f64,
    pub delta: f64,
    pub sigma_bar: f64,
    /// `T·H`, the number of online samples the radius is sized for.
    pub online_samples: usize,
}

impl ModelParams {
    fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidConfig {
                key: "ridge_lambda",
                reason: "must be positive".into(),
            });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig {
                key: "delta",
                reason: "must lie in (0, 1)".into(),
            });
        }
        Ok(())
    }
}

/// `{W : ‖(W − center)·shape^{1/2}‖₂ ≤ radius, ‖W‖₂ ≤ cap}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBall {
    pub center: DMatrix<f64>,
    pub shape: DMatrix<f64>,
    pub radius: f64,
    pub cap: f64,
}

impl ConfidenceBall {
    pub fn ellipsoid_norm(&self, w: &DMatrix<f64>) -> f64 {
        weighted_spectral_norm(&(w - &self.center), &self.shape)
    }

    pub fn contains(&self, w: &DMatrix<f64>) -> bool {
        self.ellipsoid_norm(w) <= self.radius && spectral_norm(w) <= self.cap
    }
}

/// One transition `(x, u, x')` used for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: DVector<f64>,
    pub control: DVector<f64>,
    pub next_state: DVector<f64>,
}

/// Ridge estimate `W̄ = (Σᵢ yᵢφᵢᵀ)(Σᵢ φᵢφᵢᵀ + λI)⁻¹` of the residual weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualModel {
    params: ModelParams,
    n: usize,
    r: usize,
    information: DMatrix<f64>,
    cross: DMatrix<f64>,
    estimate: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    count: usize,
    initial_count: usize,
    beta: f64,
    ball0: ConfidenceBall,
}

impl ResidualModel {
    /// Model without data: `W̄ = 0`, `Σ = λI`.
    pub fn empty(n: usize, r: usize, params: ModelParams) -> Result<Self> {
        params.validate()?;
        let information = DMatrix::identity(r, r) * params.lambda;
        let beta = confidence_radius(params.lambda, params.norm_bound, params.sigma_bar, n, r, 0.0, params.delta);
        let estimate = DMatrix::zeros(n, r);
        Ok(Self {
            params,
            n,
            r,
            inv_sqrt: sym_inv_sqrt(&information),
            ball0: ConfidenceBall {
                center: estimate.clone(),
                shape: information.clone(),
                radius: beta,
                cap: params.norm_bound,
            },
            information,
            cross: DMatrix::zeros(n, r),
            estimate,
            count: 0,
            initial_count: 0,
            beta,
        })
    }

    /// Initial ridge fit on `N` transitions; freezes `Ball₀`.
    pub fn fit_initial(
        env: &Environment,
        features: &FeatureMap,
        data: &[Transition],
        params: ModelParams,
    ) -> Result<Self> {
        let mut model = Self::empty(env.state_dim(), features.dim(), params)?;
        for t in data {
            model.absorb_transition(env, features, &t.state, &t.control, &t.next_state)?;
        }
        model.resolve()?;
        model.initial_count = model.count;
        model.beta = confidence_radius(
            params.lambda,
            params.norm_bound,
            params.sigma_bar,
            model.n,
            model.r,
            model.count as f64,
            params.delta,
        );
        model.ball0 = ConfidenceBall {
            center: model.estimate.clone(),
            shape: model.information.clone(),
            radius: model.beta,
            cap: params.norm_bound,
        };
        Ok(model)
    }

    /// Adds `φ φᵀ` and `y φᵀ` without re-solving.
    pub fn absorb(&mut self, phi: &[f64], y: &[f64]) -> Result<()> {
        check_dim("feature vector", self.r, phi.len())?;
        check_dim("residual target", self.n, y.len())?;
        for j in 0..self.r {
            for i in 0..self.r {
                self.information[(i, j)] += phi[i] * phi[j];
            }
            for i in 0..self.n {
                self.cross[(i, j)] += y[i] * phi[j];
            }
        }
        self.count += 1;
        Ok(())
    }

    fn absorb_transition(
        &mut self,
        env: &Environment,
        features: &FeatureMap,
        x: &DVector<f64>,
        u: &DVector<f64>,
        next: &DVector<f64>,
    ) -> Result<()> {
        if !(x.iter().chain(u.iter()).chain(next.iter()).all(|v| v.is_finite())) {
            return Err(Error::NonFiniteState {
                env: env.id().as_str(),
                step: self.count,
            });
        }
        let mut pred = vec![0.0; self.n];
        let zero = vec![0.0; self.n];
        env.predict_into(x.as_slice(), u.as_slice(), &zero, &mut pred);
        let y: Vec<f64> = next.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let phi = features.eval(x.as_slice(), u.as_slice());
        self.absorb(phi.as_slice(), &y)
    }

    /// Re-solves the normal equations and refreshes `Σ^{-1/2}`.
    pub fn resolve(&mut self) -> Result<()> {
        self.estimate = solve_right_spd(&self.information, &self.cross)?;
        self.inv_sqrt = sym_inv_sqrt(&self.information);
        Ok(())
    }

    /// Absorbs every transition of an episode, re-solves and sets `β_t`.
    pub fn update(&mut self, env: &Environment, features: &FeatureMap, trace: &EpisodeTrace) -> Result<()> {
        if trace.is_empty() {
            return Ok(());
        }
        for s in &trace.steps {
            self.absorb_transition(env, features, &s.state, &s.control, &s.next_state)?;
        }
        self.resolve()?;
        self.beta = self.online_radius();
        Ok(())
    }

    /// `β_t` sized for `T·H + N` samples.
    pub fn online_radius(&self) -> f64 {
        let p = &self.params;
        confidence_radius(
            p.lambda,
            p.norm_bound,
            p.sigma_bar,
            self.n,
            self.r,
            (p.online_samples + self.initial_count) as f64,
            p.delta,
        )
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn feature_dim(&self) -> usize {
        self.r
    }

    /// `W̄_t`.
    pub fn estimate(&self) -> &DMatrix<f64> {
        &self.estimate
    }

    /// `Σ_t`.
    pub fn information(&self) -> &DMatrix<f64> {
        &self.information
    }

    /// `Σᵢ yᵢφᵢᵀ`.
    pub fn cross_moment(&self) -> &DMatrix<f64> {
        &self.cross
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn ball0(&self) -> &ConfidenceBall {
        &self.ball0
    }

    /// The current ellipsoid `‖(W − W̄_t)Σ_t^{1/2}‖₂ ≤ β_t`, capped at `C₁`.
    pub fn ball_t(&self) -> ConfidenceBall {
        ConfidenceBall {
            center: self.estimate.clone(),
            shape: self.information.clone(),
            radius: self.beta,
            cap: self.params.norm_bound,
        }
    }

    /// Membership in `Ball_t = Ball₀ ∩ {‖(W − W̄_t)Σ_t^{1/2}‖₂ ≤ β_t}`.
    pub fn ball_contains(&self, w: &DMatrix<f64>) -> bool {
        self.ball0.contains(w)
            && weighted_spectral_norm(&(w - &self.estimate), &self.information) <= self.beta
    }

    /// Draws rows `W̄ᵢ + ν·(Σ^{-1/2} g)ᵀ` until the draw lies in `Ball_t`.
    /// After `max_attempts` rejections returns `W̄_t` scaled into the norm
    /// cap with the fallback flag set.
    pub fn thompson_sample(&self, scale: f64, rng: &mut SimRng, max_attempts: usize) -> (DMatrix<f64>, bool) {
        for _ in 0..max_attempts.max(1) {
            let g = DMatrix::from_fn(self.n, self.r, |_, _| StandardNormal.sample(rng));
            let w = &self.estimate + (g * &self.inv_sqrt) * scale;
            if self.ball_contains(&w) {
                return (w, false);
            }
        }
        (self.clipped_estimate(), true)
    }

    /// `W̄_t` scaled down to `‖W‖₂ ≤ C₁` if needed.
    pub fn clipped_estimate(&self) -> DMatrix<f64> {
        let norm = spectral_norm(&self.estimate);
        if norm > self.params.norm_bound {
            &self.estimate * (self.params.norm_bound / norm)
        } else {
            self.estimate.clone()
        }
    }
}

/// `W̃·φ`.
pub fn predict_residual(weights: &DMatrix<f64>, phi: &[f64]) -> Result<DVector<f64>> {
    check_dim("feature vector", weights.ncols(), phi.len())?;
    Ok(weights * DVector::from_column_slice(phi))
}
