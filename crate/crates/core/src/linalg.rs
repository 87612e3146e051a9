//! Small dense helpers over `nalgebra` used by the residual model.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor applied before taking matrix roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

fn floored_eigen(s: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut eig = SymmetricEigen::new(s.clone());
    let floor = EIGEN_FLOOR * s.trace().abs().max(f64::MIN_POSITIVE);
    for v in eig.eigenvalues.iter_mut() {
        if *v < floor {
            *v = floor;
        }
    }
    eig
}

fn eigen_map(s: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = floored_eigen(s);
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, v) in eig.eigenvalues.iter().enumerate() {
        let k = f(*v);
        scaled.column_mut(j).scale_mut(k);
    }
    scaled * q.transpose()
}

/// `S^{1/2}` of a symmetric positive semidefinite matrix.
pub fn sym_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    eigen_map(s, libm::sqrt)
}

/// `S^{-1/2}` of a symmetric positive definite matrix.
pub fn sym_inv_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    eigen_map(s, |v| 1.0 / libm::sqrt(v))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(s: &DMatrix<f64>) -> f64 {
    if s.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(s.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    if s.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(s.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral norm `‖A‖₂`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    libm::sqrt(max_eigenvalue(&gram).max(0.0))
}

/// `‖A S^{1/2}‖₂`, computed as `sqrt(λ_max(A S Aᵀ))` without forming the root.
pub fn weighted_spectral_norm(a: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    let m = a * s * a.transpose();
    let sym = (&m + m.transpose()) * 0.5;
    libm::sqrt(max_eigenvalue(&sym).max(0.0))
}

/// Solves `W S = B` for `W` with `S` symmetric positive definite.
pub fn solve_right_spd(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or(Error::SingularSolve("ridge normal equations"))?;
    Ok(chol.solve(&b.transpose()).transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roots_invert_each_other() {
        let s = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sym_sqrt(&s);
        assert!((&r * &r - &s).amax() < 1e-12);
        let ir = sym_inv_sqrt(&s);
        assert!((&ir * &s * &ir - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn weighted_norm_matches_explicit_root() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.3, 0.1, -1.0]);
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.5, 0.3, 0.0, 0.3, 1.0]);
        let explicit = spectral_norm(&(&a * sym_sqrt(&s)));
        assert!((weighted_spectral_norm(&a, &s) - explicit).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert!((spectral_norm(&a) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn right_solve() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let w = DMatrix::from_row_slice(1, 2, &[1.0, -3.0]);
        let b = &w * &s;
        assert!((solve_right_spd(&s, &b).unwrap() - w).amax() < 1e-14);
        assert!(solve_right_spd(&DMatrix::zeros(2, 2), &b).is_err());
    }
}
