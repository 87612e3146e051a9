//! Minimally invasive safety projection of a nominal control onto the set
//! `{u : aᵢ·u ≥ bᵢ, u⁻ ≤ u ≤ u⁺}`.
//!
//! The problems here are tiny (one or two controls, a handful of
//! constraints), so the QP is solved exactly by enumerating active sets.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::cbf::LinearConstraint;
use crate::domain::ControlBounds;

/// Feasibility tolerance on constraint slack.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterStatus {
    /// The nominal control already satisfied every constraint.
    Unmodified,
    /// The nominal control was moved to the nearest feasible point.
    Projected,
    /// No feasible control exists; the max-margin control was returned.
    InfeasibleFallback,
}

/// Constraints plus the box faces, all as `a·u ≥ b`.
fn with_box(constraints: &[LinearConstraint], bounds: &ControlBounds) -> Vec<(DVector<f64>, f64)> {
    let m = bounds.dim();
    let mut rows: Vec<(DVector<f64>, f64)> =
        constraints.iter().map(|c| (c.a.clone(), c.b)).collect();
    for j in 0..m {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        rows.push((e.clone(), bounds.lower()[j]));
        rows.push((-e, -bounds.upper()[j]));
    }
    rows
}

fn feasible(rows: &[(DVector<f64>, f64)], u: &DVector<f64>, tol: f64) -> bool {
    rows.iter().all(|(a, b)| a.dot(u) - b >= -tol)
}

/// Calls `f` on every subset of `0..k` with at most `max` elements, in
/// increasing size and lexicographic order.
fn for_each_subset(k: usize, max: usize, mut f: impl FnMut(&[usize])) {
    f(&[]);
    for size in 1..=max.min(k) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            f(&idx);
            let mut i = size;
            while i > 0 && idx[i - 1] == k - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
}

/// Solves a square system, rejecting (near-)singular ones.
fn solve_square(mat: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let scale: f64 = mat
        .row_iter()
        .map(|r| r.norm())
        .fold(1.0, |acc, n| acc * n.max(f64::MIN_POSITIVE));
    let lu = mat.full_piv_lu();
    if lu.determinant().abs() <= 1e-12 * scale {
        return None;
    }
    lu.solve(&rhs)
}

fn lex_less(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Nearest feasible point by active-set enumeration, or `None` when the set
/// is empty (to tolerance).
fn nearest_feasible(u_star: &DVector<f64>, rows: &[(DVector<f64>, f64)], m: usize) -> Option<DVector<f64>> {
    let mut best: Option<(f64, DVector<f64>)> = None;
    for_each_subset(rows.len(), m, |active| {
        let cand = if active.is_empty() {
            u_star.clone()
        } else {
            let k = active.len();
            let a = DMatrix::from_fn(k, m, |i, j| rows[active[i]].0[j]);
            let r = DVector::from_fn(k, |i, _| rows[active[i]].1 - rows[active[i]].0.dot(u_star));
            let gram = &a * a.transpose();
            match solve_square(gram, r) {
                Some(lam) => u_star + a.transpose() * lam,
                None => return,
            }
        };
        if !feasible(rows, &cand, FEAS_TOL) {
            return;
        }
        let d = (&cand - u_star).norm_squared();
        let better = match &best {
            None => true,
            Some((bd, bu)) => d < bd - 1e-12 || (d <= bd + 1e-12 && lex_less(&cand, bu)),
        };
        if better {
            best = Some((d, cand));
        }
    });
    best.map(|(_, u)| u)
}

/// `argmin ‖u − u*‖²` subject to the constraints and the box. Falls back to
/// [`fallback_safest`] when the feasible set is empty.
pub fn project_safe(
    u_star: &DVector<f64>,
    constraints: &[LinearConstraint],
    bounds: &ControlBounds,
) -> (DVector<f64>, FilterStatus) {
    let rows = with_box(constraints, bounds);
    if feasible(&rows, u_star, 0.0) {
        return (u_star.clone(), FilterStatus::Unmodified);
    }
    match nearest_feasible(u_star, &rows, bounds.dim()) {
        Some(u) => (bounds.clamp(&u), FilterStatus::Projected),
        None => (
            fallback_safest(u_star, constraints, bounds),
            FilterStatus::InfeasibleFallback,
        ),
    }
}

/// Control in the box maximizing `minᵢ (aᵢ·u − bᵢ)`. Among maximizers the
/// one nearest to `u_star` is returned.
pub fn fallback_safest(
    u_star: &DVector<f64>,
    constraints: &[LinearConstraint],
    bounds: &ControlBounds,
) -> DVector<f64> {
    let m = bounds.dim();
    if constraints.is_empty() {
        return bounds.clamp(u_star);
    }
    // Vertices of the LP over (u, t): constraints read aᵢ·u − t ≥ bᵢ.
    let mut eqs: Vec<(DVector<f64>, f64)> = Vec::new();
    for c in constraints {
        let mut row = DVector::zeros(m + 1);
        row.rows_mut(0, m).copy_from(&c.a);
        row[m] = -1.0;
        eqs.push((row, c.b));
    }
    for j in 0..m {
        let mut e = DVector::zeros(m + 1);
        e[j] = 1.0;
        eqs.push((e.clone(), bounds.lower()[j]));
        eqs.push((-e, -bounds.upper()[j]));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for_each_subset(eqs.len(), m + 1, |active| {
        if active.len() != m + 1 {
            return;
        }
        let mat = DMatrix::from_fn(m + 1, m + 1, |i, j| eqs[active[i]].0[j]);
        let rhs = DVector::from_fn(m + 1, |i, _| eqs[active[i]].1);
        let Some(z) = solve_square(mat, rhs) else {
            return;
        };
        if !feasible(&eqs, &z, FEAS_TOL) {
            return;
        }
        let t = z[m];
        if best.as_ref().map_or(true, |(bt, _)| t > *bt) {
            best = Some((t, z));
        }
    });
    let Some((t_max, vertex)) = best else {
        return bounds.clamp(u_star);
    };
    let vertex_u = DVector::from_fn(m, |i, _| vertex[i]);
    let shifted: Vec<LinearConstraint> = constraints
        .iter()
        .map(|c| LinearConstraint::new(c.a.clone(), c.b + t_max))
        .collect();
    let rows = with_box(&shifted, bounds);
    if feasible(&rows, u_star, 0.0) {
        return bounds.clamp(u_star);
    }
    match nearest_feasible(u_star, &rows, m) {
        Some(u) => bounds.clamp(&u),
        None => bounds.clamp(&vertex_u),
    }
}

/// Exhaustive grid minimizer of `‖u − u*‖²` over feasible grid points of the
/// box (`m ≤ 2`). Returns `None` when no grid point is feasible.
pub fn brute_force_qp(
    u_star: &DVector<f64>,
    constraints: &[LinearConstraint],
    bounds: &ControlBounds,
    step: f64,
) -> Option<DVector<f64>> {
    let m = bounds.dim();
    assert!(m <= 2, "grid oracle supports at most two controls");
    let axis = |j: usize| -> Vec<f64> {
        let lo = bounds.lower()[j];
        let hi = bounds.upper()[j];
        let count = libm::floor((hi - lo) / step) as usize;
        let mut pts: Vec<f64> = (0..=count).map(|i| lo + i as f64 * step).collect();
        if *pts.last().unwrap() < hi {
            pts.push(hi);
        }
        pts
    };
    let axes: Vec<Vec<f64>> = (0..m).map(axis).collect();
    let rows: Vec<(DVector<f64>, f64)> = constraints.iter().map(|c| (c.a.clone(), c.b)).collect();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut visit = |u: DVector<f64>| {
        if !feasible(&rows, &u, FEAS_TOL) {
            return;
        }
        let d = (&u - u_star).norm_squared();
        if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
            best = Some((d, u));
        }
    };
    match m {
        0 => visit(DVector::zeros(0)),
        1 => {
            for &a in &axes[0] {
                visit(DVector::from_vec(vec![a]));
            }
        }
        _ => {
            for &a in &axes[0] {
                for &b in &axes[1] {
                    visit(DVector::from_vec(vec![a, b]));
                }
            }
        }
    }
    best.map(|(_, u)| u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::seeded_rng;
    use rand::Rng;

    fn c1(a: f64, b: f64) -> LinearConstraint {
        LinearConstraint::new(DVector::from_element(1, a), b)
    }

    fn unit_box() -> ControlBounds {
        ControlBounds::symmetric(1.0, 1).unwrap()
    }

    fn u1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn examples() {
        let (u, s) = project_safe(&u1(0.8), &[c1(2.0, 1.0)], &unit_box());
        assert_eq!((u[0], s), (0.8, FilterStatus::Unmodified));
        let (u, s) = project_safe(&u1(0.0), &[c1(2.0, 1.0)], &unit_box());
        assert!((u[0] - 0.5).abs() < 1e-12);
        assert_eq!(s, FilterStatus::Projected);
        let (_, s) = project_safe(&u1(0.0), &[c1(0.0, 1.0)], &unit_box());
        assert_eq!(s, FilterStatus::InfeasibleFallback);
    }

    #[test]
    fn fallback_examples() {
        let b = unit_box();
        assert_eq!(fallback_safest(&u1(0.0), &[c1(1.0, 5.0)], &b)[0], 1.0);
        assert_eq!(fallback_safest(&u1(0.3), &[c1(-1.0, 5.0)], &b)[0], -1.0);
        let u = fallback_safest(&u1(0.7), &[c1(1.0, 2.0), c1(-1.0, 2.0)], &b);
        assert!(u[0].abs() < 1e-9);
    }

    #[test]
    fn agrees_with_grid_in_one_dimension() {
        let mut rng = seeded_rng(4, "test");
        let b = ControlBounds::symmetric(1.0, 1).unwrap();
        let step = 1e-3;
        for _ in 0..1000 {
            let k = rng.gen_range(1..=3);
            let cs: Vec<_> = (0..k)
                .map(|_| c1(rng.gen_range(-2.0..2.0), rng.gen_range(-1.5..1.5)))
                .collect();
            let us = u1(rng.gen_range(-1.0..1.0));
            let (u, s) = project_safe(&us, &cs, &b);
            match brute_force_qp(&us, &cs, &b, step) {
                Some(g) => {
                    assert_ne!(s, FilterStatus::InfeasibleFallback);
                    assert!((u[0] - g[0]).abs() <= step + 1e-9);
                }
                None => assert_eq!(s, FilterStatus::InfeasibleFallback),
            }
        }
    }

    #[test]
    fn idempotent_and_in_box() {
        let mut rng = seeded_rng(5, "test");
        let b = ControlBounds::new(vec![0.0, -2.0], vec![1.0, 2.0]).unwrap();
        for _ in 0..500 {
            let cs: Vec<_> = (0..2)
                .map(|_| {
                    LinearConstraint::new(
                        DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let us = DVector::from_vec(vec![rng.gen_range(-0.5..1.5), rng.gen_range(-3.0..3.0)]);
            let (u, s) = project_safe(&us, &cs, &b);
            assert!(b.contains(&u, 0.0));
            if s != FilterStatus::InfeasibleFallback {
                assert!(cs.iter().all(|c| c.holds(u.as_slice(), 1e-9)));
                let (again, _) = project_safe(&u, &cs, &b);
                assert!((again - &u).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn subsets_enumerated_once() {
        let mut seen = Vec::new();
        for_each_subset(4, 2, |s| seen.push(s.to_vec()));
        assert_eq!(seen.len(), 1 + 4 + 6);
        assert_eq!(seen[5], vec![0, 1]);
        assert_eq!(seen[10], vec![2, 3]);
    }
}
