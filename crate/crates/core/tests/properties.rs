use nalgebra::DVector;
use proptest::prelude::*;
use safe_ctrl_core::cbf::{noise_envelope, noise_margin, Barrier, LinearConstraint};
use safe_ctrl_core::envs::{wrap_angle, Environment, PendulumParams, UnicycleParams};
use safe_ctrl_core::features::{FeatureKind, FeatureMap};
use safe_ctrl_core::filter::{project_safe, FilterStatus, FEAS_TOL};
use safe_ctrl_core::planner::{mppi_weights, Mppi, MppiConfig, PlanningModel};
use safe_ctrl_core::{seeded_rng, ControlBounds};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rff_features_are_bounded(seed in 0u64..1000, r in 1usize..64, x in prop::collection::vec(-10.0f64..10.0, 3)) {
        let mut rng = seeded_rng(seed, "features");
        let map = FeatureMap::build(&FeatureKind::Rff { input_scale: vec![1.0, 0.5, 0.2] }, r, 1.3, 2, 1, &mut rng).unwrap();
        let phi = map.eval(&x[..2], &x[2..]);
        let bound = (2.0 / r as f64).sqrt();
        prop_assert!(phi.iter().all(|v| v.abs() <= bound + 1e-15));
    }

    #[test]
    fn rff_control_lipschitz_bounds_differences(seed in 0u64..1000, x in prop::collection::vec(-3.0f64..3.0, 2), u in -15.0f64..15.0, v in -15.0f64..15.0) {
        let mut rng = seeded_rng(seed, "lipschitz");
        let map = FeatureMap::build(&FeatureKind::Rff { input_scale: vec![1.0, 0.1, 0.05] }, 12, 1.0, 2, 1, &mut rng).unwrap();
        let lip = map.control_lipschitz(&x);
        let a = map.eval(&x, &[u]);
        let b = map.eval(&x, &[v]);
        for i in 0..12 {
            prop_assert!((a[i] - b[i]).abs() <= lip[i] * (u - v).abs() + 1e-12);
        }
    }

    #[test]
    fn mppi_weights_form_a_simplex(costs in prop::collection::vec(0.0f64..1e4, 1..64), tau in 1e-3f64..100.0) {
        let w = mppi_weights(&costs, tau);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        let best = costs.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert!(w.iter().all(|v| *v <= w[best] + 1e-15));
    }

    #[test]
    fn projection_stays_in_box_and_respects_feasible_constraints(
        u in prop::collection::vec(-2.0f64..2.0, 2),
        rows in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..0.5), 0..4),
    ) {
        let bounds = ControlBounds::symmetric(1.0, 2).unwrap();
        let u_star = bounds.clamp(&DVector::from_vec(u));
        let cs: Vec<LinearConstraint> = rows
            .iter()
            .map(|(a, b, c)| LinearConstraint::new(DVector::from_vec(vec![*a, *b]), *c))
            .collect();
        let (out, status) = project_safe(&u_star, &cs, &bounds);
        prop_assert!(bounds.contains(&out, 1e-12));
        if status != FilterStatus::InfeasibleFallback {
            for c in &cs {
                prop_assert!(c.holds(out.as_slice(), FEAS_TOL * 10.0));
            }
        }
        if cs.iter().all(|c| c.holds(u_star.as_slice(), 0.0)) {
            prop_assert_eq!(out, u_star);
        }
    }

    #[test]
    fn projection_is_idempotent(u in prop::collection::vec(-1.0f64..1.0, 2), a in -1.0f64..1.0, b in -1.0f64..1.0, c in -0.5f64..0.5) {
        let bounds = ControlBounds::symmetric(1.0, 2).unwrap();
        let cs = vec![LinearConstraint::new(DVector::from_vec(vec![a, b]), c)];
        let (once, s1) = project_safe(&DVector::from_vec(u), &cs, &bounds);
        prop_assume!(s1 != FilterStatus::InfeasibleFallback);
        let (twice, _) = project_safe(&once, &cs, &bounds);
        prop_assert!((once - twice).amax() <= 1e-9);
    }

    #[test]
    fn margin_and_envelope_grow_with_horizon(h1 in 1usize..500, h2 in 1usize..500, sigma in 0.0f64..1.0, l in 0.1f64..30.0) {
        let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
        prop_assert!(noise_margin(l, sigma, 2, lo, 0.05) <= noise_margin(l, sigma, 2, hi, 0.05));
        prop_assert!(noise_envelope(sigma, 2, lo, 0.05) <= noise_envelope(sigma, 2, hi, 0.05));
        prop_assert!((noise_margin(l, sigma, 2, lo, 0.05) - l * 2f64.sqrt() * noise_envelope(sigma, 2, lo, 0.05)).abs() <= 1e-12 * (1.0 + l));
    }

    #[test]
    fn wrapped_angles_lie_in_half_open_interval(theta in -1e3f64..1e3) {
        let w = wrap_angle(theta);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        let turns = (theta - w) / (2.0 * std::f64::consts::PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn disk_barrier_lipschitz_bounds_differences(p in prop::collection::vec(-4.0f64..6.0, 2), q in prop::collection::vec(-3.0f64..3.0, 2)) {
        let d = Barrier::disk([1.0, 0.0], 0.8, [-4.0, 6.0, -3.0, 3.0]);
        let a = [p[0], p[1].clamp(-3.0, 3.0)];
        let b = [q[0].clamp(-4.0, 6.0), q[1]];
        let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        prop_assert!((d.value(&a) - d.value(&b)).abs() <= d.lipschitz() * dist + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn planner_controls_stay_in_box(seed in 0u64..1000, theta in -0.3f64..3.8, speed in -5.0f64..5.0) {
        let env = Environment::pendulum(PendulumParams::default()).unwrap();
        let cfg = MppiConfig { rollouts: 16, horizon: 8, temperature: 1.0, exploration: 2.0 };
        let mut mppi = Mppi::new(cfg, env.bounds().clone(), 50);
        let mut rng = seeded_rng(seed, "mppi");
        let mut x = vec![theta, speed];
        for _ in 0..5 {
            let out = mppi.plan_step(&env, &PlanningModel::Truth, &x, &mut rng);
            prop_assert!(env.bounds().contains(&out.control, 0.0));
            prop_assert!(mppi.nominal().iter().all(|v| v.abs() <= 15.0));
            let mut next = vec![0.0; 2];
            let mut buf = PlanningModel::Truth.buffers(&env);
            PlanningModel::Truth.step_into(&env, &x, out.control.as_slice(), &mut buf, &mut next);
            x = next;
        }
    }

    #[test]
    fn unicycle_planner_is_replayable(seed in 0u64..1000) {
        let env = Environment::unicycle(UnicycleParams::default(), false).unwrap();
        let cfg = MppiConfig { rollouts: 8, horizon: 6, temperature: 1.0, exploration: 0.4 };
        let x = env.initial_state();
        let run = || {
            let mut mppi = Mppi::new(cfg.clone(), env.bounds().clone(), 20);
            let mut rng = seeded_rng(seed, "mppi");
            (0..3).map(|_| mppi.plan_step(&env, &PlanningModel::Nominal, x.as_slice(), &mut rng).control).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}
