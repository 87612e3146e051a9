use proptest::prelude::*;
use safe_ctrl::config::{parse_config, to_canonical};
use safe_ctrl_core::envs::EnvId;
use safe_ctrl_core::ExperimentConfig;

fn env_strategy() -> impl Strategy<Value = EnvId> {
    prop::sample::select(EnvId::ALL.to_vec())
}

proptest! {
    #[test]
    fn canonical_text_round_trips(
        env in env_strategy(),
        seed in any::<u64>(),
        episodes in 1usize..500,
        eta in 0.001f64..1.0,
        lambda in 1e-6f64..1e3,
        tau in 1e-3f64..1e2,
        theta in -0.35f64..3.9, speed in -10.0f64..10.0,
    ) {
        let mut cfg = ExperimentConfig::preset(env);
        cfg.seed = seed;
        cfg.episodes = episodes;
        cfg.eta = eta;
        cfg.ridge_lambda = lambda;
        cfg.mppi.temperature = tau;
        cfg.pendulum.x0 = vec![theta, speed];
        let text = to_canonical(&cfg);
        let back = parse_config(&text, &[]).unwrap();
        if env == EnvId::Pendulum {
            prop_assert_eq!(&back, &cfg);
        } else {
            // Sections of other environments are not written out.
            prop_assert_eq!(to_canonical(&back), text);
            prop_assert_eq!(back.eta, cfg.eta);
        }
    }

    #[test]
    fn overrides_are_order_sensitive_last_wins(a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let text = "env = synthetic-linear\nseed = 0\nepisodes = 1\nhorizon = 5\n";
        let cfg = parse_config(text, &[("eta".into(), a.to_string()), ("eta".into(), b.to_string())]).unwrap();
        prop_assert_eq!(cfg.eta, b);
    }
}
