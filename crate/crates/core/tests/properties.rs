use proptest::prelude::*;
use tpa_core::attack::{attack_step_sign, AttackConfig, AttackKind};
use tpa_core::data::{clip_to_domain, Dataset, SplitSpec};
use tpa_core::flatness::{bound_components, second_order_diag_sum, transfer_gap, BoundConfig};
use tpa_core::model::{loss_ce, mlp_spec, Activation, Dense, Layer};
use tpa_core::oracle::oracle_hvp;
use tpa_core::tensor::sign;
use tpa_core::{Model, Tensor};

fn softplus_model(d: usize, seed: u64) -> Model {
    Model::init(&mlp_spec(d, &[5], 3, Activation::Softplus, 0), seed).unwrap()
}

fn unit_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clip_is_idempotent(x in prop::collection::vec(-2.0f64..3.0, 1..20)) {
        let once = clip_to_domain(&x);
        prop_assert_eq!(clip_to_domain(&once), once.clone());
        prop_assert!(once.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sign_step_stays_feasible(
        (x, delta, g) in (1usize..12).prop_flat_map(|d| (
            unit_vec(d),
            prop::collection::vec(-0.2f64..0.2, d),
            prop::collection::vec(-5.0f64..5.0, d),
        )),
        eps in 0.0f64..0.15,
        step in 0.0f64..0.1,
    ) {
        let cfg = AttackConfig { epsilon: eps, step_size: step, ..AttackConfig::published_defaults(AttackKind::Bim) };
        let out = attack_step_sign(&x, &delta, &g, &cfg);
        for (xi, di) in x.iter().zip(&out) {
            prop_assert!(di.abs() <= eps + 1e-12);
            prop_assert!(*di >= -xi - 1e-15 && *di <= 1.0 - xi + 1e-15);
        }
    }

    #[test]
    fn sign_is_odd_and_zero_at_zero(v in -1e6f64..1e6) {
        prop_assert_eq!(sign(-v), -sign(v));
        prop_assert!(sign(v) == 0.0 || sign(v).abs() == 1.0);
        prop_assert_eq!(sign(0.0), 0.0);
    }

    #[test]
    fn oracle_hvp_is_odd_in_direction(x in unit_vec(4), v in prop::collection::vec(-1.0f64..1.0, 4), seed in 0u64..50) {
        prop_assume!(v.iter().any(|c| c.abs() > 1e-3));
        let m = softplus_model(4, seed);
        let neg: Vec<f64> = v.iter().map(|c| -c).collect();
        let a = oracle_hvp(&m, &x, 1, &v, 1e-4).unwrap();
        let b = oracle_hvp(&m, &x, 1, &neg, 1e-4).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!(*p, -*q);
        }
    }

    #[test]
    fn splits_are_deterministic_and_disjoint(seed in 0u64..1000, n in 0usize..300) {
        let spec = SplitSpec { seed, ..SplitSpec::default() };
        let a = spec.split(n).unwrap();
        prop_assert_eq!(&a, &spec.split(n).unwrap());
        let mut all: Vec<usize> = a.proxy_train.iter().chain(&a.target_train).chain(&a.eval).copied().collect();
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), total);
        prop_assert!(all.iter().all(|&i| i < n));
    }

    #[test]
    fn transfer_gap_is_antisymmetric(x in unit_vec(3), s1 in 0u64..100, s2 in 0u64..100, y in 0usize..3) {
        let a = softplus_model(3, s1);
        let b = softplus_model(3, s2);
        prop_assert_eq!(transfer_gap(&a, &b, &x, y).unwrap(), -transfer_gap(&b, &a, &x, y).unwrap());
    }

    #[test]
    fn loss_is_nonnegative(z in prop::collection::vec(-500.0f64..500.0, 2..8), pick in 0usize..8) {
        let y = pick % z.len();
        prop_assert!(loss_ce(&z, y).unwrap() >= 0.0);
    }

    #[test]
    fn zero_bias_linear_stacks_are_homogeneous(x in unit_vec(3), a in -4.0f64..4.0, seed in 0u64..100) {
        let mut m = Model::init(&[tpa_core::LayerSpec::linear(3, 4), tpa_core::LayerSpec::linear(4, 2)], seed).unwrap();
        for layer in m.layers_mut() {
            if let Layer::Linear(Dense { bias, .. }) = layer {
                bias.iter_mut().for_each(|b| *b = 0.0);
            }
        }
        let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
        let lhs = m.forward(&scaled).unwrap();
        let rhs: Vec<f64> = m.forward(&x).unwrap().iter().map(|v| a * v).collect();
        for (p, q) in lhs.iter().zip(&rhs) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn diag_sum_is_stable_under_halving_h(x in unit_vec(4), seed in 0u64..100, y in 0usize..3) {
        let m = softplus_model(4, seed);
        let a = second_order_diag_sum(&m, &x, y, 1e-3).unwrap();
        let b = second_order_diag_sum(&m, &x, y, 5e-4).unwrap();
        prop_assume!(a > 1e-6);
        prop_assert!((a - b).abs() <= 0.01 * a, "{} vs {}", a, b);
    }

    #[test]
    fn bound_is_monotone_in_c_and_components_add_up(
        rows in prop::collection::vec(unit_vec(3), 1..6),
        deltas_seed in 0u64..1000,
        c1 in 0.01f64..1.0,
        c2 in 0.01f64..1.0,
    ) {
        let n = rows.len();
        let data = Dataset::new(
            Tensor::new(vec![n, 3], rows.concat()).unwrap(),
            (0..n).map(|i| i % 3).collect(),
            3,
        ).unwrap();
        let deltas: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..3).map(|j| (((deltas_seed + (i * 3 + j) as u64) % 7) as f64 - 3.0) / 100.0).collect())
            .collect();
        let proxy = softplus_model(3, 1);
        let target = softplus_model(3, 2);
        let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        let report = |c: f64| bound_components(&proxy, &target, &data, &deltas, &BoundConfig { c, ..BoundConfig::default() }).unwrap();
        let a = report(lo);
        let b = report(hi);
        prop_assert!(a.rhs_total <= b.rhs_total);
        for r in [&a, &b] {
            prop_assert!(r.model_diff_component >= 0.0 && r.first_order_component >= 0.0 && r.second_order_component >= 0.0);
            let sum = r.model_diff_component + r.first_order_component + r.second_order_component;
            prop_assert!((r.rhs_total - sum).abs() < 1e-12);
        }
    }
}
