use nalgebra::DMatrix;
use proptest::prelude::*;

use spvar::loss::{build_predictors, loss_value};
use spvar::model::{canonicalize, coef_matrix, model_from_json, model_to_json, vma_coeffs, CoefSet, Eta, ModelOrders, Omega, SpvarModel};
use spvar::selection::bic_score;
use spvar::simulate::{rescale_for_stationarity, rng_from_seed, simulate_spvar};
use spvar::solver::{fit, project_omega, soft_threshold, Estimator, FitConfig, OmegaInit};
use spvar::SeriesPanel;

fn orders_strategy(max: usize) -> impl Strategy<Value = ModelOrders> {
    (0..=max, 0..=max, 0..=max).prop_map(|(p, r, s)| ModelOrders::new(p, r, s))
}

fn omega_strategy(r: usize, s: usize) -> impl Strategy<Value = Omega> {
    (prop::collection::vec(prop_oneof![-0.9..-0.05f64, 0.05..0.9f64], r), prop::collection::vec((0.05..0.9f64, 0.1..3.0f64), s))
        .prop_map(|(l, e)| Omega::new(l, e.into_iter().map(|(g, t)| Eta::new(g, t)).collect()))
}

fn model_strategy(n: usize) -> impl Strategy<Value = SpvarModel> {
    orders_strategy(2).prop_flat_map(move |o| {
        let d = o.d();
        (omega_strategy(o.r, o.s), prop::collection::vec(prop::collection::vec(-0.4..0.4f64, n * n), d)).prop_map(move |(om, mats)| {
            let mats = mats.into_iter().map(|v| DMatrix::from_row_slice(n, n, &v)).collect();
            SpvarModel::new(o, om, CoefSet::with_dim(n, mats).unwrap()).unwrap()
        })
    })
}

fn panel_strategy(t: usize, n: usize) -> impl Strategy<Value = SeriesPanel> {
    prop::collection::vec(-3.0..3.0f64, t * n).prop_map(move |v| SeriesPanel::from_matrix(DMatrix::from_row_slice(t, n, &v)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_threshold_scales(z in prop::collection::vec(-5.0..5.0f64, 1..20), tau in 0.0..2.0f64, c in 0.1..10.0f64) {
        let a = soft_threshold(&z.iter().map(|v| c * v).collect::<Vec<_>>(), c * tau);
        let b = soft_threshold(&z, tau);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - c * y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn soft_threshold_is_nonexpansive(z in prop::collection::vec(-5.0..5.0f64, 1..10), w in prop::collection::vec(-5.0..5.0f64, 1..10), tau in 0.0..2.0f64) {
        let k = z.len().min(w.len());
        let (sz, sw) = (soft_threshold(&z[..k], tau), soft_threshold(&w[..k], tau));
        for i in 0..k {
            prop_assert!((sz[i] - sw[i]).abs() <= (z[i] - w[i]).abs() + 1e-15);
            prop_assert!(sz[i].abs() <= z[i].abs());
        }
    }

    #[test]
    fn projection_is_idempotent_and_in_box(l in prop::collection::vec(-3.0..3.0f64, 0..4), e in prop::collection::vec((-1.0..2.0f64, -1.0..5.0f64), 0..3), eps in 0.01..0.4f64) {
        let om = Omega::new(l, e.into_iter().map(|(g, t)| Eta::new(g, t)).collect());
        let p = project_omega(&om, eps);
        prop_assert!(p.in_box(eps));
        prop_assert_eq!(project_omega(&p, eps), p);
    }

    #[test]
    fn omega_vector_round_trip(om in (0..4usize, 0..3usize).prop_flat_map(|(r, s)| omega_strategy(r, s))) {
        let back = Omega::from_vec(om.r(), om.s(), &om.to_vec()).unwrap();
        prop_assert_eq!(back, om);
    }

    #[test]
    fn json_round_trip_is_exact(m in model_strategy(3)) {
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let (back, nm) = model_from_json(&model_to_json(&m, &names).unwrap()).unwrap();
        prop_assert_eq!(nm, names);
        prop_assert_eq!(back, m);
    }

    #[test]
    fn canonical_form_keeps_every_lag(m in model_strategy(2)) {
        let c = canonicalize(&m);
        for h in 1..=12 {
            let (a, b) = (coef_matrix(h, &m).unwrap(), coef_matrix(h, &c).unwrap());
            prop_assert!((a - b).amax() <= 1e-12);
        }
        prop_assert_eq!(canonicalize(&c), c);
    }

    #[test]
    fn first_impulse_response_is_first_lag(m in model_strategy(3)) {
        let psi = vma_coeffs(&m, 2);
        prop_assert!((&psi[0] - coef_matrix(1, &m).unwrap()).amax() <= 1e-14);
    }

    #[test]
    fn csv_round_trip_is_exact(y in panel_strategy(7, 3)) {
        let mut buf = Vec::new();
        y.write_csv(&mut buf).unwrap();
        let back = SeriesPanel::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.data(), y.data());
    }

    #[test]
    fn bic_increases_with_loss_and_order(loss in 1e-3..10.0f64, bump in 1e-6..1.0f64, t in 20..2000usize) {
        let o = ModelOrders::new(1, 1, 0);
        let big = ModelOrders::new(1, 1, 1);
        let b0 = bic_score(loss, o, 10, t, 0.05, 0.0).unwrap();
        prop_assert!(bic_score(loss + bump, o, 10, t, 0.05, 0.0).unwrap() > b0);
        prop_assert!(bic_score(loss, big, 10, t, 0.05, 0.0).unwrap() > b0);
    }

    #[test]
    fn rescaling_hits_target(m in model_strategy(3), target in 0.1..0.95f64) {
        prop_assume!(!m.coefs().is_zero() && m.omega().max_rate() < 1.0);
        let res = rescale_for_stationarity(m.coefs(), m.orders().p, m.omega(), target);
        if let Ok(res) = res {
            let scaled = SpvarModel::new(m.orders(), m.omega().clone(), res.coefs).unwrap();
            let rho_bar = m.omega().max_rate().max(1e-12);
            if rho_bar > 0.0 && rho_bar < 1.0 {
                let chk = spvar::model::stationarity_sufficient(&scaled, rho_bar).unwrap();
                prop_assert!((chk.lhs - target).abs() <= 1e-8);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulation_is_reproducible(seed in 0u64..1_000_000) {
        let m = SpvarModel::new(
            ModelOrders::new(1, 1, 0),
            Omega::new(vec![0.5], vec![]),
            CoefSet::new(vec![DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.2]), DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -0.2])]).unwrap(),
        )
        .unwrap();
        let a = simulate_spvar(&m, 30, 50, 0.2, &mut rng_from_seed(seed), false).unwrap();
        let b = simulate_spvar(&m, 30, 50, 0.2, &mut rng_from_seed(seed), false).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn fits_descend_and_stay_in_box(seed in 0u64..1_000_000, lam in 0.001..0.2f64, re in any::<bool>()) {
        let m = SpvarModel::new(
            ModelOrders::new(1, 1, 0),
            Omega::new(vec![-0.5], vec![]),
            CoefSet::new(vec![DMatrix::from_row_slice(3, 3, &[0.4, 0.0, 0.1, 0.0, 0.3, 0.0, 0.2, 0.0, -0.3]), DMatrix::from_row_slice(3, 3, &[0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0])]).unwrap(),
        )
        .unwrap();
        let y = simulate_spvar(&m, 60, 100, 0.2, &mut rng_from_seed(seed), false).unwrap();
        let mut cfg = FitConfig::new(lam);
        cfg.omega_init = OmegaInit::Explicit(vec![Omega::new(vec![0.3], vec![]), Omega::new(vec![-0.6], vec![])]);
        cfg.record_starts = true;
        let est = if re { Estimator::Re } else { Estimator::Je };
        let res = fit(&y, m.orders(), est, &cfg).unwrap();
        prop_assert!(res.monotone);
        prop_assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
        prop_assert!(res.model.omega().in_box(cfg.epsilon_box));
        if let Some(rows) = &res.per_row_omega {
            prop_assert!(rows.iter().all(|o| o.in_box(cfg.epsilon_box)));
        }
        let total: f64 = res.row_losses.iter().sum();
        prop_assert!((total - res.in_sample_loss).abs() <= 1e-12 * res.in_sample_loss.max(1.0));
        if !re {
            let z = build_predictors(&y, m.orders(), res.model.omega(), false).unwrap();
            let direct = loss_value(&y, &z, res.model.coefs()).unwrap();
            prop_assert!((direct - res.in_sample_loss).abs() <= 1e-12 * direct.max(1.0));
        }
    }
}
