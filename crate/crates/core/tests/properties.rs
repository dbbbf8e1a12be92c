use dyndp::accountant::{compose_clt, delta_of, mu_of};
use dyndp::diagnostics::{clip_fraction_sweep, d1_term};
use dyndp::mech::l2_norm;
use dyndp::model::per_sample_grads;
use dyndp::rdp::audit_plan;
use dyndp::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_stays_a_probability(eps in 0.0..50.0f64, mu in 1e-6..40.0f64) {
        let d = delta_of(eps, mu).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn profile_round_trips(eps in 0.1..9.0f64, log_delta in -7.0..-3.0f64) {
        let delta = 10f64.powf(log_delta);
        let mu = mu_of(PrivacyBudget::new(eps, delta).unwrap()).unwrap().value();
        let back = delta_of(eps, mu).unwrap();
        prop_assert!((back - delta).abs() <= 1e-10 * delta);
        let mu_back = mu_of(PrivacyBudget::new(eps, back).unwrap()).unwrap().value();
        prop_assert!((mu_back - mu).abs() <= 1e-10 * mu);
    }

    #[test]
    fn composition_ignores_order(mut mus in prop::collection::vec(0.01..3.0f64, 1..60), p in 1e-3..1.0f64, rot in 0usize..60) {
        let a = compose_clt(&mus, p).unwrap();
        let k = rot % mus.len();
        mus.rotate_left(k);
        mus.reverse();
        let b = compose_clt(&mus, p).unwrap();
        prop_assert!((a - b).abs() <= 1e-13 * a);
    }

    #[test]
    fn built_plans_satisfy_invariants(
        eps in 0.2..5.0f64,
        log_delta in -7.0..-3.0f64,
        steps in 200usize..3000,
        log_p in -3.0..-1.0f64,
        rho_mu in 1.0..4.0f64,
        rho_c in 1.0..4.0f64,
        c0 in 0.1..10.0f64,
    ) {
        let budget = PrivacyBudget::new(eps, 10f64.powf(log_delta)).unwrap();
        let hyper = ScheduleHyperparams { steps, sampling_rate: 10f64.powf(log_p), rho_mu, rho_c, c0 };
        let plan = build_plan(budget, hyper).unwrap();
        prop_assert!(plan.check().is_ok());
        let curve = plan.consumption_curve().unwrap();
        prop_assert!((curve[steps - 1] - eps).abs() <= 1e-6);
        prop_assert!(curve.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn gradients_match_finite_differences(
        kind in 0usize..3,
        x in prop::collection::vec(-2.0..2.0f64, 4),
        seed in 0u64..1000,
        y_pick in 0usize..16,
    ) {
        let model = match kind {
            0 => Model::new(ModelKind::LogisticRegression, 4, 2).unwrap(),
            1 => Model::new(ModelKind::LogisticRegression, 4, 3).unwrap(),
            _ => Model::new(ModelKind::Mlp1Hidden { hidden: 5 }, 4, 3).unwrap(),
        };
        let y = y_pick % model.num_classes;
        // deterministic pseudo-random parameters in [-1, 1)
        let theta: Vec<f64> = (0..model.num_params())
            .map(|i| (((seed * 7919 + i as u64 * 104_729) % 2000) as f64 / 1000.0) - 1.0)
            .collect();
        let data = Dataset::new(x.clone(), vec![y], 4, model.num_classes, Split::Train).unwrap();
        let (batch, _) = per_sample_grads(&model, &theta, &data, &[0]).unwrap();
        let g = batch.rows().next().unwrap().to_vec();
        let h = 1e-5;
        let mut th = theta.clone();
        let mut err2 = 0.0;
        for i in 0..theta.len() {
            th[i] = theta[i] + h;
            let up = model.loss_and_grad(&th, &x, y, None);
            th[i] = theta[i] - h;
            let down = model.loss_and_grad(&th, &x, y, None);
            th[i] = theta[i];
            err2 += ((up - down) / (2.0 * h) - g[i]).powi(2);
        }
        prop_assert!(err2.sqrt() <= 1e-6 * l2_norm(&g));
    }

    #[test]
    fn per_sample_gradients_respect_bound(
        kind in 0usize..3,
        x in prop::collection::vec(-3.0..3.0f64, 4),
        theta_scale in 0.0..3.0f64,
        y_pick in 0usize..16,
    ) {
        let model = match kind {
            0 => Model::new(ModelKind::LogisticRegression, 4, 2).unwrap(),
            1 => Model::new(ModelKind::LogisticRegression, 4, 5).unwrap(),
            _ => Model::new(ModelKind::Mlp1Hidden { hidden: 7 }, 4, 3).unwrap(),
        };
        let y = y_pick % model.num_classes;
        let theta: Vec<f64> = (0..model.num_params())
            .map(|i| theta_scale * ((i as f64 * 0.37).sin()))
            .collect();
        let mut g = vec![0.0; model.num_params()];
        model.loss_and_grad(&theta, &x, y, Some(&mut g));
        prop_assert!(l2_norm(&g) <= model.gradient_bound(&theta, l2_norm(&x)) * (1.0 + 1e-12));
    }

    #[test]
    fn d1_is_invariant_to_shape_scaling(
        c in prop::collection::vec(0.05..20.0f64, 1..40),
        lambda in 1e-3..1e3f64,
    ) {
        let shape: Vec<f64> = c.iter().map(|v| 1.0 + v.sin().abs()).collect();
        let scaled: Vec<f64> = shape.iter().map(|s| s * lambda).collect();
        let a = d1_term(&c, &shape, 0.01, 1.0, c.len()).unwrap();
        let b = d1_term(&c, &scaled, 0.01, 1.0, c.len()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }
}

#[test]
fn delta_is_monotone_on_grid() {
    // μ ≥ 0.5 keeps δ above the f64 underflow threshold for ε ≤ 9
    let eps: Vec<f64> = (0..20).map(|i| 0.1 + 0.45 * i as f64).collect();
    let mus: Vec<f64> = (0..20).map(|j| 0.5 + 0.25 * j as f64).collect();
    for &e in &eps {
        for w in mus.windows(2) {
            assert!(delta_of(e, w[1]).unwrap() > delta_of(e, w[0]).unwrap());
        }
    }
    for &m in &mus {
        for w in eps.windows(2) {
            assert!(delta_of(w[1], m).unwrap() < delta_of(w[0], m).unwrap());
        }
    }
}

#[test]
fn mu0_matches_exhaustive_scan() {
    // The defining equation is monotone in μ₀, so the root lies between the
    // last grid point below the target and the first one above it.
    let (mu_tot, p, steps, rho) = (1.0f64, 1.0 / 240.0, 5000usize, 2.0f64);
    let rhs = |mu0: f64| {
        let s: f64 = (1..=steps)
            .map(|t| {
                let m = rho.powf(t as f64 / steps as f64) * mu0;
                (m * m).exp_m1()
            })
            .sum();
        p * p * s
    };
    let (lo, hi) = (0.99, 1.0);
    assert!(rhs(lo) < mu_tot * mu_tot && rhs(hi) > mu_tot * mu_tot);
    let grid_step = 1e-6;
    let first_above = (0..=10_000)
        .map(|k| lo + k as f64 * grid_step)
        .find(|&g| rhs(g) >= mu_tot * mu_tot)
        .unwrap();
    let mu0 = dyndp::planner::solve_mu0(GdpLevel::new(mu_tot).unwrap(), p, steps, rho).unwrap();
    assert!(mu0 <= first_above && mu0 >= first_above - grid_step, "{mu0} vs {first_above}");
}

#[test]
fn flat_audit_is_nondecreasing() {
    let plan = build_plan(
        PrivacyBudget::new(1.0, 1e-5).unwrap(),
        ScheduleHyperparams {
            steps: 1000,
            sampling_rate: 0.01,
            rho_mu: 1.0,
            rho_c: 1.0,
            c0: 1.0,
        },
    )
    .unwrap();
    let curve = audit_plan(&plan, 1e-5).unwrap();
    assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
}

#[test]
fn clip_fraction_is_nonincreasing_in_threshold() {
    let data = gen_synthetic(300, 5, 1.0, 4).unwrap();
    let model = Model::new(ModelKind::Mlp1Hidden { hidden: 6 }, 5, 2).unwrap();
    let theta = model.init_params(4);
    let thresholds: Vec<f64> = (0..60).map(|i| 0.01 * 1.15f64.powi(i)).collect();
    let fractions = clip_fraction_sweep(&model, &theta, &data, &thresholds).unwrap();
    assert!(fractions.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(fractions[0], 1.0);
    let g = model.gradient_bound(&theta, data.max_feature_norm());
    assert_eq!(clip_fraction_sweep(&model, &theta, &data, &[g]).unwrap(), vec![0.0]);
}
