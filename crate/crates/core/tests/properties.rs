mod common;

use aft_core::sim::{generate_cohort, Design, Method};
use aft_core::variance::is_psd;
use aft_core::{
    assign_weights, brute_force_risk_stats, cum_hazard_hat, fit_plan, influence_contributions, risk_stats,
    slope_matrix, solve_gehan, validate_cohort, AlphaSource, Cohort, FitConfig, Influence, RhoKind, Scheme,
    SolveOptions, StudyConfig, Subject, ValidationPolicy, WeightPlan, WeightedCohort,
};
use common::{instance, scalar_instance};
use proptest::prelude::*;

fn sample_points(residuals: &[f64]) -> Vec<f64> {
    let mut pts: Vec<f64> = residuals.to_vec();
    pts.extend(residuals.iter().map(|r| r + 1e-9));
    pts.extend(residuals.iter().map(|r| r - 0.25));
    pts.push(f64::NEG_INFINITY.max(-1e6));
    pts.push(1e6);
    pts.sort_by(f64::total_cmp);
    pts
}

fn residuals(c: &Cohort, theta: &[f64]) -> Vec<f64> {
    c.subjects()
        .iter()
        .map(|s| s.y - s.z.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rho_hat_is_bounded_and_nonincreasing(seed in any::<u64>()) {
        let inst = instance(seed, 60, 3);
        let stats = risk_stats(&inst.cohort, &inst.w, &inst.theta).unwrap();
        let mut last = f64::INFINITY;
        for t in sample_points(&residuals(&inst.cohort, &inst.theta)) {
            let r = stats.rho_hat(t);
            prop_assert!((0.0..=1.0 + 1e-15).contains(&r), "rho {r} at {t}");
            prop_assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn eta_hat_within_at_risk_range(seed in any::<u64>()) {
        let inst = instance(seed, 60, 3);
        let c = &inst.cohort;
        let res = residuals(c, &inst.theta);
        let stats = risk_stats(c, &inst.w, &inst.theta).unwrap();
        for t in sample_points(&res) {
            let at_risk: Vec<usize> = (0..c.len()).filter(|&j| inst.w[j] > 0.0 && res[j] >= t).collect();
            match stats.eta_hat(t) {
                Ok(eta) => {
                    prop_assert!(!at_risk.is_empty());
                    for (k, e) in eta.iter().enumerate() {
                        let lo = at_risk.iter().map(|&j| c.subjects()[j].z[k]).fold(f64::INFINITY, f64::min);
                        let hi = at_risk.iter().map(|&j| c.subjects()[j].z[k]).fold(f64::NEG_INFINITY, f64::max);
                        prop_assert!(*e >= lo - 1e-12 && *e <= hi + 1e-12);
                    }
                }
                Err(_) => prop_assert!(stats.d0_at(t) <= stats.min_risk_weight()),
            }
        }
    }

    #[test]
    fn w_scaling_leaves_eta_and_rho_unchanged(seed in any::<u64>(), c in 0.01f64..100.0) {
        let inst = instance(seed, 40, 2);
        let scaled: Vec<f64> = inst.w.iter().map(|v| v * c).collect();
        let a = risk_stats(&inst.cohort, &inst.w, &inst.theta).unwrap();
        let b = risk_stats(&inst.cohort, &scaled, &inst.theta).unwrap();
        for t in sample_points(&residuals(&inst.cohort, &inst.theta)) {
            prop_assert!((a.rho_hat(t) - b.rho_hat(t)).abs() <= 1e-12);
            if let (Ok(x), Ok(y)) = (a.eta_hat(t), b.eta_hat(t)) {
                for (u, v) in x.iter().zip(&y) {
                    prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
                }
            }
        }
    }

    #[test]
    fn power_of_two_w_scaling_is_exact(seed in any::<u64>(), k in -6i32..6) {
        let inst = instance(seed, 40, 2);
        let c = 2f64.powi(k);
        let scaled: Vec<f64> = inst.w.iter().map(|v| v * c).collect();
        for rho in [RhoKind::Logrank, RhoKind::Gehan] {
            let a = WeightedCohort::new(&inst.cohort, inst.omega.clone(), inst.w.clone()).unwrap();
            let b = WeightedCohort::new(&inst.cohort, inst.omega.clone(), scaled.clone()).unwrap();
            prop_assert_eq!(a.psi(&inst.theta, rho).unwrap().psi, b.psi(&inst.theta, rho).unwrap().psi);
        }
    }

    #[test]
    fn omega_scaling_multiplies_psi(seed in any::<u64>(), c in 0.01f64..100.0) {
        let inst = instance(seed, 40, 2);
        let scaled: Vec<f64> = inst.omega.iter().map(|v| v * c).collect();
        for rho in [RhoKind::Logrank, RhoKind::Gehan] {
            let a = WeightedCohort::new(&inst.cohort, inst.omega.clone(), inst.w.clone()).unwrap();
            let b = WeightedCohort::new(&inst.cohort, scaled.clone(), inst.w.clone()).unwrap();
            let pa = a.psi(&inst.theta, rho).unwrap().psi;
            let pb = b.psi(&inst.theta, rho).unwrap().psi;
            for (x, y) in pa.iter().zip(&pb) {
                prop_assert!((c * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn risk_stats_match_brute_force(seed in any::<u64>()) {
        let inst = instance(seed, 200, 3);
        let stats = risk_stats(&inst.cohort, &inst.w, &inst.theta).unwrap();
        for t in sample_points(&residuals(&inst.cohort, &inst.theta)) {
            let (d0, d1) = brute_force_risk_stats(&inst.cohort, &inst.w, &inst.theta, t).unwrap();
            prop_assert!((stats.d0_at(t) - d0).abs() <= 1e-12);
            for (a, b) in stats.d1_at(t).iter().zip(&d1) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gehan_psi_matches_pairwise_oracle(seed in any::<u64>()) {
        let inst = instance(seed, 200, 3);
        let wc = WeightedCohort::new(&inst.cohort, inst.omega.clone(), inst.w.clone()).unwrap();
        let fast = wc.psi(&inst.theta, RhoKind::Gehan).unwrap().psi;
        let oracle = wc.psi_pairwise_oracle(&inst.theta).unwrap();
        for (a, b) in fast.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn gehan_psi_is_monotone_operator(seed in any::<u64>(), shift in prop::collection::vec(-2.0f64..2.0, 3)) {
        let inst = instance(seed, 60, 3);
        let wc = WeightedCohort::new(&inst.cohort, inst.omega.clone(), inst.w.clone()).unwrap();
        let t1 = inst.theta.clone();
        let t2: Vec<f64> = t1.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let p1 = wc.psi(&t1, RhoKind::Gehan).unwrap().psi;
        let p2 = wc.psi(&t2, RhoKind::Gehan).unwrap().psi;
        let inner: f64 = p1.iter().zip(&p2).zip(t1.iter().zip(&t2)).map(|((a, b), (x, y))| (a - b) * (x - y)).sum();
        prop_assert!(inner >= -1e-10, "{inner}");
    }

    #[test]
    fn scalar_gehan_psi_is_nondecreasing(seed in any::<u64>()) {
        let inst = instance(seed, 60, 1);
        let wc = WeightedCohort::new(&inst.cohort, inst.omega.clone(), inst.w.clone()).unwrap();
        let mut last = f64::NEG_INFINITY;
        for k in -80..=80 {
            let v = wc.psi(&[k as f64 * 0.05], RhoKind::Gehan).unwrap().psi[0];
            prop_assert!(v >= last - 1e-12);
            last = v;
        }
    }

    #[test]
    fn nonpredictable_equals_full_when_everyone_sampled(seed in any::<u64>()) {
        let inst = instance(seed, 60, 2);
        let subjects: Vec<Subject> = inst.cohort.subjects().iter().cloned().map(|s| s.with_pi(1.0).with_stratum(0)).collect();
        let c = Cohort::new(subjects).unwrap();
        let plan = WeightPlan::new(Scheme::CaseCohortNonpredictable, AlphaSource::TruePi);
        let (np, _) = WeightedCohort::from_plan(&c, &plan).unwrap();
        let full = WeightedCohort::unweighted(&c).unwrap();
        for rho in [RhoKind::Logrank, RhoKind::Gehan] {
            prop_assert_eq!(np.psi(&inst.theta, rho).unwrap().psi, full.psi(&inst.theta, rho).unwrap().psi);
        }
    }

    #[test]
    fn influence_identities(seed in any::<u64>()) {
        let inst = instance(seed, 120, 3);
        let wc = WeightedCohort::new(&inst.cohort, inst.omega.clone(), inst.w.clone()).unwrap();
        let hazard = cum_hazard_hat(&wc, &inst.theta);
        prop_assume!(hazard.is_ok());
        let hazard = hazard.unwrap();
        for rho in [RhoKind::Logrank, RhoKind::Gehan] {
            let inf = influence_contributions(&wc, &inst.theta, rho, &hazard).unwrap();
            let psi = wc.psi(&inst.theta, rho).unwrap().psi;
            for v in Influence::mean(&inf.term2) {
                prop_assert!(v.abs() <= 1e-12, "term2 mean {v}");
            }
            for (m, p) in Influence::mean(&inf.contributions).iter().zip(&psi) {
                prop_assert!((m - p).abs() <= 1e-12, "{m} vs {p}");
            }
        }
    }

    #[test]
    fn gehan_loss_slope_matches_psi(seed in any::<u64>()) {
        let inst = instance(seed, 60, 3);
        let wc = WeightedCohort::new(&inst.cohort, inst.omega.clone(), inst.w.clone()).unwrap();
        let psi = wc.psi(&inst.theta, RhoKind::Gehan).unwrap().psi;
        let h = 1e-7;
        for j in 0..wc.dim() {
            let mut up = inst.theta.clone();
            let mut down = inst.theta.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (wc.gehan_loss(&up).unwrap() - wc.gehan_loss(&down).unwrap()) / (2.0 * h);
            let left = wc.psi(&down, RhoKind::Gehan).unwrap().psi;
            let right = wc.psi(&up, RhoKind::Gehan).unwrap().psi;
            // Away from knots Ψ is constant over [θ − h, θ + h].
            if left == psi && right == psi {
                prop_assert!((fd - psi[j]).abs() <= 1e-6, "{fd} vs {}", psi[j]);
            }
        }
    }

    #[test]
    fn weights_are_nonnegative_and_events_keep_unit_weight(seed in any::<u64>(), f in 0.05f64..1.0) {
        let config = StudyConfig { n: 150, subcohort_fraction: f, master_seed: seed, ..StudyConfig::default() };
        let design = Design::new(&config).unwrap();
        let c = generate_cohort(&config, &design, config.n, 0).unwrap();
        for m in Method::ALL {
            let plan = m.plan();
            match assign_weights(&c, &plan) {
                Ok(w) => {
                    prop_assert!(w.w.iter().chain(&w.omega).all(|v| *v >= 0.0 && v.is_finite()));
                    if plan.scheme == Scheme::CaseCohortNonpredictable {
                        for (s, v) in c.subjects().iter().zip(&w.w) {
                            if s.delta {
                                prop_assert_eq!(*v, 1.0);
                            }
                        }
                    }
                    if let Some(est) = &w.alpha {
                        for (k, &stratum) in est.strata.iter().enumerate() {
                            let pool: Vec<&Subject> = c.subjects().iter()
                                .filter(|s| s.stratum == Some(stratum) && (plan.scheme != Scheme::CaseCohortNonpredictable || !s.delta))
                                .collect();
                            let total: f64 = pool.iter().filter(|s| s.in_subcohort).map(|_| 1.0 / est.alpha_hat[k]).sum();
                            prop_assert!((total - pool.len() as f64).abs() <= 1e-9 * pool.len() as f64);
                        }
                    }
                }
                Err(_) => prop_assert!(plan.is_estimated()),
            }
        }
    }

    #[test]
    fn validation_is_deterministic(seed in any::<u64>()) {
        let inst = instance(seed, 60, 2);
        let plan = WeightPlan::full_data();
        let policy = ValidationPolicy::default();
        prop_assert_eq!(validate_cohort(&inst.cohort, &plan, &policy), validate_cohort(&inst.cohort, &plan, &policy));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weight_scaling_leaves_gehan_root_unchanged(seed in any::<u64>(), k in -4i32..4, c in 0.1f64..10.0) {
        let inst = scalar_instance(seed, 80);
        let opts = SolveOptions::default();
        let base = WeightedCohort::unweighted(&inst.cohort).unwrap();
        let Ok(fit) = solve_gehan(&base, &opts) else { return Ok(()) };
        let n = inst.cohort.len();
        let w_scaled = WeightedCohort::new(&inst.cohort, vec![1.0; n], vec![2f64.powi(k); n]).unwrap();
        let o_scaled = WeightedCohort::new(&inst.cohort, vec![c; n], vec![1.0; n]).unwrap();
        for wc in [w_scaled, o_scaled] {
            let other = solve_gehan(&wc, &opts).unwrap();
            prop_assert!((other.theta_hat[0] - fit.theta_hat[0]).abs() <= opts.tol_theta);
        }
        prop_assert_eq!(solve_gehan(&base, &opts).unwrap(), fit);
    }

    #[test]
    fn sandwich_and_correction_are_psd(seed in any::<u64>(), f in 0.2f64..0.8) {
        let config = StudyConfig { n: 400, subcohort_fraction: f, master_seed: seed, ..StudyConfig::default() };
        let design = Design::new(&config).unwrap();
        let c = generate_cohort(&config, &design, config.n, 0).unwrap();
        for m in [Method::PredEst, Method::NonpredEst] {
            for rho in [RhoKind::Gehan, RhoKind::Logrank] {
                let Ok(summary) = fit_plan(&c, &m.plan(), &FitConfig::new(rho), None) else { continue };
                let v = &summary.variance;
                prop_assert!(is_psd(&v.sigma0, 1e-10));
                let star = v.sigma_star.as_ref().expect("estimated plan carries a correction");
                prop_assert!(is_psd(&(&v.sigma0 - star), 1e-10));
                prop_assert!(star[(0, 0)] <= v.sigma0[(0, 0)]);
            }
        }
    }

    #[test]
    fn slope_is_deterministic(seed in any::<u64>()) {
        let inst = instance(seed, 80, 2);
        let wc = WeightedCohort::new(&inst.cohort, inst.omega.clone(), inst.w.clone()).unwrap();
        if let Ok(a) = slope_matrix(&wc, &inst.theta, RhoKind::Gehan, 1.0) {
            let b = slope_matrix(&wc, &inst.theta, RhoKind::Gehan, 1.0).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn inverse_probability_weights_average_to_one() {
    use rand::{Rng, SeedableRng};
    let config = StudyConfig { n: 40, subcohort_fraction: 0.3, ..StudyConfig::default() };
    let design = Design::new(&config).unwrap();
    let base = generate_cohort(&config, &design, config.n, 0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let draws = 10_000;
    for scheme in [Scheme::CaseCohortPredictable, Scheme::CaseCohortNonpredictable] {
        let plan = WeightPlan::new(scheme, AlphaSource::TruePi);
        let mut sums = vec![0.0; base.len()];
        let mut squares = vec![0.0; base.len()];
        for _ in 0..draws {
            let subjects: Vec<Subject> = base
                .subjects()
                .iter()
                .map(|s| {
                    let pi = s.pi.unwrap();
                    s.clone().with_subcohort(rng.random::<f64>() < pi)
                })
                .collect();
            let c = Cohort::new(subjects).unwrap();
            let w = assign_weights(&c, &plan).unwrap().w;
            for (k, v) in w.iter().enumerate() {
                sums[k] += v;
                squares[k] += v * v;
            }
        }
        for k in 0..base.len() {
            let mean = sums[k] / draws as f64;
            let sd = (squares[k] / draws as f64 - mean * mean).max(0.0).sqrt();
            let se = sd / (draws as f64).sqrt();
            assert!((mean - 1.0).abs() <= 3.0 * se + 1e-12, "{scheme:?} subject {k}: {mean} ± {se}");
        }
    }
}

#[test]
fn estimator_concentrates_as_cohort_grows() {
    let config = StudyConfig { subcohort_fraction: 1.0, ..StudyConfig::default() };
    let design = Design::new(&config).unwrap();
    let opts = SolveOptions::default();
    let median_error = |n: usize| {
        let mut errors: Vec<f64> = (0..200u64)
            .map(|rep| {
                let c = generate_cohort(&config, &design, n, rep).unwrap();
                let wc = WeightedCohort::unweighted(&c).unwrap();
                (solve_gehan(&wc, &opts).unwrap().theta_hat[0] - config.theta0).abs()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        0.5 * (errors[99] + errors[100])
    };
    let (small, large) = (median_error(1000), median_error(4000));
    assert!(large < small, "median error {large} at n = 4000 vs {small} at n = 1000");
}
