use nalgebra::DMatrix;
use proptest::prelude::*;

use hdmt::kme::{gram, Kernel};
use hdmt::model::{CovMatrix, Mode, QuantileKind, QuantilePair, QuantileSource, Sample, Setting, TestConfig};
use hdmt::parallel::Execution;
use hdmt::quantiles::{q_gaussian_oracle, q_plugin, u_level, CovSummary};
use hdmt::simulate::{mc_error_rates_with, McOptions, Population, Scenario};
use hdmt::statistics::{
    empirical_covariance, trace_sq_hat, trace_sq_hat_fast, trace_sq_hat_naive, u_stat_from_gram, u_stat_one_sample,
    u_stat_two_sample, OpNormOptions,
};
use hdmt::testing::{decide, separation_bounds};

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + scale)
}

fn sample(max_n: usize, d: usize) -> impl Strategy<Value = Sample> {
    (4..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-5.0..5.0f64, n * d).prop_map(move |v| Sample::new(v, n, d).unwrap())
    })
}

fn shift(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, d)
}

/// Orthogonal matrix from the QR factor of a random square matrix.
fn rotation(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, d * d)
        .prop_filter("well conditioned", move |v| {
            DMatrix::from_vec(d, d, v.clone()).determinant().abs() > 1e-3
        })
        .prop_map(move |v| DMatrix::from_vec(d, d, v).qr().q())
}

fn rotate(x: &Sample, q: &DMatrix<f64>) -> Sample {
    x.map_rows(|r| (q * nalgebra::DVector::from_column_slice(r)).iter().copied().collect())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn two_sample_u_is_translation_invariant(x in sample(10, 3), y in sample(10, 3), t in shift(3)) {
        let a = u_stat_two_sample(&x, &y).unwrap();
        let b = u_stat_two_sample(&x.translated(&t).unwrap(), &y.translated(&t).unwrap()).unwrap();
        prop_assert!(close(a, b, 100.0), "{a} vs {b}");
    }

    #[test]
    fn trace_estimator_is_translation_invariant(x in sample(16, 3), t in shift(3)) {
        let a = trace_sq_hat(&x).unwrap();
        let b = trace_sq_hat(&x.translated(&t).unwrap()).unwrap();
        prop_assert!(close(a, b, a.abs() * 1e3), "{a} vs {b}");
    }

    #[test]
    fn statistics_are_rotation_invariant(x in sample(14, 4), y in sample(14, 4), q in rotation(4)) {
        let (xr, yr) = (rotate(&x, &q), rotate(&y, &q));
        let pairs = [
            (u_stat_one_sample(&x).unwrap(), u_stat_one_sample(&xr).unwrap()),
            (u_stat_two_sample(&x, &y).unwrap(), u_stat_two_sample(&xr, &yr).unwrap()),
            (trace_sq_hat(&x).unwrap(), trace_sq_hat(&xr).unwrap()),
        ];
        for (a, b) in pairs {
            prop_assert!(close(a, b, a.abs() * 10.0), "{a} vs {b}");
        }
    }

    #[test]
    fn statistics_scale_homogeneously(x in sample(12, 2), c in 0.1..10.0f64) {
        let xs = x.map_rows(|r| r.iter().map(|v| c * v).collect()).unwrap();
        let u = u_stat_one_sample(&x).unwrap();
        prop_assert!(close(u_stat_one_sample(&xs).unwrap(), c * c * u, (c * c * u).abs() * 10.0));
        let t = trace_sq_hat(&x).unwrap();
        let c4 = c.powi(4);
        prop_assert!(close(trace_sq_hat(&xs).unwrap(), c4 * t, (c4 * t).abs() * 10.0));
    }

    #[test]
    fn fast_trace_matches_enumeration(x in sample(9, 3)) {
        let naive = trace_sq_hat_naive(&x).unwrap();
        let fast = trace_sq_hat_fast(&x).unwrap();
        prop_assert!((fast - naive).abs() <= 1e-10 * (1.0 + naive.abs()));
    }

    #[test]
    fn empirical_covariance_is_psd(x in sample(20, 3)) {
        let c = empirical_covariance(&x);
        prop_assert!(c.check_psd().is_ok());
        prop_assert!(c.trace() >= 0.0);
    }

    #[test]
    fn rows_permute_without_changing_estimates(x in sample(14, 3), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..x.n()).collect();
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let xp = x.select_rows(&idx).unwrap();
        let a = q_plugin(&x, None, &Setting::Gaussian, 0.05, &OpNormOptions::default()).unwrap();
        let b = q_plugin(&xp, None, &Setting::Gaussian, 0.05, &OpNormOptions::default()).unwrap();
        prop_assert!(close(a.pair.q1(), b.pair.q1(), a.pair.q1()));
        prop_assert!(close(a.pair.q2(), b.pair.q2(), a.pair.q2()));
        prop_assert!(close(u_stat_one_sample(&x).unwrap(), u_stat_one_sample(&xp).unwrap(), 100.0));
    }

    #[test]
    fn rejection_is_monotone_in_u(u in -5.0..5.0f64, bump in 0.0..5.0f64, eta in 0.0..2.0f64,
                                  q1 in 0.0..1.0f64, q2 in 0.0..1.0f64) {
        let q = QuantilePair::new(q1, q2, QuantileKind::Oracle, 1.0).unwrap();
        if decide(u, eta, &q).reject {
            prop_assert!(decide(u + bump, eta, &q).reject);
        }
    }

    #[test]
    fn quantiles_shrink_as_alpha_grows(op in 0.1..5.0f64, extra in 0.0..5.0f64, n in 5usize..2000,
                                       a1 in 0.01..0.5f64, a2 in 0.01..0.5f64) {
        let s = CovSummary::new(op, op + extra, op * op + extra * op, n).unwrap();
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let ql = q_gaussian_oracle(&s, None, lo).unwrap();
        let qh = q_gaussian_oracle(&s, None, hi).unwrap();
        prop_assert!(qh.q1() <= ql.q1() && qh.q2() <= ql.q2());
        prop_assert!(u_level(hi, &Setting::Gaussian).unwrap() <= u_level(lo, &Setting::Gaussian).unwrap());
    }

    #[test]
    fn separation_scales_with_noise(diag in prop::collection::vec(0.05..3.0f64, 3..12), c in 0.1..10.0f64,
                                    n in 10usize..1000, eta in 0.0..1.0f64) {
        let opts = OpNormOptions::default();
        let cov = CovMatrix::diagonal(&diag);
        let a = separation_bounds(&cov, n, None, 0.05, eta, &opts).unwrap();
        let b = separation_bounds(&cov.scaled(c * c), n, None, 0.05, c * eta, &opts).unwrap();
        prop_assert!(close(b.delta_upper, c * a.delta_upper, c * a.delta_upper));
        prop_assert!(close(b.delta_guaranteed, c * a.delta_guaranteed, c * a.delta_guaranteed));
        match (a.delta_lower, b.delta_lower) {
            (Some(l1), Some(l2)) => prop_assert!(close(l2, c * l1, c * l1)),
            (None, None) => {}
            other => prop_assert!(false, "lower bound presence changed: {other:?}"),
        }
    }

    #[test]
    fn linear_gram_reproduces_raw_statistic(x in sample(10, 3), y in sample(10, 3)) {
        let g = gram(&x, Some(&y), &Kernel::Linear).unwrap();
        let a = u_stat_from_gram(&g).unwrap();
        let b = u_stat_two_sample(&x, &y).unwrap();
        prop_assert!(close(a, b, 100.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn monte_carlo_is_schedule_independent(seed in any::<u64>(), mean in 0.0..1.0f64) {
        let d = 3;
        let sc = Scenario::one_sample(
            Population::gaussian(vec![mean, 0.0, 0.0], DMatrix::identity(d, d)).unwrap(),
            40,
        )
        .unwrap();
        let cfg = TestConfig::new(0.0, 0.05, Setting::Gaussian, Mode::OneSample, QuantileSource::PlugIn).unwrap();
        let seq = McOptions { exec: Execution::Sequential, ..McOptions::default() };
        let par = McOptions { exec: Execution::Parallel, ..McOptions::default() };
        let a = mc_error_rates_with(&cfg, &sc, 50, seed, &seq).unwrap();
        let b = mc_error_rates_with(&cfg, &sc, 50, seed, &par).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bounded_draws_stay_within_the_bound(seed in any::<u64>(), r in 0.0..1.0f64,
                                           c in prop::collection::vec(-0.5..0.5f64, 1..6)) {
        let pop = Population::sphere(c.clone(), r).unwrap();
        let limit = pop.norm_bound();
        let x = pop.draw(200, &mut hdmt::simulate::trial_rng(seed, 0)).unwrap();
        for row in x.rows() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= limit * (1.0 + 1e-12) + 1e-15);
        }
    }
}
