//! The decision rule, effective dimensions and closed-form separation bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_alpha, check_eta, validate_sample, CovMatrix, Mode, QuantilePair, QuantileSource, Sample, SeparationBounds,
    TestConfig, TestReport,
};
use crate::quantiles::{q_gaussian_oracle, q_oracle, q_plugin, CovSummary};
use crate::statistics::{op_norm, u_stat_one_sample, u_stat_two_sample, OpNormOptions};

/// Threshold and verdict of one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub threshold: f64,
    pub reject: bool,
}

/// Rejects iff `U − η² > 2η·q1 + 2·q2`. Equality accepts.
pub fn decide(u_stat: f64, eta: f64, q: &QuantilePair) -> Decision {
    let threshold = 2.0 * eta * q.q1() + 2.0 * q.q2();
    Decision {
        threshold,
        reject: u_stat - eta * eta > threshold,
    }
}

pub(crate) fn report(
    u_stat: f64,
    eta: f64,
    q: &QuantilePair,
    d_e: Option<f64>,
    d_star: Option<f64>,
    warnings: Vec<String>,
) -> TestReport {
    let Decision { threshold, reject } = decide(u_stat, eta, q);
    TestReport {
        u_stat,
        threshold,
        reject,
        q1_used: q.q1(),
        q2_used: q.q2(),
        d_e_hat: d_e,
        d_star_hat: d_star,
        warnings,
    }
}

/// Runs the test on raw data.
pub fn run_test(cfg: &TestConfig, x: &Sample, y: Option<&Sample>) -> Result<TestReport> {
    run_test_with(cfg, x, y, &OpNormOptions::default())
}

pub fn run_test_with(cfg: &TestConfig, x: &Sample, y: Option<&Sample>, opts: &OpNormOptions) -> Result<TestReport> {
    let y = match (cfg.mode(), y) {
        (Mode::OneSample, None) => None,
        (Mode::TwoSample, Some(y)) => {
            y.check_width(x.d())?;
            Some(y)
        }
        (Mode::OneSample, Some(_)) => return Err(Error::Config("one-sample mode takes a single sample".into())),
        (Mode::TwoSample, None) => return Err(Error::Config("two-sample mode needs a second sample".into())),
    };
    let setting = cfg.setting();
    let mut warnings = validate_sample(x, &setting);
    if let Some(y) = y {
        warnings.extend(
            validate_sample(y, &setting)
                .into_iter()
                .map(|w| format!("sample y: {w}")),
        );
    }
    let u_stat = match y {
        Some(y) => u_stat_two_sample(x, y)?,
        None => u_stat_one_sample(x)?,
    };
    match cfg.quantile_source() {
        QuantileSource::PlugIn => {
            let p = q_plugin(x, y, &setting, cfg.alpha(), opts)?;
            warnings.extend(p.warnings.iter().cloned());
            Ok(report(
                u_stat,
                cfg.eta(),
                &p.pair,
                p.d_e_hat(),
                p.d_star_hat(),
                warnings,
            ))
        }
        QuantileSource::Oracle { sigma, s } => {
            if sigma.dim() != x.d() {
                return Err(Error::DimensionMismatch(format!(
                    "oracle covariance is {0}x{0} but data has dimension {1}",
                    sigma.dim(),
                    x.d()
                )));
            }
            let sx = CovSummary::from_cov(sigma, x.n(), opts)?;
            let sy = match (y, s) {
                (Some(y), Some(s)) => Some(CovSummary::from_cov(s, y.n(), opts)?),
                _ => None,
            };
            let q = q_oracle(&setting, &sx, sy.as_ref(), cfg.alpha())?;
            let dims = match (y, s) {
                (Some(y), Some(s)) => {
                    effective_dims(&CovInput::Full(sigma, x.n()), Some(&CovInput::Full(s, y.n())), opts)
                }
                _ => effective_dims(&CovInput::Summary(sx), None, opts),
            };
            let (d_e, d_star) = match dims {
                Ok(d) => (Some(d.d_e), Some(d.d_star)),
                Err(Error::ZeroCovariance) => (None, None),
                Err(e) => return Err(e),
            };
            Ok(report(u_stat, cfg.eta(), &q, d_e, d_star, warnings))
        }
    }
}

/// Smallest `α` on `grid` at which the test rejects, recomputing the
/// quantiles for each level. `None` if it rejects nowhere on the grid.
pub fn smallest_rejecting_alpha(cfg: &TestConfig, x: &Sample, y: Option<&Sample>, grid: &[f64]) -> Result<Option<f64>> {
    let mut levels = grid.to_vec();
    levels.sort_by(f64::total_cmp);
    for alpha in levels {
        if run_test(&cfg.with_alpha(alpha)?, x, y)?.reject {
            return Ok(Some(alpha));
        }
    }
    Ok(None)
}

/// Dimension proxies governing the separation rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDims {
    /// `Tr Σ / ‖Σ‖_op` (two-sample: of `M = Σ/n + S/m`).
    pub d_e: f64,
    /// `Tr Σ² / ‖Σ‖_op²` (two-sample: `Tr M² / ‖M‖_op²`).
    pub d_star: f64,
    /// `σ² = ‖Σ‖_op / n` (two-sample: `‖M‖_op`).
    pub sigma_sq: f64,
    pub mode: Mode,
}

impl EffectiveDims {
    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }
}

/// Covariance information for [`effective_dims`].
#[derive(Debug, Clone, Copy)]
pub enum CovInput<'a> {
    Summary(CovSummary),
    /// Full matrix and the sample size it applies to.
    Full(&'a CovMatrix, usize),
}

/// One-sample dims from a summary or matrix; two-sample dims need both full
/// matrices since `Tr M²` involves `Tr(ΣS)`.
pub fn effective_dims(sx: &CovInput<'_>, sy: Option<&CovInput<'_>>, opts: &OpNormOptions) -> Result<EffectiveDims> {
    match sy {
        None => {
            let s = match *sx {
                CovInput::Summary(s) => s,
                CovInput::Full(c, n) => CovSummary::from_cov(c, n, opts)?,
            };
            if s.op_norm() <= 0.0 {
                return Err(Error::ZeroCovariance);
            }
            Ok(EffectiveDims {
                d_e: s.trace() / s.op_norm(),
                d_star: s.trace_sq() / (s.op_norm() * s.op_norm()),
                sigma_sq: s.op_norm() / s.n() as f64,
                mode: Mode::OneSample,
            })
        }
        Some(sy) => {
            let (CovInput::Full(a, n), CovInput::Full(b, m)) = (*sx, *sy) else {
                return Err(Error::Config(
                    "two-sample effective dimensions need full covariance matrices".into(),
                ));
            };
            if a.dim() != b.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "covariances are {0}x{0} and {1}x{1}",
                    a.dim(),
                    b.dim()
                )));
            }
            let mm = a.matrix() / n as f64 + b.matrix() / m as f64;
            let mcov = CovMatrix::new((&mm + mm.transpose()) * 0.5)?;
            let op = op_norm(&mcov, opts)?;
            if op <= 0.0 {
                return Err(Error::ZeroCovariance);
            }
            Ok(EffectiveDims {
                d_e: mcov.trace() / op,
                d_star: mcov.trace_sq() / (op * op),
                sigma_sq: op,
                mode: Mode::TwoSample,
            })
        }
    }
}

/// `2q1 + min(2√q2, 2q2/η)`; the second branch is `+∞` at `η = 0`.
pub fn separation_guaranteed(q: &QuantilePair, eta: f64) -> f64 {
    let root = 2.0 * q.q2().sqrt();
    let linear = if eta > 0.0 { 2.0 * q.q2() / eta } else { f64::INFINITY };
    2.0 * q.q1() + root.min(linear)
}

/// `max(1, min(d_*^{1/4}, √(d_* v)·σ/η))`, with the second entry `+∞` at `η = 0`.
fn rate_factor(d_star: f64, v: f64, sigma: f64, eta: f64) -> f64 {
    let quartic = d_star.powf(0.25);
    let linear = if eta > 0.0 {
        (d_star * v).sqrt() * sigma / eta
    } else {
        f64::INFINITY
    };
    quartic.min(linear).max(1.0)
}

/// Deviation level of the upper separation bound: `−ln α + ln 60`.
pub fn separation_u(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(60f64.ln() - alpha.ln())
}

/// Upper bound on the minimum separation, with the unspecified numerical
/// constant set to 1. Same form in both modes; `dims` carries the mode.
pub fn separation_upper(dims: &EffectiveDims, alpha: f64, eta: f64) -> Result<f64> {
    let u = separation_u(alpha)?;
    check_eta(eta)?;
    let sigma = dims.sigma();
    Ok(sigma * u.sqrt() * rate_factor(dims.d_star, u, sigma, eta))
}

/// Lower bound on the minimum separation (Gaussian setting). Absent unless
/// `d_* ≥ 3`. The two-sample divisor is 48 instead of 12.
pub fn separation_lower(dims: &EffectiveDims, alpha: f64, eta: f64) -> Result<Option<f64>> {
    check_alpha(alpha)?;
    check_eta(eta)?;
    if dims.d_star < 3.0 {
        return Ok(None);
    }
    let divisor = match dims.mode {
        Mode::OneSample => 12.0,
        Mode::TwoSample => 48.0,
    };
    let sigma = dims.sigma();
    let v = 1.0 - alpha;
    Ok(Some(
        sigma * (v / divisor).sqrt() * rate_factor(dims.d_star, v, sigma, eta),
    ))
}

/// All closed-form separation quantities for a Gaussian configuration.
/// `s = Some((S, m))` selects the two-sample problem.
pub fn separation_bounds(
    sigma: &CovMatrix,
    n: usize,
    s: Option<(&CovMatrix, usize)>,
    alpha: f64,
    eta: f64,
    opts: &OpNormOptions,
) -> Result<SeparationBounds> {
    let sx = CovSummary::from_cov(sigma, n, opts)?;
    let sy = s.map(|(c, m)| CovSummary::from_cov(c, m, opts)).transpose()?;
    let dims = match s {
        Some((c, m)) => effective_dims(&CovInput::Full(sigma, n), Some(&CovInput::Full(c, m)), opts)?,
        None => effective_dims(&CovInput::Summary(sx), None, opts)?,
    };
    let q = q_gaussian_oracle(&sx, sy.as_ref(), alpha)?;
    Ok(SeparationBounds {
        delta_upper: separation_upper(&dims, alpha, eta)?,
        delta_lower: separation_lower(&dims, alpha, eta)?,
        delta_guaranteed: separation_guaranteed(&q, eta),
        sigma: dims.sigma(),
        d_star: dims.d_star,
        d_e: dims.d_e,
        upper_modulo_constant: true,
    })
}

/// Oracle quantiles for a configuration whose source is `Oracle`, at the
/// given sample sizes. Used by the harness to place alternatives.
pub fn oracle_quantiles(cfg: &TestConfig, n: usize, m: Option<usize>, opts: &OpNormOptions) -> Result<QuantilePair> {
    let QuantileSource::Oracle { sigma, s } = cfg.quantile_source() else {
        return Err(Error::Config("oracle quantiles need known covariances".into()));
    };
    let sx = CovSummary::from_cov(sigma, n, opts)?;
    let sy = match (s, m) {
        (Some(s), Some(m)) if cfg.mode() == Mode::TwoSample => Some(CovSummary::from_cov(s, m, opts)?),
        _ => None,
    };
    q_oracle(&cfg.setting(), &sx, sy.as_ref(), cfg.alpha())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QuantileKind, Setting};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(q1: f64, q2: f64) -> QuantilePair {
        QuantilePair::new(q1, q2, QuantileKind::Oracle, 1.0).unwrap()
    }

    fn one_dims(c: &CovMatrix, n: usize) -> EffectiveDims {
        let opts = OpNormOptions::default();
        effective_dims(&CovInput::Full(c, n), None, &opts).unwrap()
    }

    #[test]
    fn decide_examples() {
        let d = decide(1.0, 0.0, &pair(0.0, 0.4));
        assert_relative_eq!(d.threshold, 0.8);
        assert!(d.reject);
        assert!(!decide(0.5, 0.0, &pair(0.0, 0.4)).reject);
        let d = decide(1.2, 1.0, &pair(0.1, 0.05));
        assert_relative_eq!(d.threshold, 0.3, max_relative = 1e-15);
        assert!(!d.reject);
        // exact tie accepts
        assert!(!decide(0.5, 0.0, &pair(0.0, 0.25)).reject);
    }

    #[test]
    fn decide_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let (u, eta) = (rng.random_range(-2.0..4.0), rng.random_range(0.0..1.5));
            let (q1, q2) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let base = decide(u, eta, &pair(q1, q2)).reject;
            if base {
                assert!(decide(u + rng.random_range(0.0..1.0), eta, &pair(q1, q2)).reject);
            } else {
                assert!(!decide(u, eta, &pair(q1 + rng.random_range(0.0..1.0), q2)).reject);
                assert!(!decide(u, eta, &pair(q1, q2 + rng.random_range(0.0..1.0))).reject);
            }
        }
    }

    #[test]
    fn effective_dims_examples() {
        let d = one_dims(&CovMatrix::identity(9), 10);
        assert_relative_eq!(d.d_e, 9.0, max_relative = 1e-12);
        assert_relative_eq!(d.d_star, 9.0, max_relative = 1e-12);
        let d = one_dims(&CovMatrix::diagonal(&[4.0, 1.0, 1.0]), 100);
        assert_relative_eq!(d.d_e, 1.5, max_relative = 1e-10);
        assert_relative_eq!(d.d_star, 1.125, max_relative = 1e-10);
        assert_relative_eq!(d.sigma_sq, 0.04, max_relative = 1e-10);

        let opts = OpNormOptions::default();
        let i5 = CovMatrix::identity(5);
        let d = effective_dims(&CovInput::Full(&i5, 40), Some(&CovInput::Full(&i5, 40)), &opts).unwrap();
        assert_relative_eq!(d.d_star, 5.0, max_relative = 1e-12);
        assert_relative_eq!(d.sigma_sq, 2.0 / 40.0, max_relative = 1e-12);
    }

    #[test]
    fn effective_dims_errors() {
        let opts = OpNormOptions::default();
        let zero = CovMatrix::scaled_identity(3, 0.0);
        assert_eq!(
            effective_dims(&CovInput::Full(&zero, 10), None, &opts).unwrap_err(),
            Error::ZeroCovariance
        );
        let s = CovSummary::new(1.0, 3.0, 3.0, 10).unwrap();
        assert!(matches!(
            effective_dims(&CovInput::Summary(s), Some(&CovInput::Summary(s)), &opts),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn effective_dims_scale_invariant_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..200 {
            let d = rng.random_range(1..8);
            let f = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let c = CovMatrix::from_factor(&f);
            let dims = one_dims(&c, 50);
            let tol = 1e-8;
            assert!(1.0 - tol <= dims.d_star && dims.d_star <= dims.d_e * (1.0 + tol));
            assert!(dims.d_e <= d as f64 * (1.0 + tol));
            let scaled = one_dims(&c.scaled(6.25), 50);
            assert_relative_eq!(scaled.d_e, dims.d_e, max_relative = 1e-8);
            assert_relative_eq!(scaled.d_star, dims.d_star, max_relative = 1e-8);
            assert_relative_eq!(scaled.sigma_sq, 6.25 * dims.sigma_sq, max_relative = 1e-8);
        }
    }

    #[test]
    fn guaranteed_separation_examples() {
        let q = q_gaussian_oracle(&CovSummary::new(1.0, 50.0, 50.0, 100).unwrap(), None, 0.05).unwrap();
        assert_relative_eq!(separation_guaranteed(&q, 0.0), 7.414745575669904, max_relative = 1e-13);
        assert_eq!(separation_guaranteed(&pair(0.0, 0.0), 0.0), 0.0);
        assert_relative_eq!(separation_guaranteed(&pair(0.3, 2.0), 1e12), 0.6, max_relative = 1e-9);
    }

    #[test]
    fn upper_bound_examples() {
        let d = one_dims(&CovMatrix::diagonal(&[4.0, 1.0, 1.0]), 100);
        assert_relative_eq!(
            separation_upper(&d, 0.05, 0.0).unwrap(),
            0.5484582797101855,
            max_relative = 1e-9
        );

        let iso = one_dims(&CovMatrix::identity(16), 100);
        let u = separation_u(0.05).unwrap();
        assert_relative_eq!(
            separation_upper(&iso, 0.05, 0.0).unwrap(),
            0.1 * u.sqrt() * 2.0,
            max_relative = 1e-12
        );

        let flat = EffectiveDims {
            d_e: 1.0,
            d_star: 1.0,
            sigma_sq: 0.09,
            mode: Mode::OneSample,
        };
        assert_relative_eq!(
            separation_upper(&flat, 0.05, 0.3).unwrap(),
            0.3 * u.sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn lower_bound_examples() {
        let two = EffectiveDims {
            d_e: 2.0,
            d_star: 2.0,
            sigma_sq: 0.01,
            mode: Mode::OneSample,
        };
        assert_eq!(separation_lower(&two, 0.05, 0.0).unwrap(), None);
        let iso = one_dims(&CovMatrix::identity(16), 100);
        assert_relative_eq!(
            separation_lower(&iso, 0.05, 0.0).unwrap().unwrap(),
            0.05627314338711377,
            max_relative = 1e-12
        );
        let two_sample = EffectiveDims {
            mode: Mode::TwoSample,
            ..iso
        };
        assert_relative_eq!(
            separation_lower(&two_sample, 0.05, 0.0).unwrap().unwrap(),
            0.05627314338711377 / 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn lower_never_exceeds_upper() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let d = rng.random_range(3..30);
            let diag: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..2.0)).collect();
            let c = CovMatrix::diagonal(&diag);
            let n = rng.random_range(10..=1000);
            let dims = one_dims(&c, n);
            for alpha in [0.01, 0.05, 0.2] {
                for eta in [0.0, 0.1, 1.0] {
                    if let Some(lo) = separation_lower(&dims, alpha, eta).unwrap() {
                        assert!(lo <= separation_upper(&dims, alpha, eta).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn bounds_scale_with_sigma() {
        let opts = OpNormOptions::default();
        let c = CovMatrix::identity(16);
        let base = separation_bounds(&c, 100, None, 0.05, 0.0, &opts).unwrap();
        let scaled = separation_bounds(&c.scaled(9.0), 100, None, 0.05, 0.0, &opts).unwrap();
        assert_relative_eq!(scaled.delta_upper, 3.0 * base.delta_upper, max_relative = 1e-10);
        assert_relative_eq!(
            scaled.delta_lower.unwrap(),
            3.0 * base.delta_lower.unwrap(),
            max_relative = 1e-10
        );
        assert_relative_eq!(
            scaled.delta_guaranteed,
            3.0 * base.delta_guaranteed,
            max_relative = 1e-10
        );
    }

    #[test]
    fn run_test_constant_samples_accept() {
        let x = Sample::constant(&[1.0, -1.0, 0.5], 10).unwrap();
        for alpha in [0.01, 0.2, 0.7] {
            let cfg = TestConfig::new(0.0, alpha, Setting::Gaussian, Mode::TwoSample, QuantileSource::PlugIn).unwrap();
            let r = run_test(&cfg, &x, Some(&x)).unwrap();
            assert_eq!(r.u_stat, 0.0);
            assert!(r.threshold >= 0.0);
            assert!(!r.reject);
        }
    }

    #[test]
    fn run_test_mode_mismatch() {
        let x = Sample::constant(&[1.0], 10).unwrap();
        let one = TestConfig::new(0.0, 0.05, Setting::Gaussian, Mode::OneSample, QuantileSource::PlugIn).unwrap();
        let two = TestConfig::new(0.0, 0.05, Setting::Gaussian, Mode::TwoSample, QuantileSource::PlugIn).unwrap();
        assert!(run_test(&one, &x, Some(&x)).is_err());
        assert!(run_test(&two, &x, None).is_err());
    }

    #[test]
    fn reject_matches_report_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..30 {
            let rows: Vec<Vec<f64>> = (0..12)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0) + 0.8).collect())
                .collect();
            let x = Sample::from_rows(&rows).unwrap();
            let eta = rng.random_range(0.0..1.0);
            let cfg = TestConfig::new(eta, 0.05, Setting::Gaussian, Mode::OneSample, QuantileSource::PlugIn).unwrap();
            let r = run_test(&cfg, &x, None).unwrap();
            assert_eq!(r.reject, r.u_stat - eta * eta > r.threshold);
        }
    }

    #[test]
    fn smallest_alpha_on_grid() {
        // strong signal: rejects at every level
        let x = Sample::from_rows(&[[10.0, 0.1], [10.1, 0.0], [9.9, -0.1], [10.0, 0.0], [10.05, 0.05]]).unwrap();
        let cfg = TestConfig::new(0.0, 0.05, Setting::Gaussian, Mode::OneSample, QuantileSource::PlugIn).unwrap();
        assert_eq!(
            smallest_rejecting_alpha(&cfg, &x, None, &[0.2, 0.01, 0.05]).unwrap(),
            Some(0.01)
        );
        let z = Sample::constant(&[0.0, 0.0], 5).unwrap();
        assert_eq!(smallest_rejecting_alpha(&cfg, &z, None, &[0.2, 0.01]).unwrap(), None);
    }
}
