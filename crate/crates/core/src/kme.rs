//! Kernel mean embedding front end.
//!
//! Inner products are replaced by kernel evaluations, which turns the mean
//! test into a test on `MMD_k(P, Q)`. Feature coordinates are never formed:
//! the statistic, `‖Σ̂‖_op`, `Tr Σ̂` and `T̂` are all computed from Gram
//! matrices. Feature-space data is bounded (by `L = sup √k(z,z)`), so only
//! the bounded-setting constants apply.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{norm_warnings, GramTriple, Mode, QuantileSource, Sample, Setting, TestConfig, TestReport};
use crate::parallel::{for_each_chunk, Execution};
use crate::quantiles::q_plugin_gram;
use crate::statistics::{u_stat_from_gram, OpNormOptions};
use crate::testing::report;

/// A positive-definite kernel `k(a, b) = ⟨Φ(a), Φ(b)⟩`.
pub trait KernelFn: Sync {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64;

    /// `sup_z √k(z, z)` when finite and known.
    fn bound(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    /// `exp(−γ‖a − b‖²)`.
    Rbf {
        gamma: f64,
    },
}

impl Kernel {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be positive, got {gamma}")));
        }
        Ok(Kernel::Rbf { gamma })
    }
}

impl KernelFn for Kernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    fn bound(&self) -> Option<f64> {
        match self {
            Kernel::Linear => None,
            Kernel::Rbf { .. } => Some(1.0),
        }
    }
}

/// `G[i][j] = k(a_i, b_j)`, filled column by column. Symmetric blocks
/// evaluate the lower triangle only and mirror it.
fn gram_block<K: KernelFn + ?Sized>(a: &Sample, b: &Sample, k: &K, symmetric: bool, exec: Execution) -> DMatrix<f64> {
    let (n, m) = (a.n(), b.n());
    let mut g = DMatrix::zeros(n, m);
    for_each_chunk(exec, g.as_mut_slice(), n, |j, col| {
        let start = if symmetric { j } else { 0 };
        let bj = b.row(j);
        for (i, out) in col.iter_mut().enumerate().skip(start) {
            *out = k.eval(a.row(i), bj);
        }
    });
    if symmetric {
        g.fill_upper_triangle_with_lower_triangle();
    }
    g
}

/// Gram matrices of `x` (and `y`) under `k`.
pub fn gram<K: KernelFn + ?Sized>(x: &Sample, y: Option<&Sample>, k: &K) -> Result<GramTriple> {
    gram_with(x, y, k, Execution::default())
}

pub fn gram_with<K: KernelFn + ?Sized>(x: &Sample, y: Option<&Sample>, k: &K, exec: Execution) -> Result<GramTriple> {
    let kxx = gram_block(x, x, k, true, exec);
    let y = match y {
        None => None,
        Some(y) => {
            y.check_width(x.d())?;
            Some((gram_block(y, y, k, true, exec), gram_block(x, y, k, false, exec)))
        }
    };
    let g = GramTriple::from_parts_unchecked(kxx, y);
    if let Some(pos) = g
        .kxx()
        .iter()
        .chain(g.kyy().into_iter().flatten())
        .chain(g.kxy().into_iter().flatten())
        .position(|v| !v.is_finite())
    {
        return Err(Error::Config(format!(
            "kernel produced a non-finite value (entry {pos})"
        )));
    }
    Ok(g)
}

/// Bounded setting for a kernel: the user bound if given, else the
/// kernel's own bound.
pub fn kernel_setting<K: KernelFn + ?Sized>(k: &K, user_bound: Option<f64>) -> Result<Setting> {
    match user_bound.or_else(|| k.bound()) {
        Some(l) => Setting::bounded(l),
        None => Err(Error::Config(
            "kernel has no known norm bound; supply L for the bounded setting".into(),
        )),
    }
}

fn feature_norm_warnings(k: &DMatrix<f64>, bound: f64) -> Vec<String> {
    norm_warnings(k.diagonal().iter().map(|v| v.max(0.0).sqrt()), bound)
}

/// MMD test: `U` is the unbiased squared-MMD estimate and the quantiles are
/// plug-in estimates in feature space. Distances are in MMD units.
pub fn kme_test<K: KernelFn + ?Sized>(cfg: &TestConfig, x: &Sample, y: Option<&Sample>, k: &K) -> Result<TestReport> {
    kme_test_with(cfg, x, y, k, &OpNormOptions::default(), Execution::default())
}

pub fn kme_test_with<K: KernelFn + ?Sized>(
    cfg: &TestConfig,
    x: &Sample,
    y: Option<&Sample>,
    k: &K,
    opts: &OpNormOptions,
    exec: Execution,
) -> Result<TestReport> {
    let Setting::Bounded { bound } = cfg.setting() else {
        return Err(Error::Config(
            "kernel tests use the bounded setting; Gaussian constants do not apply in feature space".into(),
        ));
    };
    if !matches!(cfg.quantile_source(), QuantileSource::PlugIn) {
        return Err(Error::Config(
            "kernel tests estimate feature-space covariances; oracle quantiles are unavailable".into(),
        ));
    }
    match (cfg.mode(), y) {
        (Mode::OneSample, None) | (Mode::TwoSample, Some(_)) => {}
        _ => return Err(Error::Config("sample count does not match the test mode".into())),
    }
    let g = gram_with(x, y, k, exec)?;
    let mut warnings = feature_norm_warnings(g.kxx(), bound);
    if let Some(kyy) = g.kyy() {
        warnings.extend(
            feature_norm_warnings(kyy, bound)
                .into_iter()
                .map(|w| format!("sample y: {w}")),
        );
    }
    let u_stat = u_stat_from_gram(&g)?;
    let p = q_plugin_gram(&g, &cfg.setting(), cfg.alpha(), opts)?;
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
