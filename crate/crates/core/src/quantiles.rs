//! Threshold ingredients `q1`, `q2`.
//!
//! Oracle versions take the true covariance functionals; plug-in versions
//! substitute `‖Σ̂‖_op` and `T̂` termwise into the same formulas. In the
//! bounded setting the `L`-terms are kept exact since `L` is known.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{check_alpha, CovMatrix, GramTriple, QuantileKind, QuantilePair, Sample, Setting};
use crate::statistics::{
    center_gram, empirical_covariance, op_norm, op_norm_from_centered, trace_from_gram, trace_sq_from_centered,
    trace_sq_hat, trace_sq_hat_naive_gram, OpNormOptions, NAIVE_TRACE_SQ_MAX_N,
};

const GAUSS_Q2: f64 = 32.0;
const BOUNDED_Q2_COV: f64 = 614.0;
const BOUNDED_Q2_L: f64 = 3708.0;

/// Spectral summary of a covariance, paired with the sample size it serves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovSummary {
    op_norm: f64,
    trace: f64,
    trace_sq: f64,
    n: usize,
}

impl CovSummary {
    /// Checks `op² ≤ Tr Σ² ≤ (Tr Σ)²` and `op ≤ Tr Σ` up to rounding.
    pub fn new(op_norm: f64, trace: f64, trace_sq: f64, n: usize) -> Result<Self> {
        for (name, v) in [("op_norm", op_norm), ("trace", trace), ("trace_sq", trace_sq)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if n == 0 {
            return Err(invalid("n", "sample size must be positive"));
        }
        let slack = 1.0 + 1e-9;
        if op_norm * op_norm > trace_sq * slack || trace_sq > trace * trace * slack || op_norm > trace * slack {
            return Err(invalid(
                "summary",
                format!("violates Schatten ordering: op={op_norm}, tr={trace}, tr2={trace_sq}"),
            ));
        }
        Ok(Self {
            op_norm,
            trace,
            trace_sq,
            n,
        })
    }

    pub fn from_cov(c: &CovMatrix, n: usize, opts: &OpNormOptions) -> Result<Self> {
        Self::new(op_norm(c, opts)?, c.trace(), c.trace_sq(), n)
    }

    pub fn op_norm(&self) -> f64 {
        self.op_norm
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn trace_sq(&self) -> f64 {
        self.trace_sq
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn term(&self) -> Term {
        Term {
            op_norm: self.op_norm,
            sqrt_trace_sq: self.trace_sq.sqrt(),
            n: self.n as f64,
        }
    }
}

/// Deviation level: `−ln α + ln 8` (Gaussian) or `−ln α + ln 2` (bounded).
pub fn u_level(alpha: f64, setting: &Setting) -> Result<f64> {
    check_alpha(alpha)?;
    let c: f64 = match setting {
        Setting::Gaussian => 8.0,
        Setting::Bounded { .. } => 2.0,
    };
    Ok(c.ln() - alpha.ln())
}

#[derive(Debug, Clone, Copy)]
struct Term {
    op_norm: f64,
    sqrt_trace_sq: f64,
    n: f64,
}

fn gaussian_pair(terms: &[Term], u: f64, source: QuantileKind) -> Result<QuantilePair> {
    let var: f64 = terms.iter().map(|t| t.op_norm / t.n).sum();
    let frob: f64 = terms.iter().map(|t| t.sqrt_trace_sq / t.n).sum();
    QuantilePair::new((2.0 * var * u).sqrt(), GAUSS_Q2 * frob * u, source, u)
}

fn bounded_pair(terms: &[Term], bound: f64, u: f64, source: QuantileKind) -> Result<QuantilePair> {
    let var: f64 = terms.iter().map(|t| t.op_norm / t.n).sum();
    let frob: f64 = terms.iter().map(|t| t.sqrt_trace_sq / t.n).sum();
    let n_min = terms.iter().map(|t| t.n).fold(f64::INFINITY, f64::min);
    let q1 = 2.0 * (2.0 * var * u).sqrt() + 4.0 * bound * u / (3.0 * n_min);
    let q2 = BOUNDED_Q2_COV * frob * u + BOUNDED_Q2_L * bound * bound * u * u / (n_min * n_min);
    QuantilePair::new(q1, q2, source, u)
}

fn summary_terms(sx: &CovSummary, sy: Option<&CovSummary>) -> Vec<Term> {
    std::iter::once(sx).chain(sy).map(CovSummary::term).collect()
}

/// Gaussian-setting `q1`, `q2` from the true covariances. `sy = None` is the
/// one-sample case (`m = ∞`).
pub fn q_gaussian_oracle(sx: &CovSummary, sy: Option<&CovSummary>, alpha: f64) -> Result<QuantilePair> {
    let u = u_level(alpha, &Setting::Gaussian)?;
    gaussian_pair(&summary_terms(sx, sy), u, QuantileKind::Oracle)
}

/// Bounded-setting `q1`, `q2` from the true covariances and the norm bound.
pub fn q_bounded_oracle(sx: &CovSummary, sy: Option<&CovSummary>, bound: f64, alpha: f64) -> Result<QuantilePair> {
    let setting = Setting::bounded(bound)?;
    let u = u_level(alpha, &setting)?;
    bounded_pair(&summary_terms(sx, sy), bound, u, QuantileKind::Oracle)
}

/// Oracle quantiles for either setting.
pub fn q_oracle(setting: &Setting, sx: &CovSummary, sy: Option<&CovSummary>, alpha: f64) -> Result<QuantilePair> {
    match *setting {
        Setting::Gaussian => q_gaussian_oracle(sx, sy, alpha),
        Setting::Bounded { bound } => q_bounded_oracle(sx, sy, bound, alpha),
    }
}

/// Covariance functionals estimated from one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlugInEstimate {
    /// `‖Σ̂‖_op`.
    pub op_norm: f64,
    /// `Tr Σ̂`.
    pub trace: f64,
    /// `T̂`, unclamped.
    pub trace_sq_hat: f64,
    pub n: usize,
}

impl PlugInEstimate {
    pub fn from_sample(x: &Sample, opts: &OpNormOptions) -> Result<Self> {
        if x.n() < 4 {
            return Err(Error::TooFewObservations { needed: 4, got: x.n() });
        }
        let cov = empirical_covariance(x);
        Ok(Self {
            op_norm: op_norm(&cov, opts)?,
            trace: cov.trace(),
            trace_sq_hat: trace_sq_hat(x)?,
            n: x.n(),
        })
    }

    pub fn from_gram(k: &DMatrix<f64>, opts: &OpNormOptions) -> Result<Self> {
        if k.nrows() < 4 {
            return Err(Error::TooFewObservations {
                needed: 4,
                got: k.nrows(),
            });
        }
        let c = center_gram(k);
        let trace_sq_hat = if k.nrows() <= NAIVE_TRACE_SQ_MAX_N {
            trace_sq_hat_naive_gram(k)?
        } else {
            trace_sq_from_centered(&c)
        };
        Ok(Self {
            op_norm: op_norm_from_centered(&c, opts)?,
            trace: trace_from_gram(k).max(0.0),
            trace_sq_hat,
            n: k.nrows(),
        })
    }

    /// `√max(T̂, 0)`.
    pub fn sqrt_trace_sq(&self) -> f64 {
        self.trace_sq_hat.max(0.0).sqrt()
    }

    /// `Tr Σ̂ / ‖Σ̂‖_op`, absent for a degenerate sample.
    pub fn d_e(&self) -> Option<f64> {
        (self.op_norm > 0.0).then(|| self.trace / self.op_norm)
    }

    /// `T̂ / ‖Σ̂‖_op²`, absent for a degenerate sample.
    pub fn d_star(&self) -> Option<f64> {
        (self.op_norm > 0.0).then(|| self.trace_sq_hat.max(0.0) / (self.op_norm * self.op_norm))
    }

    fn term(&self) -> Term {
        Term {
            op_norm: self.op_norm,
            sqrt_trace_sq: self.sqrt_trace_sq(),
            n: self.n as f64,
        }
    }
}

/// Plug-in quantiles with the estimates behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlugInQuantiles {
    pub pair: QuantilePair,
    pub x: PlugInEstimate,
    pub y: Option<PlugInEstimate>,
    pub warnings: Vec<String>,
}

fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, None) => a,
        (None, b) => b,
    }
}

impl PlugInQuantiles {
    /// Estimated effective dimension; in two-sample mode the larger of the
    /// two per-sample estimates.
    pub fn d_e_hat(&self) -> Option<f64> {
        max_opt(self.x.d_e(), self.y.and_then(|y| y.d_e()))
    }

    /// Estimated `d_*`; in two-sample mode the larger per-sample estimate.
    pub fn d_star_hat(&self) -> Option<f64> {
        max_opt(self.x.d_star(), self.y.and_then(|y| y.d_star()))
    }
}

fn plugin_from_estimates(
    x: PlugInEstimate,
    y: Option<PlugInEstimate>,
    setting: &Setting,
    alpha: f64,
) -> Result<PlugInQuantiles> {
    let u = u_level(alpha, setting)?;
    let terms: Vec<Term> = std::iter::once(&x)
        .chain(y.as_ref())
        .map(PlugInEstimate::term)
        .collect();
    let pair = match *setting {
        Setting::Gaussian => gaussian_pair(&terms, u, QuantileKind::PlugIn)?,
        Setting::Bounded { bound } => bounded_pair(&terms, bound, u, QuantileKind::PlugIn)?,
    };
    let mut warnings = Vec::new();
    for (label, est) in std::iter::once(("x", &x)).chain(y.as_ref().map(|e| ("y", e))) {
        let check = check_sample_size_condition(est.n, est.d_e().unwrap_or(0.0), u);
        if !check.holds {
            warnings.push(format!("sample {label}: {}", check.message));
        }
    }
    Ok(PlugInQuantiles { pair, x, y, warnings })
}

/// Plug-in `Q̂1`, `Q̂2` from raw samples (`y = None` for one-sample).
pub fn q_plugin(
    x: &Sample,
    y: Option<&Sample>,
    setting: &Setting,
    alpha: f64,
    opts: &OpNormOptions,
) -> Result<PlugInQuantiles> {
    check_alpha(alpha)?;
    if let Some(y) = y {
        y.check_width(x.d())?;
    }
    let ex = PlugInEstimate::from_sample(x, opts)?;
    let ey = y.map(|y| PlugInEstimate::from_sample(y, opts)).transpose()?;
    plugin_from_estimates(ex, ey, setting, alpha)
}

/// Plug-in `Q̂1`, `Q̂2` from Gram matrices; no feature coordinates needed.
pub fn q_plugin_gram(g: &GramTriple, setting: &Setting, alpha: f64, opts: &OpNormOptions) -> Result<PlugInQuantiles> {
    check_alpha(alpha)?;
    let ex = PlugInEstimate::from_gram(g.kxx(), opts)?;
    let ey = g.kyy().map(|k| PlugInEstimate::from_gram(k, opts)).transpose()?;
    plugin_from_estimates(ex, ey, setting, alpha)
}

/// Which term of `max(d_e, u, u⁴)` is largest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingTerm {
    EffectiveDimension,
    U,
    UFourth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeCheck {
    pub holds: bool,
    pub binding: BindingTerm,
    pub required: f64,
    pub message: String,
}

/// Advisory check of `n ≥ max(d_e, u, u⁴)` (constant taken as 1).
pub fn check_sample_size_condition(n: usize, d_e_hat: f64, u: f64) -> SampleSizeCheck {
    let candidates = [
        (BindingTerm::EffectiveDimension, d_e_hat, "d_e"),
        (BindingTerm::U, u, "u"),
        (BindingTerm::UFourth, u.powi(4), "u⁴"),
    ];
    let (binding, required, label) = candidates
        .into_iter()
        .fold(candidates[0], |best, c| if c.1 > best.1 { c } else { best });
    let holds = n as f64 >= required;
    let message = if holds {
        format!("n = {n} >= {required:.6} ({label} binds)")
    } else {
        format!("sample-size condition fails: n = {n} < {required:.6}; {label} binds")
    };
    SampleSizeCheck {
        holds,
        binding,
        required,
        message,
    }
}
