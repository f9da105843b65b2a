//! Domain types shared by the estimators, the decision rule and the harness.
//!
//! Every type validates its invariants on construction and on
//! deserialization, so a value that exists is a value that is usable.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative tolerance for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative (to the operator norm) slack allowed on negative eigenvalues.
pub const PSD_TOL: f64 = 1e-10;
/// Multiplicative slack on the bounded-norm check.
pub const NORM_SLACK: f64 = 1e-9;

/// An `n x d` sample; rows are observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampleRepr", into = "SampleRepr")]
pub struct Sample {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleRepr {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl TryFrom<SampleRepr> for Sample {
    type Error = Error;
    fn try_from(r: SampleRepr) -> Result<Self> {
        Sample::new(r.data, r.n, r.d)
    }
}

impl From<Sample> for SampleRepr {
    fn from(s: Sample) -> Self {
        SampleRepr {
            n: s.n,
            d: s.d,
            data: s.data,
        }
    }
}

impl Sample {
    /// Builds a sample from row-major data.
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::DimensionMismatch(format!(
                "sample must have n >= 1 and d >= 1, got {n}x{d}"
            )));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "{} entries cannot form a {n}x{d} sample",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self { data, n, d })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {d}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(data, n, d)
    }

    /// `n` copies of the same row.
    pub fn constant(row: &[f64], n: usize) -> Result<Self> {
        let data = row.iter().copied().cycle().take(n * row.len()).collect();
        Self::new(data, n, row.len())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Adds `shift` to every row.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        self.check_width(shift.len())?;
        let data = self
            .rows()
            .flat_map(|r| r.iter().zip(shift).map(|(a, b)| a + b))
            .collect();
        Self::new(data, self.n, self.d)
    }

    /// Applies `f` to each row, producing rows of the same width.
    pub fn map_rows(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = self.rows().map(&mut f).collect();
        Self::from_rows(&rows)
    }

    /// Row subset, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::new(data, idx.len(), self.d)
    }

    /// Column-wise empirical mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![crate::statistics::CompensatedSum::default(); self.d];
        for r in self.rows() {
            for (a, v) in acc.iter_mut().zip(r) {
                a.add(*v);
            }
        }
        let n = self.n as f64;
        acc.into_iter().map(|a| a.value() / n).collect()
    }

    pub(crate) fn check_width(&self, d: usize) -> Result<()> {
        if d != self.d {
            return Err(Error::DimensionMismatch(format!(
                "expected dimension {}, got {d}",
                self.d
            )));
        }
        Ok(())
    }
}

/// Checks a sample against the setting and returns one warning per violation.
/// Non-finite entries are already rejected by [`Sample::new`].
pub fn validate_sample(s: &Sample, setting: &Setting) -> Vec<String> {
    match *setting {
        Setting::Bounded { bound } => {
            norm_warnings(s.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()), bound)
        }
        Setting::Gaussian => Vec::new(),
    }
}

/// One warning per norm above `bound·(1 + NORM_SLACK)`.
pub(crate) fn norm_warnings(norms: impl Iterator<Item = f64>, bound: f64) -> Vec<String> {
    let limit = bound * (1.0 + NORM_SLACK);
    norms
        .enumerate()
        .filter(|(_, norm)| *norm > limit)
        .map(|(i, norm)| format!("row norm exceeds L: row {i} has norm {norm:.6} > L = {bound:.6}"))
        .collect()
}

/// Like [`validate_sample`] but also checks the width.
pub fn validate_sample_dim(s: &Sample, expected_d: usize, setting: &Setting) -> Result<Vec<String>> {
    s.check_width(expected_d)?;
    Ok(validate_sample(s, setting))
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    // tiled so both m[(i, j)] and m[(j, i)] stay in cache
    const TILE: usize = 64;
    let n = m.nrows();
    let mut worst = 0.0f64;
    for jb in (0..n).step_by(TILE) {
        for ib in (0..=jb).step_by(TILE) {
            for j in jb..(jb + TILE).min(n) {
                for i in ib..(ib + TILE).min(j) {
                    worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
                }
            }
        }
    }
    worst / scale
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos % m.nrows(),
            col: pos / m.nrows(),
        });
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Smallest eigenvalue is at least `-PSD_TOL * ||m||_op`.
pub(crate) fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 {
        return Ok(());
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * max {
        return Err(Error::NotPsd(min));
    }
    Ok(())
}

/// A symmetric `d x d` covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct CovMatrix(DMatrix<f64>);

impl TryFrom<DMatrix<f64>> for CovMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        CovMatrix::new(m)
    }
}

impl From<CovMatrix> for DMatrix<f64> {
    fn from(c: CovMatrix) -> Self {
        c.0
    }
}

impl CovMatrix {
    /// Validates symmetry. Positive semidefiniteness is checked separately by
    /// [`CovMatrix::check_psd`] since it needs an eigendecomposition.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&m)?;
        if m.nrows() == 0 {
            return Err(Error::DimensionMismatch("empty covariance".into()));
        }
        Ok(Self(m))
    }

    /// Symmetric and positive semidefinite.
    pub fn new_psd(m: DMatrix<f64>) -> Result<Self> {
        let c = Self::new(m)?;
        c.check_psd()?;
        Ok(c)
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn scaled_identity(d: usize, scale: f64) -> Self {
        Self(DMatrix::identity(d, d) * scale)
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    /// `F Fᵀ`, symmetrized.
    pub fn from_factor(f: &DMatrix<f64>) -> Self {
        let m = f * f.transpose();
        Self((&m + m.transpose()) * 0.5)
    }

    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn check_psd(&self) -> Result<()> {
        check_psd(&self.0)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// `Tr Σ²`, i.e. the squared Frobenius norm of a symmetric matrix.
    pub fn trace_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

/// Which concentration constants apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Setting {
    Gaussian,
    /// Observations bounded in norm by `bound`.
    Bounded {
        bound: f64,
    },
}

impl Setting {
    pub fn bounded(bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(invalid("bound", format!("L must be positive and finite, got {bound}")));
        }
        Ok(Setting::Bounded { bound })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Setting::Gaussian => "gaussian",
            Setting::Bounded { .. } => "bounded",
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if let Setting::Bounded { bound } = *self {
            Setting::bounded(bound)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OneSample,
    TwoSample,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::OneSample => "one",
            Mode::TwoSample => "two",
        }
    }
}

/// Where the threshold ingredients come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantileSource {
    /// True covariances are known. `s` is required in two-sample mode.
    Oracle { sigma: CovMatrix, s: Option<CovMatrix> },
    /// Estimate covariance functionals from the data.
    PlugIn,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

pub(crate) fn check_eta(eta: f64) -> Result<()> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(invalid("eta", format!("must be finite and >= 0, got {eta}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TestConfigRepr", into = "TestConfigRepr")]
pub struct TestConfig {
    pub(crate) eta: f64,
    pub(crate) alpha: f64,
    pub(crate) setting: Setting,
    pub(crate) mode: Mode,
    pub(crate) quantile_source: QuantileSource,
}

#[derive(Serialize, Deserialize)]
struct TestConfigRepr {
    eta: f64,
    alpha: f64,
    setting: Setting,
    mode: Mode,
    quantile_source: QuantileSource,
}

impl TryFrom<TestConfigRepr> for TestConfig {
    type Error = Error;
    fn try_from(r: TestConfigRepr) -> Result<Self> {
        TestConfig::new(r.eta, r.alpha, r.setting, r.mode, r.quantile_source)
    }
}

impl From<TestConfig> for TestConfigRepr {
    fn from(c: TestConfig) -> Self {
        TestConfigRepr {
            eta: c.eta,
            alpha: c.alpha,
            setting: c.setting,
            mode: c.mode,
            quantile_source: c.quantile_source,
        }
    }
}

impl TestConfig {
    pub fn new(eta: f64, alpha: f64, setting: Setting, mode: Mode, quantile_source: QuantileSource) -> Result<Self> {
        check_eta(eta)?;
        check_alpha(alpha)?;
        setting.validate()?;
        if let QuantileSource::Oracle { sigma, s } = &quantile_source {
            if mode == Mode::TwoSample && s.is_none() {
                return Err(Error::Config(
                    "two-sample oracle quantiles need the second covariance".into(),
                ));
            }
            if let Some(s) = s {
                if s.dim() != sigma.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "oracle covariances are {0}x{0} and {1}x{1}",
                        sigma.dim(),
                        s.dim()
                    )));
                }
            }
        }
        Ok(Self {
            eta,
            alpha,
            setting,
            mode,
            quantile_source,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn setting(&self) -> Setting {
        self.setting
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn quantile_source(&self) -> &QuantileSource {
        &self.quantile_source
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { alpha, ..self.clone() })
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        Ok(Self { eta, ..self.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileKind {
    Oracle,
    PlugIn,
}

/// Threshold ingredients `(q1, q2)` and the deviation level `u` they used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuantilePairRepr", into = "QuantilePairRepr")]
pub struct QuantilePair {
    pub(crate) q1: f64,
    pub(crate) q2: f64,
    pub(crate) source: QuantileKind,
    pub(crate) u: f64,
}

#[derive(Serialize, Deserialize)]
struct QuantilePairRepr {
    q1: f64,
    q2: f64,
    source: QuantileKind,
    u: f64,
}

impl TryFrom<QuantilePairRepr> for QuantilePair {
    type Error = Error;
    fn try_from(r: QuantilePairRepr) -> Result<Self> {
        QuantilePair::new(r.q1, r.q2, r.source, r.u)
    }
}

impl From<QuantilePair> for QuantilePairRepr {
    fn from(q: QuantilePair) -> Self {
        QuantilePairRepr {
            q1: q.q1,
            q2: q.q2,
            source: q.source,
            u: q.u,
        }
    }
}

impl QuantilePair {
    pub fn new(q1: f64, q2: f64, source: QuantileKind, u: f64) -> Result<Self> {
        if !(q1 >= 0.0 && q1.is_finite()) {
            return Err(invalid("q1", format!("must be finite and >= 0, got {q1}")));
        }
        if !(q2 >= 0.0 && q2.is_finite()) {
            return Err(invalid("q2", format!("must be finite and >= 0, got {q2}")));
        }
        if !(u > 0.0 && u.is_finite()) {
            return Err(invalid("u", format!("must be positive, got {u}")));
        }
        Ok(Self { q1, q2, source, u })
    }

    pub fn q1(&self) -> f64 {
        self.q1
    }

    pub fn q2(&self) -> f64 {
        self.q2
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn source(&self) -> QuantileKind {
        self.source
    }
}

/// Inner-product (kernel) matrices of one or two samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GramRepr", into = "GramRepr")]
pub struct GramTriple {
    kxx: DMatrix<f64>,
    kyy: Option<DMatrix<f64>>,
    kxy: Option<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct GramRepr {
    kxx: DMatrix<f64>,
    kyy: Option<DMatrix<f64>>,
    kxy: Option<DMatrix<f64>>,
}

impl TryFrom<GramRepr> for GramTriple {
    type Error = Error;
    fn try_from(r: GramRepr) -> Result<Self> {
        match (r.kyy, r.kxy) {
            (None, None) => GramTriple::one_sample(r.kxx),
            (Some(kyy), Some(kxy)) => GramTriple::two_sample(r.kxx, kyy, kxy),
            _ => Err(Error::DimensionMismatch(
                "kyy and kxy must be both present or both absent".into(),
            )),
        }
    }
}

impl From<GramTriple> for GramRepr {
    fn from(g: GramTriple) -> Self {
        GramRepr {
            kxx: g.kxx,
            kyy: g.kyy,
            kxy: g.kxy,
        }
    }
}

impl GramTriple {
    pub fn one_sample(kxx: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&kxx)?;
        Ok(Self {
            kxx,
            kyy: None,
            kxy: None,
        })
    }

    pub fn two_sample(kxx: DMatrix<f64>, kyy: DMatrix<f64>, kxy: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&kxx)?;
        check_symmetric(&kyy)?;
        if kxy.nrows() != kxx.nrows() || kxy.ncols() != kyy.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "kxy is {}x{}, expected {}x{}",
                kxy.nrows(),
                kxy.ncols(),
                kxx.nrows(),
                kyy.nrows()
            )));
        }
        if let Some(pos) = kxy.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos % kxy.nrows(),
                col: pos / kxy.nrows(),
            });
        }
        Ok(Self {
            kxx,
            kyy: Some(kyy),
            kxy: Some(kxy),
        })
    }

    /// For Gram matrices built symmetric by construction.
    pub(crate) fn from_parts_unchecked(kxx: DMatrix<f64>, y: Option<(DMatrix<f64>, DMatrix<f64>)>) -> Self {
        let (kyy, kxy) = y.unzip();
        Self { kxx, kyy, kxy }
    }

    /// Checks that `kxx` and `kyy` are valid (PSD) kernel matrices.
    pub fn check_psd(&self) -> Result<()> {
        check_psd(&self.kxx)?;
        if let Some(kyy) = &self.kyy {
            check_psd(kyy)?;
        }
        Ok(())
    }

    pub fn kxx(&self) -> &DMatrix<f64> {
        &self.kxx
    }

    pub fn kyy(&self) -> Option<&DMatrix<f64>> {
        self.kyy.as_ref()
    }

    pub fn kxy(&self) -> Option<&DMatrix<f64>> {
        self.kxy.as_ref()
    }

    pub fn n(&self) -> usize {
        self.kxx.nrows()
    }

    pub fn m(&self) -> Option<usize> {
        self.kyy.as_ref().map(|k| k.nrows())
    }
}

/// Outcome of one test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub u_stat: f64,
    pub threshold: f64,
    pub reject: bool,
    pub q1_used: f64,
    pub q2_used: f64,
    pub d_e_hat: Option<f64>,
    pub d_star_hat: Option<f64>,
    pub warnings: Vec<String>,
}

/// Closed-form separation distances for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationBounds {
    /// Upper bound on the minimum separation, modulo a universal constant
    /// (the constant is reported as 1).
    pub delta_upper: f64,
    /// Present only when `d_star >= 3`.
    pub delta_lower: Option<f64>,
    /// Separation that the test provably detects with the oracle quantiles.
    pub delta_guaranteed: f64,
    pub sigma: f64,
    pub d_star: f64,
    pub d_e: f64,
    /// Always true: `delta_upper` omits an unspecified numerical factor.
    pub upper_modulo_constant: bool,
}
