//! Seeded samplers and the Monte Carlo harness.
//!
//! Trial `t` of an experiment seeded with `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` switched to stream `t`. Streams are
//! independent, so results do not depend on the order in which trials run,
//! and the sequential and parallel executions agree bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kme::{kme_test_with, Kernel};
use crate::model::{CovMatrix, Mode, QuantilePair, QuantileSource, Sample, Setting, TestConfig};
use crate::parallel::{map_indexed, Execution};
use crate::quantiles::{q_oracle, CovSummary};
use crate::statistics::{
    empirical_covariance, op_norm, top_eigenpair, trace_sq_hat, u_stat_one_sample, u_stat_two_sample, OpNormOptions,
};
use crate::testing::{decide, effective_dims, run_test_with, separation_upper, CovInput};

/// The random stream of one trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// `n` draws of `mean + F·g` with `g ~ N(0, I_k)` for a `d × k` factor `F`.
pub fn sample_gaussian<R: Rng + ?Sized>(mean: &[f64], factor: &DMatrix<f64>, n: usize, rng: &mut R) -> Result<Sample> {
    let d = mean.len();
    if factor.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "factor has {} rows, mean has {d} entries",
            factor.nrows()
        )));
    }
    let k = factor.ncols();
    let mut data = Vec::with_capacity(n * d);
    let mut g = DVector::zeros(k);
    for _ in 0..n {
        g.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let z = factor * &g;
        data.extend(mean.iter().zip(z.iter()).map(|(m, z)| m + z));
    }
    Sample::new(data, n, d)
}

/// `n` draws of `center + radius·v` with `v` uniform on the unit sphere.
pub fn sample_sphere<R: Rng + ?Sized>(center: &[f64], radius: f64, n: usize, rng: &mut R) -> Result<Sample> {
    let d = center.len();
    if d == 0 {
        return Err(invalid("center", "dimension must be positive"));
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(invalid("radius", format!("must be nonnegative, got {radius}")));
    }
    let mut data = Vec::with_capacity(n * d);
    let mut g = vec![0.0; d];
    for _ in 0..n {
        let norm = loop {
            g.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        data.extend(center.iter().zip(&g).map(|(c, v)| c + radius * v / norm));
    }
    Sample::new(data, n, d)
}

/// Noise model of one population around its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    /// `F·g`, covariance `FFᵀ`.
    Gaussian { factor: DMatrix<f64> },
    /// Uniform on the sphere of the given radius, covariance `(r²/d)·I`.
    Sphere { radius: f64 },
}

/// One distribution: a mean and a noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub mean: Vec<f64>,
    pub noise: Noise,
}

impl Population {
    pub fn gaussian(mean: Vec<f64>, factor: DMatrix<f64>) -> Result<Self> {
        let p = Population {
            mean,
            noise: Noise::Gaussian { factor },
        };
        p.validate()?;
        Ok(p)
    }

    pub fn sphere(center: Vec<f64>, radius: f64) -> Result<Self> {
        let p = Population {
            mean: center,
            noise: Noise::Sphere { radius },
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.mean.is_empty() {
            return Err(invalid("mean", "dimension must be positive"));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(invalid("mean", "entries must be finite"));
        }
        match &self.noise {
            Noise::Gaussian { factor } => {
                if factor.nrows() != self.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "factor has {} rows, mean has {} entries",
                        factor.nrows(),
                        self.dim()
                    )));
                }
                if factor.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("factor", "entries must be finite"));
                }
            }
            Noise::Sphere { radius } => {
                if !(*radius >= 0.0 && radius.is_finite()) {
                    return Err(invalid("radius", format!("must be nonnegative, got {radius}")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> CovMatrix {
        match &self.noise {
            Noise::Gaussian { factor } => CovMatrix::from_factor(factor),
            Noise::Sphere { radius } => CovMatrix::scaled_identity(self.dim(), radius * radius / self.dim() as f64),
        }
    }

    /// Largest possible draw norm; infinite for Gaussian noise.
    pub fn norm_bound(&self) -> f64 {
        match &self.noise {
            Noise::Gaussian { factor } if factor.iter().all(|v| *v == 0.0) => norm(&self.mean),
            Noise::Gaussian { .. } => f64::INFINITY,
            Noise::Sphere { radius } => norm(&self.mean) + radius,
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self.noise, Noise::Sphere { .. })
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Sample> {
        match &self.noise {
            Noise::Gaussian { factor } => sample_gaussian(&self.mean, factor, n, rng),
            Noise::Sphere { radius } => sample_sphere(&self.mean, *radius, n, rng),
        }
    }

    pub fn with_mean(&self, mean: Vec<f64>) -> Result<Self> {
        let p = Population {
            mean,
            noise: self.noise.clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The data-generating side of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    x: Population,
    n: usize,
    y: Option<(Population, usize)>,
}

impl Scenario {
    pub fn one_sample(x: Population, n: usize) -> Result<Self> {
        Ok(Scenario { x, n, y: None })
    }

    pub fn two_sample(x: Population, n: usize, y: Population, m: usize) -> Result<Self> {
        if x.dim() != y.dim() {
            return Err(Error::DimensionMismatch(format!(
                "populations have dimensions {} and {}",
                x.dim(),
                y.dim()
            )));
        }
        if x.is_bounded() != y.is_bounded() {
            return Err(Error::Config("both populations must use the same noise family".into()));
        }
        Ok(Scenario { x, n, y: Some((y, m)) })
    }

    pub fn mode(&self) -> Mode {
        if self.y.is_some() {
            Mode::TwoSample
        } else {
            Mode::OneSample
        }
    }

    pub fn x(&self) -> &Population {
        &self.x
    }

    pub fn y(&self) -> Option<&Population> {
        self.y.as_ref().map(|(p, _)| p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> Option<usize> {
        self.y.as_ref().map(|(_, m)| *m)
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// `‖μ‖` or `‖μ − ν‖`.
    pub fn mean_distance(&self) -> f64 {
        match &self.y {
            None => norm(&self.x.mean),
            Some((y, _)) => self
                .x
                .mean
                .iter()
                .zip(&y.mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Largest possible norm of any draw.
    pub fn norm_bound(&self) -> f64 {
        self.y
            .iter()
            .map(|(p, _)| p.norm_bound())
            .fold(self.x.norm_bound(), f64::max)
    }

    /// Moves the mean of `x` to `base + shift`, where `base` is the origin
    /// (one sample) or the mean of `y` (two samples).
    pub fn with_offset(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "shift has {} entries, scenario dimension is {}",
                shift.len(),
                self.dim()
            )));
        }
        let mean = match &self.y {
            None => shift.to_vec(),
            Some((y, _)) => y.mean.iter().zip(shift).map(|(a, b)| a + b).collect(),
        };
        Ok(Scenario {
            x: self.x.with_mean(mean)?,
            n: self.n,
            y: self.y.clone(),
        })
    }

    pub fn with_sizes(&self, n: usize, m: Option<usize>) -> Self {
        let mut s = self.clone();
        s.n = n;
        if let (Some((_, old)), Some(m)) = (s.y.as_mut(), m) {
            *old = m;
        }
        s
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Sample, Option<Sample>)> {
        let x = self.x.draw(self.n, rng)?;
        let y = match &self.y {
            Some((p, m)) => Some(p.draw(*m, rng)?),
            None => None,
        };
        Ok((x, y))
    }

    fn check_against(&self, cfg: &TestConfig) -> Result<()> {
        if cfg.mode() != self.mode() {
            return Err(Error::Config(format!(
                "scenario is {}-sample but the test is {}-sample",
                self.mode().name(),
                cfg.mode().name()
            )));
        }
        if let Setting::Bounded { bound } = cfg.setting() {
            let actual = self.norm_bound();
            if actual > bound * (1.0 + crate::model::NORM_SLACK) {
                return Err(Error::Config(format!(
                    "scenario draws can reach norm {actual}, above the configured bound {bound}"
                )));
            }
        }
        Ok(())
    }
}

/// Which test a trial runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Procedure {
    /// The test on raw vectors. The truth is `‖μ − ν‖` against `η`.
    Raw,
    /// The kernel test. `distance` is the population MMD, which decides
    /// whether the trial is under the null.
    Kernel { kernel: Kernel, distance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub exec: Execution,
    pub op_norm: OpNormOptions,
    pub procedure: Procedure,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            exec: Execution::default(),
            op_norm: OpNormOptions::default(),
            procedure: Procedure::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub trials: usize,
    /// Rejection frequency, when the scenario satisfies the null.
    pub type1_hat: Option<f64>,
    /// Acceptance frequency, when it does not.
    pub type2_hat: Option<f64>,
    /// `3·√(p̂(1 − p̂)/trials)` for the reported rate.
    pub ci_halfwidth: f64,
    pub seed: u64,
}

impl McResult {
    pub fn rate(&self) -> f64 {
        self.type1_hat.or(self.type2_hat).unwrap_or(f64::NAN)
    }
}

fn three_se(p: f64, trials: usize) -> f64 {
    3.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

/// Per-trial decision maker. Oracle quantiles are computed once.
enum Runner {
    Oracle(QuantilePair),
    PlugIn,
    Kernel(Kernel),
}

impl Runner {
    fn new(cfg: &TestConfig, sc: &Scenario, opts: &McOptions) -> Result<Self> {
        match opts.procedure {
            Procedure::Kernel { kernel, .. } => return Ok(Runner::Kernel(kernel)),
            Procedure::Raw => sc.check_against(cfg)?,
        }
        match cfg.quantile_source() {
            QuantileSource::PlugIn => Ok(Runner::PlugIn),
            QuantileSource::Oracle { sigma, s } => {
                let sx = CovSummary::from_cov(sigma, sc.n(), &opts.op_norm)?;
                let sy = match (s, sc.m()) {
                    (Some(s), Some(m)) => Some(CovSummary::from_cov(s, m, &opts.op_norm)?),
                    _ => None,
                };
                Ok(Runner::Oracle(q_oracle(&cfg.setting(), &sx, sy.as_ref(), cfg.alpha())?))
            }
        }
    }

    fn reject(&self, cfg: &TestConfig, x: &Sample, y: Option<&Sample>, opts: &McOptions) -> Result<bool> {
        match self {
            Runner::Oracle(q) => {
                let u = match y {
                    Some(y) => u_stat_two_sample(x, y)?,
                    None => u_stat_one_sample(x)?,
                };
                Ok(decide(u, cfg.eta(), q).reject)
            }
            Runner::PlugIn => Ok(run_test_with(cfg, x, y, &opts.op_norm)?.reject),
            Runner::Kernel(k) => Ok(kme_test_with(cfg, x, y, k, &opts.op_norm, Execution::Sequential)?.reject),
        }
    }
}

/// Number of rejections over trials `0..trials`.
fn count_rejections(cfg: &TestConfig, sc: &Scenario, trials: usize, seed: u64, opts: &McOptions) -> Result<usize> {
    let runner = Runner::new(cfg, sc, opts)?;
    let outcomes = map_indexed(opts.exec, trials, |t| {
        let mut rng = trial_rng(seed, t as u64);
        let (x, y) = sc.draw(&mut rng)?;
        runner.reject(cfg, &x, y.as_ref(), opts)
    });
    let mut count = 0;
    for o in outcomes {
        count += usize::from(o?);
    }
    Ok(count)
}

/// Empirical error rate of the test on `sc`.
pub fn mc_error_rates(cfg: &TestConfig, sc: &Scenario, trials: usize, seed: u64) -> Result<McResult> {
    mc_error_rates_with(cfg, sc, trials, seed, &McOptions::default())
}

pub fn mc_error_rates_with(
    cfg: &TestConfig,
    sc: &Scenario,
    trials: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<McResult> {
    if trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    let rejections = count_rejections(cfg, sc, trials, seed, opts)?;
    let reject_rate = rejections as f64 / trials as f64;
    let distance = match opts.procedure {
        Procedure::Raw => sc.mean_distance(),
        Procedure::Kernel { distance, .. } => distance,
    };
    let (type1_hat, type2_hat, p) = if distance <= cfg.eta() {
        (Some(reject_rate), None, reject_rate)
    } else {
        (None, Some(1.0 - reject_rate), 1.0 - reject_rate)
    };
    Ok(McResult {
        trials,
        type1_hat,
        type2_hat,
        ci_halfwidth: three_se(p, trials),
        seed,
    })
}

/// Unit vector along the top eigenvector of `Σ` (of `Σ/n + S/m` for two
/// samples); `e₁` whenever `e₁` is itself a top eigenvector.
pub fn signal_direction(sc: &Scenario, opts: &OpNormOptions) -> Result<Vec<f64>> {
    let d = sc.dim();
    let mut m = sc.x().covariance().matrix() / sc.n() as f64;
    if let (Some(y), Some(k)) = (sc.y(), sc.m()) {
        m += y.covariance().matrix() / k as f64;
    }
    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    if m.iter().all(|v| *v == 0.0) {
        return Ok(e1);
    }
    let (lambda, v) = top_eigenpair(&m, opts)?;
    let col = m.column(0);
    let residual = col
        .iter()
        .enumerate()
        .map(|(i, c)| if i == 0 { c - lambda } else { *c })
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt();
    if residual <= 1e-9 * lambda.abs().max(f64::MIN_POSITIVE) {
        return Ok(e1);
    }
    Ok(v.normalize().iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationOptions {
    pub trials: usize,
    /// Rejection frequency that defines the separation point.
    pub power_target: f64,
    /// Relative bracket width at which bisection stops.
    pub tol: f64,
    pub seed: u64,
}

impl SeparationOptions {
    pub fn new(trials: usize, power_target: f64, tol: f64, seed: u64) -> Result<Self> {
        if trials == 0 {
            return Err(invalid("trials", "must be positive"));
        }
        if !(power_target > 0.0 && power_target < 1.0) {
            return Err(invalid(
                "power_target",
                format!("must lie in (0, 1), got {power_target}"),
            ));
        }
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(invalid("tol", format!("must be positive, got {tol}")));
        }
        Ok(SeparationOptions {
            trials,
            power_target,
            tol,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationEstimate {
    /// Midpoint of the final bracket.
    pub delta: f64,
    pub lo: f64,
    pub hi: f64,
    /// Every `(δ, rejection frequency)` evaluated, in evaluation order.
    pub probes: Vec<(f64, f64)>,
    /// Monotonicity violations found among the probes.
    pub warnings: Vec<String>,
}

/// Smallest `δ` (beyond `η`) at which the rejection frequency reaches the
/// power target, by bisection over `[0, 10·separation_upper]`.
///
/// The signal `(η + δ)·v` is placed along [`signal_direction`]. Every probe
/// reuses the same trial streams, so power curves are compared on common
/// random numbers.
pub fn empirical_separation(
    cfg: &TestConfig,
    template: &Scenario,
    so: &SeparationOptions,
) -> Result<SeparationEstimate> {
    empirical_separation_with(cfg, template, so, &McOptions::default())
}

pub fn empirical_separation_with(
    cfg: &TestConfig,
    template: &Scenario,
    so: &SeparationOptions,
    opts: &McOptions,
) -> Result<SeparationEstimate> {
    if !matches!(opts.procedure, Procedure::Raw) {
        return Err(Error::Config("separation search runs on raw data only".into()));
    }
    template.check_against(cfg)?;
    let sx = template.x().covariance();
    let sy = template.y().map(|p| p.covariance());
    let dims = match (&sy, template.m()) {
        (Some(s), Some(m)) => effective_dims(
            &CovInput::Full(&sx, template.n()),
            Some(&CovInput::Full(s, m)),
            &opts.op_norm,
        ),
        _ => effective_dims(&CovInput::Full(&sx, template.n()), None, &opts.op_norm),
    };
    let upper = match dims {
        Ok(dims) => separation_upper(&dims, cfg.alpha(), cfg.eta())?,
        Err(Error::ZeroCovariance) => 0.0,
        Err(e) => return Err(e),
    };
    let direction = signal_direction(template, &opts.op_norm)?;
    let mut probes = Vec::new();
    let mut power = |delta: f64| -> Result<f64> {
        let shift: Vec<f64> = direction.iter().map(|v| v * (cfg.eta() + delta)).collect();
        let sc = template.with_offset(&shift)?;
        let p = count_rejections(cfg, &sc, so.trials, so.seed, opts)? as f64 / so.trials as f64;
        probes.push((delta, p));
        Ok(p)
    };
    if upper == 0.0 {
        return Ok(SeparationEstimate {
            delta: 0.0,
            lo: 0.0,
            hi: 0.0,
            probes: Vec::new(),
            warnings: Vec::new(),
        });
    }
    let (mut lo, mut hi) = (0.0, 10.0 * upper);
    let top = power(hi)?;
    if top < so.power_target {
        return Err(Error::BracketFailure {
            delta: hi,
            power: top,
            target: so.power_target,
        });
    }
    if power(lo)? >= so.power_target {
        hi = lo;
    }
    while hi - lo > so.tol * hi {
        let mid = 0.5 * (lo + hi);
        if power(mid)? >= so.power_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let warnings = monotonicity_warnings(&probes, so.trials);
    Ok(SeparationEstimate {
        delta: 0.5 * (lo + hi),
        lo,
        hi,
        probes,
        warnings,
    })
}

/// Pairs of probes whose power decreases in `δ` by more than three
/// standard errors.
pub fn monotonicity_warnings(probes: &[(f64, f64)], trials: usize) -> Vec<String> {
    let mut sorted = probes.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    for w in sorted.windows(2) {
        let ((d0, p0), (d1, p1)) = (w[0], w[1]);
        let se = ((p0 * (1.0 - p0) + p1 * (1.0 - p1)) / trials as f64).sqrt();
        if p0 - p1 > 3.0 * se {
            out.push(format!(
                "power drops from {p0:.4} at delta {d0:.6} to {p1:.4} at delta {d1:.6}"
            ));
        }
    }
    out
}

/// Separation points under the two error conventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationConventions {
    /// Rejection frequency on the null boundary `‖μ − ν‖ = η`.
    pub type1_hat: f64,
    /// Each error at most `3α`: power `1 − 3α`.
    pub per_error: Option<SeparationEstimate>,
    /// Errors summing to at most `α`: power `1 − α + type1_hat`. Absent
    /// when the type I rate alone exceeds `α`.
    pub summed: Option<SeparationEstimate>,
}

pub fn separation_conventions(
    cfg: &TestConfig,
    template: &Scenario,
    trials: usize,
    tol: f64,
    seed: u64,
    opts: &McOptions,
) -> Result<SeparationConventions> {
    let direction = signal_direction(template, &opts.op_norm)?;
    let boundary: Vec<f64> = direction.iter().map(|v| v * cfg.eta()).collect();
    let null = template.with_offset(&boundary)?;
    let type1_hat = count_rejections(cfg, &null, trials, seed, opts)? as f64 / trials as f64;
    let at = |target: f64| -> Result<Option<SeparationEstimate>> {
        if !(target > 0.0 && target < 1.0) {
            return Ok(None);
        }
        let so = SeparationOptions::new(trials, target, tol, seed)?;
        empirical_separation_with(cfg, template, &so, opts).map(Some)
    };
    let alpha = cfg.alpha();
    Ok(SeparationConventions {
        type1_hat,
        per_error: at(1.0 - 3.0 * alpha)?,
        summed: if type1_hat < alpha {
            at(1.0 - alpha + type1_hat)?
        } else {
            None
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `√‖Σ̂‖_op`.
    OpNormSqrt,
    /// `√T̂`.
    TraceSqSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub trials: usize,
    /// Fraction of trials in which the deviation bound held.
    pub coverage: f64,
    /// Probability the bound is guaranteed to hold (may be negative, in
    /// which case the guarantee is vacuous).
    pub stated: f64,
    /// Three standard errors at the stated probability.
    pub ci_halfwidth: f64,
    pub bound: f64,
    pub passes: bool,
}

/// Deviation bound and its guaranteed probability for `estimator` on the
/// `x` population of `sc` at level `u`.
pub fn deviation_bound(
    estimator: Estimator,
    pop: &Population,
    n: usize,
    u: f64,
    opts: &OpNormOptions,
) -> Result<(f64, f64)> {
    if !(u >= 0.0 && u.is_finite()) {
        return Err(invalid("u", format!("must be nonnegative, got {u}")));
    }
    let cov = pop.covariance();
    let nf = n as f64;
    let op = op_norm(&cov, opts)?;
    let d_e = if op > 0.0 { cov.trace() / op } else { 0.0 };
    Ok(match (estimator, pop.is_bounded()) {
        (Estimator::OpNormSqrt, false) => (
            3.0 * 2f64.sqrt() * op.sqrt() * ((d_e / nf).sqrt() + (u / nf).sqrt()),
            1.0 - 3.0 * (-u).exp(),
        ),
        (Estimator::OpNormSqrt, true) => {
            let l = pop.norm_bound();
            (
                4.0 * l * (2.0 * (d_e / nf).sqrt() + (2.0 * u / nf).sqrt() + u / (3.0 * nf)),
                1.0 - 2.0 * (-u).exp(),
            )
        }
        (Estimator::TraceSqSqrt, false) => (30.0 * (cov.trace_sq() / nf).sqrt() * u * u, 1.0 - (4.0 - u).exp()),
        (Estimator::TraceSqSqrt, true) => {
            let l = pop.norm_bound();
            (12.0 * l * l * (u / nf).sqrt(), 1.0 - 2.0 * (-u).exp())
        }
    })
}

/// Empirical frequency with which the concentration bound for `estimator`
/// holds on the `x` population of `sc`.
pub fn coverage_check(estimator: Estimator, sc: &Scenario, u: f64, trials: usize, seed: u64) -> Result<Coverage> {
    coverage_check_with(estimator, sc, u, trials, seed, &McOptions::default())
}

pub fn coverage_check_with(
    estimator: Estimator,
    sc: &Scenario,
    u: f64,
    trials: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<Coverage> {
    if trials < 100 {
        return Err(invalid(
            "trials",
            format!("coverage needs at least 100 trials, got {trials}"),
        ));
    }
    let n = sc.n();
    if estimator == Estimator::TraceSqSqrt && n < 4 {
        return Err(Error::TooFewObservations { needed: 4, got: n });
    }
    let pop = sc.x();
    let (bound, stated) = deviation_bound(estimator, pop, n, u, &opts.op_norm)?;
    let cov = pop.covariance();
    let truth = match estimator {
        Estimator::OpNormSqrt => op_norm(&cov, &opts.op_norm)?.sqrt(),
        Estimator::TraceSqSqrt => cov.trace_sq().sqrt(),
    };
    let held = map_indexed(opts.exec, trials, |t| -> Result<bool> {
        let mut rng = trial_rng(seed, t as u64);
        let x = pop.draw(n, &mut rng)?;
        Ok(match estimator {
            Estimator::OpNormSqrt => {
                let est = op_norm(&empirical_covariance(&x), &opts.op_norm)?.sqrt();
                (est - truth).abs() <= bound
            }
            Estimator::TraceSqSqrt => {
                let est = trace_sq_hat(&x)?.max(0.0).sqrt();
                (est - truth).abs() <= bound
            }
        })
    });
    let mut hits = 0usize;
    for h in held {
        hits += usize::from(h?);
    }
    let coverage = hits as f64 / trials as f64;
    let p = stated.clamp(0.0, 1.0);
    let ci_halfwidth = three_se(p, trials);
    Ok(Coverage {
        trials,
        coverage,
        stated,
        ci_halfwidth,
        bound,
        passes: coverage >= stated - ci_halfwidth,
    })
}
