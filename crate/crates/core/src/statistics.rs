//! Core estimators: the pairwise U-statistic for the squared mean distance,
//! the empirical covariance and its operator norm, and the quadruple
//! U-statistic `T̂` for `Tr Σ²`.
//!
//! `T̂` has two implementations. [`trace_sq_hat_naive`] enumerates every
//! ordered quadruple of distinct indices and is kept as the reference.
//! [`trace_sq_hat_fast`] expands
//!
//! ```text
//! Σ_{i,j,k,l distinct} (G_ij − G_il − G_kj + G_kl)²
//!     = 4(n−2)(n−3)·P2 − 8(n−3)·P3 + 4·P4
//! ```
//!
//! where, with `A` the Gram matrix with its diagonal zeroed and `r = A·1`,
//!
//! ```text
//! P2 = Σ_{a≠b} A_ab²                     (pairs)
//! P3 = Σ_{a,b,c distinct} A_ab A_ac = ‖r‖² − P2   (paths)
//! P4 = Σ_{a,b,c,d distinct} A_ab A_cd = (1ᵀA1)² − 2·P2 − 4·P3
//! ```
//!
//! The squared terms `G_ij², G_il², G_kj², G_kl²` each contribute
//! `(n−2)(n−3)·P2`; the four cross products sharing one index contribute
//! `(n−3)·P3` each; the two disjoint cross products contribute `P4` each.
//! The statistic is translation invariant, so the data (or the Gram matrix)
//! is centered first to avoid cancellation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{CovMatrix, GramTriple, Sample};

/// Samples at or below this size use the enumeration path for `T̂`.
pub const NAIVE_TRACE_SQ_MAX_N: usize = 12;

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for v in iter {
            s.add(v);
        }
        s
    }
}

pub(crate) fn csum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn require_n(n: usize, needed: usize) -> Result<()> {
    if n < needed {
        return Err(Error::TooFewObservations { needed, got: n });
    }
    Ok(())
}

/// `(‖Σ z_i‖² − Σ ‖z_i‖², Σ z_i)` for rows `z_i = x_i − shift`.
fn pair_sum(x: &Sample, shift: &[f64]) -> (f64, Vec<f64>) {
    let d = x.d();
    let mut col = vec![CompensatedSum::default(); d];
    let mut sq = CompensatedSum::default();
    let mut z = vec![0.0; d];
    for r in x.rows() {
        for ((zk, v), c) in z.iter_mut().zip(r).zip(shift) {
            *zk = v - c;
        }
        sq.add(dot(&z, &z));
        for (acc, v) in col.iter_mut().zip(&z) {
            acc.add(*v);
        }
    }
    let s: Vec<f64> = col.iter().map(|c| c.value()).collect();
    (dot(&s, &s) - sq.value(), s)
}

/// Unbiased estimate of `‖μ‖²`: the average of `⟨X_i, X_j⟩` over `i ≠ j`.
pub fn u_stat_one_sample(x: &Sample) -> Result<f64> {
    require_n(x.n(), 2)?;
    let n = x.n() as f64;
    let (off, _) = pair_sum(x, &vec![0.0; x.d()]);
    Ok(off / (n * (n - 1.0)))
}

/// Unbiased estimate of `‖μ − ν‖²`. May be negative.
pub fn u_stat_two_sample(x: &Sample, y: &Sample) -> Result<f64> {
    require_n(x.n(), 2)?;
    require_n(y.n(), 2)?;
    y.check_width(x.d())?;
    // translation invariant: center on the mean of x
    let c = x.mean();
    let (n, m) = (x.n() as f64, y.n() as f64);
    let (off_x, sx) = pair_sum(x, &c);
    let (off_y, sy) = pair_sum(y, &c);
    Ok(off_x / (n * (n - 1.0)) + off_y / (m * (m - 1.0)) - 2.0 * dot(&sx, &sy) / (n * m))
}

fn off_diagonal_mean(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows() as f64;
    let total = csum(k.iter().copied());
    let tr = csum(k.diagonal().iter().copied());
    (total - tr) / (n * (n - 1.0))
}

/// The U-statistic with inner products replaced by Gram entries: the
/// unbiased squared-MMD estimate when the Gram matrices come from a kernel.
pub fn u_stat_from_gram(g: &GramTriple) -> Result<f64> {
    require_n(g.n(), 2)?;
    let ux = off_diagonal_mean(g.kxx());
    match (g.kyy(), g.kxy()) {
        (Some(kyy), Some(kxy)) => {
            require_n(kyy.nrows(), 2)?;
            let (n, m) = (g.n() as f64, kyy.nrows() as f64);
            let cross = csum(kxy.iter().copied());
            Ok(ux + off_diagonal_mean(kyy) - 2.0 * cross / (n * m))
        }
        _ => Ok(ux),
    }
}

/// `(1/n) Σ (X_i − μ̂)(X_i − μ̂)ᵀ`.
pub fn empirical_covariance(x: &Sample) -> CovMatrix {
    let d = x.d();
    let mu = x.mean();
    let mut acc = vec![CompensatedSum::default(); d * (d + 1) / 2];
    let mut z = vec![0.0; d];
    for r in x.rows() {
        for ((zk, v), c) in z.iter_mut().zip(r).zip(&mu) {
            *zk = v - c;
        }
        let mut idx = 0;
        for a in 0..d {
            for b in a..d {
                acc[idx].add(z[a] * z[b]);
                idx += 1;
            }
        }
    }
    let n = x.n() as f64;
    let mut m = DMatrix::zeros(d, d);
    let mut idx = 0;
    for a in 0..d {
        for b in a..d {
            let v = acc[idx].value() / n;
            m[(a, b)] = v;
            m[(b, a)] = v;
            idx += 1;
        }
    }
    CovMatrix::from_symmetric_unchecked(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpNormOptions {
    /// Relative change of the Rayleigh quotient at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OpNormOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl OpNormOptions {
    pub fn new(tol: f64, max_iter: usize) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(invalid("tol", format!("must be positive, got {tol}")));
        }
        if max_iter == 0 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        Ok(Self { tol, max_iter })
    }
}

/// Columns in the subspace iteration block.
const BLOCK: usize = 8;

/// Deterministic start block: the normalized all-ones vector followed by
/// cosine patterns, which have generic overlap with every eigenvector.
fn generic_block(dim: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, p, |i, j| {
        if j == 0 {
            1.0
        } else {
            ((i + 1) as f64 * (j as f64 * 0.7548776662466927 + 0.5698402909980532)).cos()
        }
    })
}

/// Largest eigenpair of a symmetric PSD matrix by block subspace iteration
/// with Rayleigh–Ritz extraction.
///
/// The top Ritz value converges like `(λ_{p+1}/λ_1)^{2k}` for block size
/// `p = min(dim, 8)`, so clusters at the top of the spectrum do not stall
/// it. Iteration stops once the top Ritz value changes by at most `tol`
/// relative. If the start block lies in the null space, blocks of
/// standard basis vectors are tried in turn.
pub fn top_eigenpair(a: &DMatrix<f64>, opts: &OpNormOptions) -> Result<(f64, DVector<f64>)> {
    let dim = a.nrows();
    let scale = a.amax();
    let mut e1 = DVector::zeros(dim);
    if dim > 0 {
        e1[0] = 1.0;
    }
    if dim == 0 || scale == 0.0 {
        return Ok((0.0, e1));
    }
    let p = dim.min(BLOCK);
    let null_tol = scale * dim as f64 * f64::EPSILON;
    let identity_blocks = (0..dim)
        .step_by(p)
        .map(|k| DMatrix::from_fn(dim, p, |i, j| if i == (k + j) % dim { 1.0 } else { 0.0 }));
    let mut q = None;
    for start in std::iter::once(generic_block(dim, p)).chain(identity_blocks) {
        if (a * &start).amax() > null_tol {
            q = Some(start.qr().q());
            break;
        }
    }
    let Some(mut q) = q else {
        return Ok((0.0, e1));
    };
    let mut prev = f64::NAN;
    for _ in 0..opts.max_iter {
        let w = a * &q;
        let h = q.transpose() * &w;
        let eig = SymmetricEigen::new((&h + h.transpose()) * 0.5);
        let top = eig.eigenvalues.imax();
        let ritz = eig.eigenvalues[top];
        if (ritz - prev).abs() <= opts.tol * ritz.abs() {
            let v = &q * eig.eigenvectors.column(top);
            let norm = v.norm();
            return Ok((ritz, if norm > 0.0 { v / norm } else { e1 }));
        }
        prev = ritz;
        q = w.qr().q();
    }
    Err(Error::NoConvergence {
        estimate: prev,
        iterations: opts.max_iter,
    })
}

/// Largest eigenvalue of a symmetric PSD matrix.
pub fn largest_eigenvalue(a: &DMatrix<f64>, opts: &OpNormOptions) -> Result<f64> {
    top_eigenpair(a, opts).map(|(l, _)| l.max(0.0))
}

/// `‖Σ‖_op` of a covariance matrix.
pub fn op_norm(c: &CovMatrix, opts: &OpNormOptions) -> Result<f64> {
    largest_eigenvalue(c.matrix(), opts)
}

/// `H K H` with `H = I − 11ᵀ/n`, exactly symmetric.
pub fn center_gram(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let nf = n as f64;
    // k symmetric: column means equal row means, and columns are contiguous
    let mean: Vec<f64> = k.column_iter().map(|c| csum(c.iter().copied()) / nf).collect();
    let grand = csum(mean.iter().copied()) / nf;
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        let src = k.column(j);
        let mut dst = c.column_mut(j);
        for i in j..n {
            dst[i] = src[i] - mean[i] - mean[j] + grand;
        }
    }
    c.fill_upper_triangle_with_lower_triangle();
    c
}

/// `‖Σ̂‖_op` computed in sample space as `λ_max(H K H) / n`.
pub fn op_norm_from_gram(kxx: &DMatrix<f64>, opts: &OpNormOptions) -> Result<f64> {
    let n = kxx.nrows();
    if n == 0 || !kxx.is_square() {
        return Err(Error::DimensionMismatch(
            "Gram matrix must be square and non-empty".into(),
        ));
    }
    op_norm_from_centered(&center_gram(kxx), opts)
}

pub(crate) fn op_norm_from_centered(c: &DMatrix<f64>, opts: &OpNormOptions) -> Result<f64> {
    Ok(largest_eigenvalue(c, opts)? / c.nrows() as f64)
}

/// `Tr Σ̂` from a Gram matrix: `Tr(H K H) / n`.
pub fn trace_from_gram(kxx: &DMatrix<f64>) -> f64 {
    let n = kxx.nrows() as f64;
    let total = csum(kxx.iter().copied());
    let tr = csum(kxx.diagonal().iter().copied());
    (tr - total / n) / n
}

fn quad_norm(n: usize) -> f64 {
    let n = n as f64;
    4.0 * n * (n - 1.0) * (n - 2.0) * (n - 3.0)
}

/// `T̂` by enumeration of all ordered quadruples of distinct indices.
/// `O(n⁴ d)`; the reference implementation.
pub fn trace_sq_hat_naive(x: &Sample) -> Result<f64> {
    let n = x.n();
    require_n(n, 4)?;
    let d = x.d();
    let mut acc = CompensatedSum::default();
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for i in 0..n {
        for k in 0..n {
            if k == i {
                continue;
            }
            for ((ak, xi), xk) in a.iter_mut().zip(x.row(i)).zip(x.row(k)) {
                *ak = xi - xk;
            }
            for j in 0..n {
                if j == i || j == k {
                    continue;
                }
                for l in 0..n {
                    if l == i || l == j || l == k {
                        continue;
                    }
                    for ((bk, xj), xl) in b.iter_mut().zip(x.row(j)).zip(x.row(l)) {
                        *bk = xj - xl;
                    }
                    let ip = dot(&a, &b);
                    acc.add(ip * ip);
                }
            }
        }
    }
    Ok(acc.value() / quad_norm(n))
}

/// `T̂` by enumeration over a Gram matrix.
pub fn trace_sq_hat_naive_gram(k: &DMatrix<f64>) -> Result<f64> {
    let n = k.nrows();
    require_n(n, 4)?;
    let mut acc = CompensatedSum::default();
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            for kk in 0..n {
                if kk == i || kk == j {
                    continue;
                }
                for l in 0..n {
                    if l == i || l == j || l == kk {
                        continue;
                    }
                    let v = k[(i, j)] - k[(i, l)] - k[(kk, j)] + k[(kk, l)];
                    acc.add(v * v);
                }
            }
        }
    }
    Ok(acc.value() / quad_norm(n))
}

/// Combines the pair/path/disjoint sums. `p2 = Σ_{a≠b} A_ab²`,
/// `r` the off-diagonal row sums, `s1 = Σ_{a≠b} A_ab`.
fn combine_trace_sq(n: usize, p2: f64, r: &[f64], s1: f64) -> f64 {
    let p3 = csum(r.iter().map(|v| v * v)) - p2;
    let p4 = s1 * s1 - 2.0 * p2 - 4.0 * p3;
    let nf = n as f64;
    let total = 4.0 * (nf - 2.0) * (nf - 3.0) * p2 - 8.0 * (nf - 3.0) * p3 + 4.0 * p4;
    total / quad_norm(n)
}

/// `T̂` in `O(n²)` from a Gram matrix (which is centered internally).
pub fn trace_sq_hat_fast_gram(k: &DMatrix<f64>) -> Result<f64> {
    let n = k.nrows();
    require_n(n, 4)?;
    Ok(trace_sq_from_centered(&center_gram(k)))
}

pub(crate) fn trace_sq_from_centered(c: &DMatrix<f64>) -> f64 {
    let n = c.nrows();
    let mut p2 = CompensatedSum::default();
    let mut r = Vec::with_capacity(n);
    let mut s1 = CompensatedSum::default();
    // symmetric: column sums are the row sums
    for (a, col) in c.column_iter().enumerate() {
        let mut row = CompensatedSum::default();
        for (b, &v) in col.iter().enumerate() {
            if a != b {
                p2.add(v * v);
                row.add(v);
            }
        }
        let ra = row.value();
        s1.add(ra);
        r.push(ra);
    }
    combine_trace_sq(n, p2.value(), &r, s1.value())
}

/// `T̂` without enumeration: `O(n d²)` through the `d x d` scatter matrix
/// when `d ≤ n`, otherwise `O(n² d)` through the Gram matrix.
pub fn trace_sq_hat_fast(x: &Sample) -> Result<f64> {
    let n = x.n();
    require_n(n, 4)?;
    let d = x.d();
    let mu = x.mean();
    let z: Vec<Vec<f64>> = x
        .rows()
        .map(|r| r.iter().zip(&mu).map(|(v, c)| v - c).collect())
        .collect();
    if d > n {
        let mut g = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = dot(&z[a], &z[b]);
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        return trace_sq_hat_fast_gram(&g);
    }
    // Σ_{a,b} G_ab² = ‖ZᵀZ‖_F²
    let mut scatter = vec![CompensatedSum::default(); d * d];
    let mut col = vec![CompensatedSum::default(); d];
    let mut diag = Vec::with_capacity(n);
    for za in &z {
        for p in 0..d {
            col[p].add(za[p]);
            for q in 0..d {
                scatter[p * d + q].add(za[p] * za[q]);
            }
        }
        diag.push(dot(za, za));
    }
    let frob2 = csum(scatter.iter().map(|s| {
        let v = s.value();
        v * v
    }));
    let diag_sq = csum(diag.iter().map(|g| g * g));
    let p2 = frob2 - diag_sq;
    let s: Vec<f64> = col.iter().map(|c| c.value()).collect();
    let r: Vec<f64> = z.iter().zip(&diag).map(|(za, g)| dot(za, &s) - g).collect();
    let s1 = dot(&s, &s) - csum(diag.iter().copied());
    Ok(combine_trace_sq(n, p2, &r, s1))
}

/// `T̂` as used by the plug-in quantiles: enumeration for `n ≤ 12`,
/// the expansion otherwise.
pub fn trace_sq_hat(x: &Sample) -> Result<f64> {
    if x.n() <= NAIVE_TRACE_SQ_MAX_N {
        trace_sq_hat_naive(x)
    } else {
        trace_sq_hat_fast(x)
    }
}

/// Gram counterpart of [`trace_sq_hat`].
pub fn trace_sq_hat_gram(k: &DMatrix<f64>) -> Result<f64> {
    if k.nrows() <= NAIVE_TRACE_SQ_MAX_N {
        trace_sq_hat_naive_gram(k)
    } else {
        trace_sq_hat_fast_gram(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sample(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Sample {
        let data = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        Sample::new(data, n, d).unwrap()
    }

    fn linear_gram(x: &Sample) -> DMatrix<f64> {
        DMatrix::from_fn(x.n(), x.n(), |i, j| dot(x.row(i), x.row(j)))
    }

    /// Direct double loop over i != j, independent of the sum identity.
    fn u_two_sample_brute(x: &Sample, y: &Sample) -> f64 {
        let (n, m) = (x.n(), y.n());
        let mut sxx = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sxx += dot(x.row(i), x.row(j));
                }
            }
        }
        let mut syy = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    syy += dot(y.row(i), y.row(j));
                }
            }
        }
        let mut sxy = 0.0;
        for i in 0..n {
            for j in 0..m {
                sxy += dot(x.row(i), y.row(j));
            }
        }
        let (nf, mf) = (n as f64, m as f64);
        sxx / (nf * (nf - 1.0)) + syy / (mf * (mf - 1.0)) - 2.0 * sxy / (nf * mf)
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn u_stat_constant_samples() {
        let x = Sample::constant(&[1.0, 2.0, -0.5], 5).unwrap();
        let y = Sample::constant(&[0.0, 1.0, 0.5], 7).unwrap();
        assert_relative_eq!(u_stat_two_sample(&x, &y).unwrap(), 3.0, max_relative = 1e-14);
        assert_relative_eq!(u_stat_one_sample(&x).unwrap(), 5.25, max_relative = 1e-14);
    }

    #[test]
    fn u_stat_orthogonal_pair() {
        let x = Sample::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let y = Sample::from_rows(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(u_stat_one_sample(&x).unwrap(), 0.0);
        assert_eq!(u_stat_two_sample(&x, &y).unwrap(), 0.0);
        let g = GramTriple::two_sample(linear_gram(&x), linear_gram(&y), DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(u_stat_from_gram(&g).unwrap(), 0.0);
    }

    #[test]
    fn u_stat_errors() {
        let one = Sample::from_rows(&[[1.0, 0.0]]).unwrap();
        let two = Sample::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let wide = Sample::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!(matches!(u_stat_one_sample(&one), Err(Error::TooFewObservations { .. })));
        assert!(u_stat_two_sample(&two, &one).is_err());
        assert!(matches!(
            u_stat_two_sample(&two, &wide),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn u_stat_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (n, m, d) = (rng.random_range(2..9), rng.random_range(2..9), rng.random_range(1..6));
            let x = random_sample(&mut rng, n, d);
            let y = random_sample(&mut rng, m, d);
            let brute = u_two_sample_brute(&x, &y);
            let fast = u_stat_two_sample(&x, &y).unwrap();
            assert!((fast - brute).abs() <= 1e-10 * (1.0 + brute.abs()));
        }
    }

    #[test]
    fn gram_u_stat_all_ones() {
        let ones = |r, c| DMatrix::from_element(r, c, 1.0);
        let g = GramTriple::two_sample(ones(4, 4), ones(3, 3), ones(4, 3)).unwrap();
        assert_relative_eq!(u_stat_from_gram(&g).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gram_u_stat_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (n, m, d) = (rng.random_range(2..9), rng.random_range(2..9), rng.random_range(1..6));
            let x = random_sample(&mut rng, n, d);
            let y = random_sample(&mut rng, m, d);
            let kxy = DMatrix::from_fn(n, m, |i, j| dot(x.row(i), y.row(j)));
            let g = GramTriple::two_sample(linear_gram(&x), linear_gram(&y), kxy).unwrap();
            let direct = u_stat_two_sample(&x, &y).unwrap();
            let via_gram = u_stat_from_gram(&g).unwrap();
            assert!((direct - via_gram).abs() <= 1e-10 * (1.0 + direct.abs()));
            let g1 = GramTriple::one_sample(linear_gram(&x)).unwrap();
            let one = u_stat_one_sample(&x).unwrap();
            assert!((u_stat_from_gram(&g1).unwrap() - one).abs() <= 1e-10 * (1.0 + one.abs()));
        }
    }

    #[test]
    fn covariance_examples() {
        let x = Sample::from_rows(&[[2.0, 0.0], [0.0, 0.0]]).unwrap();
        let c = empirical_covariance(&x);
        assert_eq!(c.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let single = Sample::from_rows(&[[3.0, -1.0, 2.0]]).unwrap();
        assert!(empirical_covariance(&single).is_zero());
    }

    #[test]
    fn covariance_matches_moment_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_sample(&mut rng, 6, 3);
        let n = 6.0;
        let mu = x.mean();
        let mut brute = DMatrix::zeros(3, 3);
        for r in x.rows() {
            for a in 0..3 {
                for b in 0..3 {
                    brute[(a, b)] += r[a] * r[b] / n;
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                brute[(a, b)] -= mu[a] * mu[b];
            }
        }
        let c = empirical_covariance(&x);
        assert!((c.matrix() - brute).amax() <= 1e-12);
    }

    #[test]
    fn op_norm_examples() {
        let opts = OpNormOptions::default();
        assert_relative_eq!(
            op_norm(&CovMatrix::identity(7), &opts).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            op_norm(&CovMatrix::diagonal(&[4.0, 1.0, 1.0]), &opts).unwrap(),
            4.0,
            max_relative = 1e-10
        );
        // ones vector is in the null space here
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_relative_eq!(largest_eigenvalue(&m, &opts).unwrap(), 2.0, max_relative = 1e-12);
        // ones and e1 both in the null space
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, -1.0, 1.0]);
        assert_relative_eq!(largest_eigenvalue(&m, &opts).unwrap(), 2.0, max_relative = 1e-12);
        assert_eq!(largest_eigenvalue(&DMatrix::zeros(3, 3), &opts).unwrap(), 0.0);
    }

    #[test]
    fn op_norm_matches_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let opts = OpNormOptions::default();
        for _ in 0..20 {
            let f = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let c = CovMatrix::from_factor(&f);
            let exact = SymmetricEigen::new(c.matrix().clone()).eigenvalues.max();
            assert_relative_eq!(op_norm(&c, &opts).unwrap(), exact, max_relative = 1e-8);
        }
    }

    #[test]
    fn op_norm_reports_non_convergence() {
        let mut diag = vec![0.999; 12];
        diag[0] = 1.0;
        let m = DMatrix::from_diagonal(&DVector::from_vec(diag));
        let opts = OpNormOptions::new(1e-15, 3).unwrap();
        match largest_eigenvalue(&m, &opts) {
            Err(Error::NoConvergence { estimate, iterations }) => {
                assert_eq!(iterations, 3);
                assert!(estimate > 0.99 && estimate <= 1.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        assert!(OpNormOptions::new(0.0, 10).is_err());
        assert!(OpNormOptions::new(1e-8, 0).is_err());
    }

    #[test]
    fn op_norm_from_gram_examples() {
        let opts = OpNormOptions::default();
        assert_eq!(
            op_norm_from_gram(&DMatrix::from_element(5, 5, 1.0), &opts).unwrap(),
            0.0
        );
        let x = Sample::from_rows(&[[2.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_relative_eq!(
            op_norm_from_gram(&linear_gram(&x), &opts).unwrap(),
            1.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn op_norm_gram_matches_direct_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let opts = OpNormOptions::default();
        for _ in 0..50 {
            let (n, d) = (rng.random_range(2..15), rng.random_range(1..6));
            let x = random_sample(&mut rng, n, d);
            let direct = op_norm(&empirical_covariance(&x), &opts).unwrap();
            let gram = op_norm_from_gram(&linear_gram(&x), &opts).unwrap();
            assert_relative_eq!(direct, gram, max_relative = 1e-9);
            assert_relative_eq!(
                trace_from_gram(&linear_gram(&x)),
                empirical_covariance(&x).trace(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn trace_sq_constant_rows_vanish() {
        let x = Sample::constant(&[1.5, -2.0], 6).unwrap();
        assert_eq!(trace_sq_hat_naive(&x).unwrap(), 0.0);
        assert_eq!(trace_sq_hat_fast(&x).unwrap(), 0.0);
        let big = Sample::constant(&[1.5, -2.0], 40).unwrap();
        assert_eq!(trace_sq_hat_fast(&big).unwrap(), 0.0);
    }

    #[test]
    fn trace_sq_basis_regression() {
        // e1..e4 in R^4: every quadruple gives <e_i - e_k, e_j - e_l>^2 = 0
        // since all four indices differ.
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let x = Sample::from_rows(&rows).unwrap();
        assert_eq!(trace_sq_hat_naive(&x).unwrap(), 0.0);
        assert!(trace_sq_hat_fast(&x).unwrap().abs() < 1e-15);
    }

    #[test]
    fn trace_sq_fast_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let (n, d) = (rng.random_range(4..13), rng.random_range(1..7));
            let x = random_sample(&mut rng, n, d);
            let naive = trace_sq_hat_naive(&x).unwrap();
            let fast = trace_sq_hat_fast(&x).unwrap();
            assert!(
                (fast - naive).abs() <= 1e-10 * (1.0 + naive),
                "n={n} d={d}: {fast} vs {naive}"
            );
            let g = linear_gram(&x);
            assert!((trace_sq_hat_fast_gram(&g).unwrap() - fast).abs() <= 1e-10 * (1.0 + fast));
            assert!((trace_sq_hat_naive_gram(&g).unwrap() - naive).abs() <= 1e-10 * (1.0 + naive));
        }
    }

    #[test]
    fn trace_sq_fast_wide_data_uses_gram_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = random_sample(&mut rng, 6, 20);
        let naive = trace_sq_hat_naive(&x).unwrap();
        assert!((trace_sq_hat_fast(&x).unwrap() - naive).abs() <= 1e-10 * (1.0 + naive));
    }

    #[test]
    fn trace_sq_requires_four_points() {
        let x = Sample::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        assert!(trace_sq_hat_naive(&x).is_err());
        assert!(trace_sq_hat_fast(&x).is_err());
    }
}
