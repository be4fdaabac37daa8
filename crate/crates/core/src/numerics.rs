//! Scalar statistical primitives and small dense linear-algebra helpers.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{invalid, Error, Result};

/// Relative asymmetry accepted by [`SymmetricMatrix::try_new`].
const SYMMETRY_TOL: f64 = 1e-9;
/// Cholesky pivots below this multiple of `trace / dim` count as non-PD.
const PD_PIVOT_TOL: f64 = 1e-12;
/// Eigenvalue ratio below which a matrix is reported as singular.
const COND_SINGULAR_TOL: f64 = 1e-12;

/// Consistency constant turning the MAD into a normal-scale estimate.
pub const MAD_SCALE: f64 = 1.482_602_218_505_602;

/// Dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Validates symmetry (relative tolerance 1e-9) and stores the exactly
    /// symmetrized matrix.
    pub fn try_new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return invalid("matrix dimension must be at least 1");
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self::symmetrize(m))
    }

    /// Replaces `m` by `(m + mᵀ) / 2` without validation. Meant for matrices
    /// that are symmetric up to rounding by construction.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymmetricMatrix((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymmetricMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|r| self.0.row(r).iter().copied().collect())
            .collect()
    }

    /// Eigenvalues in descending order with matching eigenvector columns.
    pub fn eigen_desc(&self) -> (DVector<f64>, DMatrix<f64>) {
        sym_eigen_desc(&self.0)
    }

    /// Cholesky factor `L` with `S = L Lᵀ`.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        cholesky_lower(&self.0)
    }

    /// Inverse via Cholesky.
    pub fn inverse_pd(&self) -> Result<SymmetricMatrix> {
        let l = self.cholesky()?;
        let linv = invert_lower(&l);
        Ok(SymmetricMatrix::symmetrize(linv.transpose() * linv))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }
}

impl Deref for SymmetricMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymmetricMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let m = DMatrix::from_fn(dim, dim, |r, c| rows[r][c]);
        SymmetricMatrix::try_new(m)
    }
}

impl From<SymmetricMatrix> for Vec<Vec<f64>> {
    fn from(s: SymmetricMatrix) -> Self {
        s.to_rows()
    }
}

/// First and third quartile with their difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

/// Type-7 (linear interpolation) sample quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(values: &[f64]) -> Result<Quartiles> {
    if values.is_empty() {
        return invalid("quartiles of an empty sample");
    }
    let sorted = sorted_copy(values);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(Quartiles {
        q1,
        q3,
        iqr: q3 - q1,
    })
}

pub(crate) fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> f64 {
    let sorted = sorted_copy(values);
    median_sorted(&sorted)
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median absolute deviation scaled by [`MAD_SCALE`].
pub fn mad(values: &[f64]) -> f64 {
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    MAD_SCALE * median(&dev)
}

/// Sample standard deviation (divisor n − 1).
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Robust scale: MAD, falling back to the standard deviation when the MAD is
/// zero. Returns 0 only for constant input.
pub fn robust_scale(values: &[f64]) -> f64 {
    let s = mad(values);
    if s > 0.0 {
        s
    } else {
        std_dev(values)
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Chi-square CDF via the regularized lower incomplete gamma function.
pub fn chi2_cdf(x: f64, df: u32) -> Result<f64> {
    if df == 0 {
        return invalid("chi-square degrees of freedom must be positive");
    }
    if !(x >= 0.0) {
        return invalid(format!("chi-square argument must be nonnegative, got {x}"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(gamma_lr(0.5 * df as f64, 0.5 * x))
}

fn chi2_pdf(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = 0.5 * df as f64;
    ((k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// Chi-square quantile by safeguarded Newton iteration inside a bisection
/// bracket.
pub fn chi2_quantile(prob: f64, df: u32) -> Result<f64> {
    if df == 0 {
        return invalid("chi-square degrees of freedom must be positive");
    }
    if !(prob > 0.0 && prob < 1.0) {
        return invalid(format!("probability must lie in (0,1), got {prob}"));
    }
    let cdf = |x: f64| gamma_lr(0.5 * df as f64, 0.5 * x);
    let mut lo = 0.0_f64;
    let mut hi = (df as f64).max(1.0);
    while cdf(hi) < prob {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(x) - prob;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = chi2_pdf(x, df);
        let newton = if d > 0.0 { x - f / d } else { f64::NAN };
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi.max(1e-300) || (f.abs() < 1e-15 && (hi - lo) < 1e-12 * x) {
            break;
        }
    }
    Ok(x)
}

/// Consistency factor of the trimmed covariance at fraction `alpha` in
/// dimension `p`: `alpha / F_{p+2}(q_{alpha,p})`.
pub fn consistency_factor(alpha: f64, p: usize) -> Result<f64> {
    if !(0.5..=1.0).contains(&alpha) {
        return invalid(format!("alpha must lie in [0.5, 1], got {alpha}"));
    }
    if p == 0 {
        return invalid("dimension must be positive");
    }
    if alpha == 1.0 {
        return Ok(1.0);
    }
    let q = chi2_quantile(alpha, p as u32)?;
    Ok(alpha / chi2_cdf(q, p as u32 + 2)?)
}

/// Medcouple by exhaustive evaluation of the kernel over all admissible pairs.
pub fn medcouple(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 3 {
        return invalid(format!("medcouple needs at least 3 values, got {n}"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return invalid("medcouple input must be finite");
    }
    let sorted = sorted_copy(values);
    let m = median_sorted(&sorted);
    // upper: x >= m, lower: x <= m
    let upper: Vec<f64> = sorted.iter().copied().filter(|&x| x >= m).collect();
    let lower: Vec<f64> = sorted.iter().copied().filter(|&x| x <= m).collect();
    let ties = sorted.iter().filter(|&&x| x == m).count();

    // indices of the tied values inside `upper` (ascending order puts them first)
    // and inside `lower` (they come last)
    let mut kernel = Vec::with_capacity(upper.len() * lower.len());
    let lower_tie_start = lower.len() - ties;
    for (iu, &xp) in upper.iter().enumerate() {
        for (il, &xm) in lower.iter().enumerate() {
            let h = if xp == m && xm == m {
                let i = iu as i64;
                let j = (il - lower_tie_start) as i64;
                let k = ties as i64 - 1;
                (k - i - j).signum() as f64
            } else {
                ((xp - m) - (m - xm)) / (xp - xm)
            };
            kernel.push(h);
        }
    }
    kernel.sort_by(f64::total_cmp);
    Ok(median_sorted(&kernel).clamp(-1.0, 1.0))
}

/// Upper fence of the skewness-adjusted boxplot.
pub fn adjusted_upper_fence(values: &[f64]) -> Result<f64> {
    if values.len() < 4 {
        return invalid(format!(
            "adjusted fence needs at least 4 values, got {}",
            values.len()
        ));
    }
    let mc = medcouple(values)?;
    let q = quartiles(values)?;
    let expo = if mc >= 0.0 { 3.0 * mc } else { 4.0 * mc };
    Ok(q.q3 + 1.5 * expo.exp() * q.iqr)
}

/// Unbiased sample covariance of the rows of `x`, with the row mean.
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<(DVector<f64>, SymmetricMatrix)> {
    let h = x.nrows();
    if h < 2 {
        return invalid(format!("sample covariance needs at least 2 rows, got {h}"));
    }
    let mean = column_means(x);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (h as f64 - 1.0);
    Ok((mean, SymmetricMatrix::symmetrize(cov)))
}

/// Sample covariance of the selected rows of `x`.
pub fn subset_covariance(
    x: &DMatrix<f64>,
    rows: &[usize],
) -> Result<(DVector<f64>, SymmetricMatrix)> {
    sample_covariance(&select_rows(x, rows))
}

pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)])
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// `λ_max / λ_min`, or `+∞` when `λ_min ≤ 1e-12 · λ_max`.
pub fn condition_number(s: &SymmetricMatrix) -> f64 {
    let (vals, _) = s.eigen_desc();
    condition_from_eigenvalues(vals[0], vals[vals.len() - 1])
}

pub(crate) fn condition_from_eigenvalues(max: f64, min: f64) -> f64 {
    if max <= 0.0 || min <= COND_SINGULAR_TOL * max {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Log-determinant of a positive definite matrix from its Cholesky factor.
pub fn log_det_pd(s: &SymmetricMatrix) -> Result<f64> {
    let l = s.cholesky()?;
    Ok(log_det_from_cholesky(&l))
}

pub(crate) fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    l.diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// Lower Cholesky factor; pivots below `1e-12 · trace / dim` are reported as
/// [`Error::NotPositiveDefinite`].
pub fn cholesky_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let threshold = PD_PIVOT_TOL * (a.trace() / n as f64).abs();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > threshold) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub(crate) fn invert_lower(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for c in 0..n {
        inv[(c, c)] = 1.0 / l[(c, c)];
        for r in (c + 1)..n {
            let mut s = 0.0;
            for k in c..r {
                s -= l[(r, k)] * inv[(k, c)];
            }
            inv[(r, c)] = s / l[(r, r)];
        }
    }
    inv
}

/// Squared Mahalanobis distances of each row of `x` from `center`, given the
/// Cholesky factor of the scatter.
pub(crate) fn squared_distances(
    x: &DMatrix<f64>,
    rows: &[usize],
    center: &DVector<f64>,
    chol: &DMatrix<f64>,
) -> Vec<f64> {
    let p = x.ncols();
    let mut buf = vec![0.0; p];
    rows.iter()
        .map(|&r| {
            // forward substitution L y = x - center
            let mut acc = 0.0;
            for i in 0..p {
                let mut s = x[(r, i)] - center[i];
                for k in 0..i {
                    s -= chol[(i, k)] * buf[k];
                }
                buf[i] = s / chol[(i, i)];
                acc += buf[i] * buf[i];
            }
            acc
        })
        .collect()
}

/// Symmetric eigendecomposition sorted by descending eigenvalue. Each
/// eigenvector's largest-magnitude entry is made positive so the output is
/// deterministic.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        vecs.set_column(dst, &col);
    }
    (vals, vecs)
}

/// Indices of the `h` smallest values; ties go to the lower index. The result
/// is sorted ascending.
pub(crate) fn smallest_indices(values: &[f64], h: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(h).collect();
    chosen.sort_unstable();
    chosen
}
