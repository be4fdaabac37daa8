//! Plain MCD with deterministic starts. Used for the global target matrix and
//! for the per-neighborhood starting subsets.
//!
//! Starting subsets follow the deterministic-MCD recipe on data standardized
//! coordinatewise by median and MAD (`1.4826 · MAD`, standard deviation when
//! the MAD vanishes). Six candidate scatters are built from the standardized
//! rows `z_i`:
//!
//! 1. Pearson correlation of `tanh(z)`;
//! 2. Spearman correlation (average ranks);
//! 3. correlation of normal scores `Φ⁻¹((r − 1/3) / (m + 1/3))`;
//! 4. spatial sign covariance `mean(z zᵀ / ‖z‖²)`;
//! 5. covariance of the `⌈m/2⌉` rows with smallest `‖z‖`;
//! 6. raw orthogonalized Gnanadesikan–Kettenring scatter with MAD scales.
//!
//! Each candidate `S` is made robust to its eigenbasis: with eigenvectors `E`
//! and `B = Z E`, distances are `Σ_l (B_il − med B_l)² / s(B_l)²` where `s` is
//! the MAD scale. The `h` rows with smallest distance form a start. A second
//! start per candidate takes the `⌈m/2⌉` rows with smallest distance and keeps
//! the `h` rows closest to their mean under their covariance. Equal starts are
//! reported once.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::numerics::{
    cholesky_lower, consistency_factor, log_det_from_cholesky, median, normal_quantile,
    robust_scale, smallest_indices, squared_distances, subset_covariance, sym_eigen_desc,
    SymmetricMatrix,
};
use crate::par;

/// Safety bound on C-step iterations per chain.
pub const MAX_CSTEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct McdResult {
    pub mean: DVector<f64>,
    /// Subset covariance multiplied by the consistency factor.
    pub scatter: SymmetricMatrix,
    /// Ascending row indices of the optimal subset.
    pub subset: Vec<usize>,
    /// Log-determinant of the raw (unscaled) subset covariance.
    pub log_det: f64,
}

/// Subset size `⌈alpha · n⌉`.
pub fn subset_size(alpha: f64, n: usize) -> usize {
    let h = (alpha * n as f64 - 1e-9).ceil() as usize;
    h.clamp(1, n)
}

fn standardize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut z = x.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        let v: Vec<f64> = col.iter().copied().collect();
        let s = robust_scale(&v);
        if !(s > 0.0) {
            return Err(Error::ConstantCoordinate(j));
        }
        let m = median(&v);
        col.apply(|e| *e = (*e - m) / s);
    }
    Ok(z)
}

fn correlation(y: &DMatrix<f64>) -> DMatrix<f64> {
    let m = y.nrows() as f64;
    let p = y.ncols();
    let means: Vec<f64> = y.column_iter().map(|c| c.sum() / m).collect();
    let mut cov = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let s: f64 = (0..y.nrows())
                .map(|r| (y[(r, a)] - means[a]) * (y[(r, b)] - means[b]))
                .sum();
            cov[(a, b)] = s;
            cov[(b, a)] = s;
        }
    }
    let sd: Vec<f64> = (0..p).map(|a| cov[(a, a)].sqrt()).collect();
    DMatrix::from_fn(p, p, |a, b| {
        if a == b {
            1.0
        } else if sd[a] > 0.0 && sd[b] > 0.0 {
            cov[(a, b)] / (sd[a] * sd[b])
        } else {
            0.0
        }
    })
}

/// Average ranks (1-based) of each column.
fn column_ranks(z: &DMatrix<f64>) -> DMatrix<f64> {
    let m = z.nrows();
    let mut ranks = DMatrix::zeros(m, z.ncols());
    for (j, col) in z.column_iter().enumerate() {
        let order: Vec<usize> = (0..m)
            .sorted_by(|&a, &b| col[a].total_cmp(&col[b]))
            .collect();
        let mut i = 0;
        while i < m {
            let mut k = i;
            while k + 1 < m && col[order[k + 1]] == col[order[i]] {
                k += 1;
            }
            let avg = (i + k) as f64 / 2.0 + 1.0;
            for &o in &order[i..=k] {
                ranks[(o, j)] = avg;
            }
            i = k + 1;
        }
    }
    ranks
}

fn ogk_raw(z: &DMatrix<f64>) -> DMatrix<f64> {
    let p = z.ncols();
    let col = |j: usize| -> Vec<f64> { z.column(j).iter().copied().collect() };
    let mut u = DMatrix::zeros(p, p);
    for a in 0..p {
        let ca = col(a);
        u[(a, a)] = robust_scale(&ca).powi(2);
        for b in (a + 1)..p {
            let cb = col(b);
            let plus: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x + y).collect();
            let minus: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x - y).collect();
            let v = (robust_scale(&plus).powi(2) - robust_scale(&minus).powi(2)) / 4.0;
            u[(a, b)] = v;
            u[(b, a)] = v;
        }
    }
    let (_, e) = sym_eigen_desc(&u);
    let v = z * &e;
    let lam: Vec<f64> = v
        .column_iter()
        .map(|c| robust_scale(&c.iter().copied().collect::<Vec<_>>()).powi(2))
        .collect();
    &e * DMatrix::from_diagonal(&DVector::from_vec(lam)) * e.transpose()
}

fn candidate_scatters(z: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let (m, p) = z.shape();
    let tanh = z.map(f64::tanh);
    let ranks = column_ranks(z);
    let scores = ranks.map(|r| normal_quantile((r - 1.0 / 3.0) / (m as f64 + 1.0 / 3.0)));

    let mut sign = DMatrix::zeros(p, p);
    for r in 0..m {
        let row = z.row(r);
        let nrm2 = row.norm_squared();
        if nrm2 > 0.0 {
            sign += row.transpose() * row / nrm2;
        }
    }
    sign /= m as f64;

    let norms: Vec<f64> = (0..m).map(|r| z.row(r).norm()).collect();
    let half = smallest_indices(&norms, m.div_ceil(2));
    let bacon = subset_covariance(z, &half)
        .map(|(_, c)| c.into_matrix())
        .unwrap_or_else(|_| DMatrix::identity(p, p));

    vec![
        correlation(&tanh),
        correlation(&ranks),
        correlation(&scores),
        sign,
        bacon,
        ogk_raw(z),
    ]
}

/// Distances of the rows of `z` under the eigenbasis-corrected version of `s`.
fn corrected_distances(z: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<Vec<f64>> {
    let (_, e) = sym_eigen_desc(&SymmetricMatrix::symmetrize(s.clone()));
    let b = z * &e;
    let p = z.ncols();
    let mut centers = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    for c in b.column_iter() {
        let v: Vec<f64> = c.iter().copied().collect();
        centers.push(median(&v));
        scales.push(robust_scale(&v).powi(2));
    }
    let top = scales.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return None;
    }
    let floor = 1e-12 * top;
    for s in scales.iter_mut() {
        *s = s.max(floor);
    }
    Some(
        (0..z.nrows())
            .map(|r| {
                (0..p)
                    .map(|l| (b[(r, l)] - centers[l]).powi(2) / scales[l])
                    .sum()
            })
            .collect(),
    )
}

/// Up to twelve distinct starting subsets (ascending row indices) of size `h`:
/// the `h` rows nearest each robust candidate, then the `h` rows nearest the
/// mean and covariance of each candidate's closest half.
pub fn deterministic_starts(x: &DMatrix<f64>, h: usize) -> Result<Vec<Vec<usize>>> {
    let (m, p) = x.shape();
    if m < p + 2 {
        return invalid(format!(
            "deterministic starts need m >= p + 2 (m = {m}, p = {p})"
        ));
    }
    if !(2 * h > m && h <= m) {
        return invalid(format!("subset size {h} must lie in (m/2, m] for m = {m}"));
    }
    let z = standardize(x)?;
    let mut starts: Vec<Vec<usize>> = Vec::with_capacity(12);
    let mut refined: Vec<Vec<usize>> = Vec::with_capacity(6);
    let all: Vec<usize> = (0..m).collect();
    for s in candidate_scatters(&z) {
        let Some(d) = corrected_distances(&z, &s) else {
            continue;
        };
        let subset = smallest_indices(&d, h);
        if !starts.contains(&subset) {
            starts.push(subset);
        }
        let half = smallest_indices(&d, m.div_ceil(2));
        let (mean, cov) = subset_covariance(&z, &half)?;
        if let Ok(chol) = cholesky_lower(&cov) {
            let dd = squared_distances(&z, &all, &mean, &chol);
            refined.push(smallest_indices(&dd, h));
        }
    }
    for subset in refined {
        if !starts.contains(&subset) {
            starts.push(subset);
        }
    }
    if starts.is_empty() {
        starts.push((0..m).collect());
    }
    Ok(starts)
}

/// One concentration step: the `h` rows of `x` closest to the subset's mean
/// under the subset's covariance.
pub fn cstep_plain(x: &DMatrix<f64>, subset: &[usize]) -> Result<Vec<usize>> {
    let h = subset.len();
    if h < x.ncols() + 1 {
        return invalid(format!("subset size {h} must be at least p + 1"));
    }
    let (mean, cov) = subset_covariance(x, subset)?;
    let chol = cholesky_lower(&cov).map_err(|_| Error::SingularSubset)?;
    let all: Vec<usize> = (0..x.nrows()).collect();
    let d = squared_distances(x, &all, &mean, &chol);
    Ok(smallest_indices(&d, h))
}

/// Log-determinant of the subset covariance, or `SingularSubset`.
pub fn subset_log_det(x: &DMatrix<f64>, subset: &[usize]) -> Result<f64> {
    let (_, cov) = subset_covariance(x, subset)?;
    let chol = cholesky_lower(&cov).map_err(|_| Error::SingularSubset)?;
    Ok(log_det_from_cholesky(&chol))
}

/// A converged C-step chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub subset: Vec<usize>,
    pub log_det: f64,
    /// Log-determinant after each step, starting with the initial subset.
    pub trace: Vec<f64>,
}

/// Iterates [`cstep_plain`] until the subset repeats or [`MAX_CSTEPS`] steps.
pub fn concentrate(x: &DMatrix<f64>, start: &[usize]) -> Result<Chain> {
    let mut subset = start.to_vec();
    subset.sort_unstable();
    let mut trace = vec![subset_log_det(x, &subset)?];
    for _ in 0..MAX_CSTEPS {
        let next = cstep_plain(x, &subset)?;
        if next == subset {
            break;
        }
        subset = next;
        trace.push(subset_log_det(x, &subset)?);
    }
    Ok(Chain {
        log_det: *trace.last().expect("nonempty trace"),
        subset,
        trace,
    })
}

/// MCD location and consistency-scaled scatter at subset fraction `alpha`.
pub fn mcd_estimate(x: &DMatrix<f64>, alpha: f64) -> Result<McdResult> {
    mcd_estimate_with(x, alpha, true)
}

pub fn mcd_estimate_with(x: &DMatrix<f64>, alpha: f64, parallel: bool) -> Result<McdResult> {
    let (n, p) = x.shape();
    if n <= 2 * p {
        return invalid(format!("MCD needs n > 2p (n = {n}, p = {p})"));
    }
    let factor = consistency_factor(alpha, p)?;
    let h = subset_size(alpha, n);
    let starts = if h == n {
        vec![(0..n).collect()]
    } else {
        deterministic_starts(x, h)?
    };
    let chains = par::map_slice(&starts, parallel, |s| concentrate(x, s));
    let best = chains
        .into_iter()
        .filter_map(|c| c.ok())
        .reduce(|a, b| if b.log_det < a.log_det { b } else { a })
        .ok_or(Error::AllStartsSingular)?;
    finish(x, best.subset, best.log_det, factor)
}

fn finish(x: &DMatrix<f64>, subset: Vec<usize>, log_det: f64, factor: f64) -> Result<McdResult> {
    let (mean, cov) = subset_covariance(x, &subset)?;
    Ok(McdResult {
        mean,
        scatter: SymmetricMatrix::symmetrize(cov.into_matrix() * factor),
        subset,
        log_det,
    })
}

/// Exact MCD by enumerating every subset of size `⌈alpha · n⌉`. Reference
/// oracle for small problems.
pub fn mcd_exhaustive(x: &DMatrix<f64>, alpha: f64) -> Result<McdResult> {
    let (n, p) = x.shape();
    let h = subset_size(alpha, n);
    let count = binomial(n, h);
    if count > 1e6 {
        return Err(Error::CombinatorialGuard(count));
    }
    let factor = consistency_factor(alpha, p)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for subset in (0..n).combinations(h) {
        if let Ok(ld) = subset_log_det(x, &subset) {
            if best.as_ref().is_none_or(|(_, b)| ld < *b) {
                best = Some((subset, ld));
            }
        }
    }
    let (subset, ld) = best.ok_or(Error::AllStartsSingular)?;
    finish(x, subset, ld, factor)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
