//! Spatially smoothed MRCD: per-neighborhood regularized scatter matrices
//! `K_i = rho_i T + (1 - rho_i) c_alpha Cov(X_{H_i})`, coupled through the
//! smoothed matrices `(1 - lambda) K_i + lambda sum_j w_ij K_j`, with subsets
//! chosen to minimize the sum of smoothed determinants.
//!
//! All optimization happens in the basis where the target is the identity
//! (`z = Λ^{-1/2} Qᵀ x` for `T = Q Λ Qᵀ`); results are mapped back at the end.

use std::collections::HashSet;

use itertools::Itertools;
use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::mcd::{self, binomial, subset_size};
use crate::numerics::{
    cholesky_lower, condition_from_eigenvalues, consistency_factor, log_det_from_cholesky, median,
    robust_scale, select_rows, smallest_indices, squared_distances, subset_covariance,
    SymmetricMatrix,
};
use crate::par;
use crate::spatial::{Dataset, NeighborhoodStructure, WeightMatrix};

/// Largest log-determinant accepted when exponentiating objective terms.
pub const MAX_LOG_DET: f64 = 700.0;
/// Upper bound on the number of combinations [`ssmrcd_exhaustive`] visits.
pub const EXHAUSTIVE_GUARD: f64 = 1e6;
/// Starts whose rho is at most this value are preferred by [`select_rho`].
pub const RHO_PREFERRED: f64 = 0.1;

/// Estimator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SsMrcdConfig {
    /// Smoothing degree in `[0, 1)`.
    pub lambda: f64,
    /// Subset fraction in `[0.5, 1]`; `h_i = ⌈alpha n_i⌉`.
    pub alpha: f64,
    pub weights: WeightMatrix,
    pub max_cond: f64,
    /// Ascending candidate regularization values in `(0, 1)`.
    pub rho_grid: Vec<f64>,
    /// Cap on starting combinations; `None` means `6 N`.
    pub max_starts: Option<usize>,
    pub max_iter: usize,
    pub seed: u64,
    /// Bypasses data-driven rho selection with one value per neighborhood.
    pub fixed_rho: Option<Vec<f64>>,
    /// Records per-neighborhood determinant sub-steps in the chain traces.
    pub instrument: bool,
    /// Run independent work on the rayon pool when the feature is enabled.
    pub parallel: bool,
}

impl SsMrcdConfig {
    pub fn new(weights: WeightMatrix) -> Self {
        SsMrcdConfig {
            lambda: 0.5,
            alpha: 0.75,
            weights,
            max_cond: 50.0,
            rho_grid: default_rho_grid(),
            max_starts: None,
            max_iter: 100,
            seed: 0,
            fixed_rho: None,
            instrument: false,
            parallel: true,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, neighborhoods: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda) {
            return invalid(format!("lambda must lie in [0, 1), got {}", self.lambda));
        }
        if !(0.5..=1.0).contains(&self.alpha) {
            return invalid(format!("alpha must lie in [0.5, 1], got {}", self.alpha));
        }
        if self.weights.len() != neighborhoods {
            return Err(Error::DimensionMismatch {
                expected: neighborhoods,
                got: self.weights.len(),
            });
        }
        if !(self.max_cond > 1.0) {
            return invalid("max_cond must exceed 1");
        }
        if self.rho_grid.is_empty()
            || self.rho_grid.iter().any(|&r| !(r > 0.0 && r < 1.0))
            || self.rho_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return invalid("rho_grid must be ascending values inside (0, 1)");
        }
        if self.max_iter == 0 || self.max_starts == Some(0) {
            return invalid("max_iter and max_starts must be positive");
        }
        if let Some(rho) = &self.fixed_rho {
            if rho.len() != neighborhoods || rho.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
                return invalid("fixed_rho needs one value in (0, 1] per neighborhood");
            }
        }
        Ok(())
    }
}

/// `{0.01, 0.02, …, 0.99}`.
pub fn default_rho_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

/// Global target matrix with its eigendecomposition `T = Q Λ Qᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub mean: DVector<f64>,
    pub scatter: SymmetricMatrix,
    /// Descending eigenvalues `Λ`.
    pub eigenvalues: DVector<f64>,
    /// Eigenvectors `Q` as columns.
    pub eigenvectors: DMatrix<f64>,
    /// False when the diagonal MAD fallback replaced the MCD.
    pub from_mcd: bool,
}

impl Target {
    pub fn from_scatter(
        mean: DVector<f64>,
        scatter: SymmetricMatrix,
        from_mcd: bool,
    ) -> Result<Self> {
        let (vals, vecs) = scatter.eigen_desc();
        let min = vals[vals.len() - 1];
        if !(min > 0.0) || condition_from_eigenvalues(vals[0], min).is_infinite() {
            return Err(Error::NotPositiveDefinite {
                index: vals.len() - 1,
                pivot: min,
            });
        }
        Ok(Target {
            mean,
            scatter,
            eigenvalues: vals,
            eigenvectors: vecs,
            from_mcd,
        })
    }

    /// `Q Λ^{1/2} K Λ^{1/2} Qᵀ`.
    pub fn back_transform(&self, k: &SymmetricMatrix) -> SymmetricMatrix {
        let half = self.sqrt_factor();
        SymmetricMatrix::symmetrize(&half * k.as_matrix() * half.transpose())
    }

    /// `Q Λ^{1/2}`.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        let sq = self.eigenvalues.map(f64::sqrt);
        &self.eigenvectors * DMatrix::from_diagonal(&sq)
    }
}

/// Rows `z_i = Λ^{-1/2} Qᵀ x_i` for the eigendecomposition `T = Q Λ Qᵀ`.
pub fn transform_to_target_basis(
    x: &DMatrix<f64>,
    t: &SymmetricMatrix,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    if x.ncols() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            got: x.ncols(),
        });
    }
    t.cholesky()?;
    let (vals, q) = t.eigen_desc();
    let inv_sqrt = vals.map(|v| 1.0 / v.sqrt());
    let z = x * &q * DMatrix::from_diagonal(&inv_sqrt);
    Ok((z, q, vals))
}

/// Outcome of the data-driven regularization choice for one neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoSelection {
    pub rho: f64,
    /// Indices (into the start list) of the starts kept for the search.
    pub retained: Vec<usize>,
    /// Smallest admissible grid value per start.
    pub start_rhos: Vec<f64>,
    /// True when no grid value met `max_cond` for some start.
    pub grid_exhausted: bool,
}

/// Picks `rho_i` for one neighborhood from its starting subsets (rows of
/// `z`). Each start gets the smallest grid value whose regularized matrix
/// has condition number at most `max_cond`.
pub fn select_rho(
    z: &DMatrix<f64>,
    starts: &[Vec<usize>],
    alpha: f64,
    max_cond: f64,
    rho_grid: &[f64],
) -> Result<RhoSelection> {
    if starts.is_empty() {
        return invalid("rho selection needs at least one start");
    }
    if rho_grid.is_empty() {
        return invalid("empty rho grid");
    }
    let c_alpha = consistency_factor(alpha, z.ncols())?;
    let mut exhausted = false;
    let mut start_rhos = Vec::with_capacity(starts.len());
    for s in starts {
        let (_, cov) = subset_covariance(z, s)?;
        let (vals, _) = cov.eigen_desc();
        let (emax, emin) = (vals[0].max(0.0), vals[vals.len() - 1].max(0.0));
        let found = rho_grid.iter().copied().find(|&rho| {
            let hi = rho + (1.0 - rho) * c_alpha * emax;
            let lo = rho + (1.0 - rho) * c_alpha * emin;
            condition_from_eigenvalues(hi, lo) <= max_cond
        });
        start_rhos.push(found.unwrap_or_else(|| {
            exhausted = true;
            *rho_grid.last().expect("nonempty grid")
        }));
    }
    if exhausted {
        warn!("rho grid exhausted before reaching condition number {max_cond}");
    }
    let preferred: Vec<usize> = (0..starts.len())
        .filter(|&k| start_rhos[k] <= RHO_PREFERRED)
        .collect();
    let (rho, retained) = if !preferred.is_empty() {
        let rho = preferred
            .iter()
            .map(|&k| start_rhos[k])
            .fold(f64::MIN, f64::max);
        (rho, preferred)
    } else {
        let rho = RHO_PREFERRED.max(median(&start_rhos));
        let kept = (0..starts.len())
            .filter(|&k| start_rhos[k] <= rho)
            .collect();
        (rho, kept)
    };
    Ok(RhoSelection {
        rho,
        retained,
        start_rhos,
        grid_exhausted: exhausted,
    })
}

/// `rho I + (1 - rho) c_alpha Cov(z_h)` for subset data `z_h` in target basis.
pub fn k_matrix(z_h: &DMatrix<f64>, rho: f64, alpha: f64) -> Result<SymmetricMatrix> {
    if z_h.nrows() < 2 {
        return invalid("K matrix needs at least 2 observations");
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return invalid(format!("rho must lie in (0, 1], got {rho}"));
    }
    let c_alpha = consistency_factor(alpha, z_h.ncols())?;
    let (_, cov) = crate::numerics::sample_covariance(z_h)?;
    Ok(regularize(&cov, rho, c_alpha))
}

fn regularize(cov: &SymmetricMatrix, rho: f64, c_alpha: f64) -> SymmetricMatrix {
    let p = cov.dim();
    SymmetricMatrix::symmetrize(
        DMatrix::identity(p, p) * rho + cov.as_matrix() * ((1.0 - rho) * c_alpha),
    )
}

/// `(1 - lambda) K_i + lambda sum_{j != i} w_ij K_j`.
pub fn smoothed_covariance(
    i: usize,
    ks: &[SymmetricMatrix],
    weights: &WeightMatrix,
    lambda: f64,
) -> SymmetricMatrix {
    let mut acc = ks[i].as_matrix() * (1.0 - lambda);
    if lambda != 0.0 {
        for (j, k) in ks.iter().enumerate() {
            let w = weights.get(i, j);
            if j != i && w != 0.0 {
                acc += k.as_matrix() * (lambda * w);
            }
        }
    }
    SymmetricMatrix::symmetrize(acc)
}

fn smoothed_log_det(
    i: usize,
    ks: &[SymmetricMatrix],
    weights: &WeightMatrix,
    lambda: f64,
) -> Result<(f64, DMatrix<f64>)> {
    let s = smoothed_covariance(i, ks, weights, lambda);
    let chol = cholesky_lower(&s).map_err(|_| Error::NeighborhoodNotPd(i))?;
    Ok((log_det_from_cholesky(&chol), chol))
}

fn det_from_log(ld: f64) -> Result<f64> {
    if ld > MAX_LOG_DET {
        return Err(Error::DeterminantOverflow(ld));
    }
    Ok(ld.exp())
}

/// Sum of the determinants of all smoothed matrices.
pub fn objective(ks: &[SymmetricMatrix], weights: &WeightMatrix, lambda: f64) -> Result<f64> {
    (0..ks.len())
        .map(|i| smoothed_log_det(i, ks, weights, lambda).and_then(|(ld, _)| det_from_log(ld)))
        .sum()
}

/// Generalized C-step for neighborhood `i`: the `h` members of `members`
/// closest to `mean` under the current smoothed matrix of `i`.
#[allow(clippy::too_many_arguments)]
pub fn cstep_neighborhood(
    z: &DMatrix<f64>,
    members: &[usize],
    h: usize,
    mean: &DVector<f64>,
    i: usize,
    ks: &[SymmetricMatrix],
    weights: &WeightMatrix,
    lambda: f64,
) -> Result<Vec<usize>> {
    if h > members.len() {
        return invalid("subset larger than its neighborhood");
    }
    let (_, chol) = smoothed_log_det(i, ks, weights, lambda)?;
    Ok(select_closest(z, members, h, mean, &chol))
}

fn select_closest(
    z: &DMatrix<f64>,
    members: &[usize],
    h: usize,
    mean: &DVector<f64>,
    chol: &DMatrix<f64>,
) -> Vec<usize> {
    let d = squared_distances(z, members, mean, chol);
    smallest_indices(&d, h)
        .into_iter()
        .map(|k| members[k])
        .collect()
}

/// `[(x - y)ᵀ Σ⁻¹ (x - y)]^{1/2}`.
pub fn mahalanobis_pair(x: &[f64], y: &[f64], sigma_inv: &SymmetricMatrix) -> Result<f64> {
    let p = sigma_inv.dim();
    if x.len() != p || y.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: if x.len() != p { x.len() } else { y.len() },
        });
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mut q = 0.0;
    for r in 0..p {
        let mut s = 0.0;
        for c in 0..p {
            s += sigma_inv[(r, c)] * d[c];
        }
        q += d[r] * s;
    }
    Ok(q.max(0.0).sqrt())
}

/// Fitted estimates for one neighborhood (original basis unless noted).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodFit {
    pub members: Vec<usize>,
    /// Ascending observation indices of the optimal subset.
    pub subset: Vec<usize>,
    pub rho: f64,
    pub mean: DVector<f64>,
    pub k: SymmetricMatrix,
    pub sigma: SymmetricMatrix,
    pub sigma_inv: SymmetricMatrix,
    /// Retained starting subsets (observation indices).
    pub starts: Vec<Vec<usize>>,
}

/// How a C-step chain ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Converged,
    /// Revisited an earlier subset combination.
    Cycled,
    MaxIter,
}

/// Determinant of the smoothed matrix of one neighborhood before and after
/// its C-step, with every other `K_j` frozen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Substep {
    pub sweep: usize,
    pub neighborhood: usize,
    pub log_det_before: f64,
    pub log_det_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    /// Start index (into each neighborhood's retained starts).
    pub start: Vec<usize>,
    /// Objective of each visited combination, initial one first.
    pub objectives: Vec<f64>,
    pub status: ChainStatus,
    /// Objective of the combination the chain reports.
    pub final_objective: f64,
    pub substeps: Vec<Substep>,
}

/// Fitted spatially smoothed MRCD.
#[derive(Debug, Clone, PartialEq)]
pub struct SsMrcdModel {
    pub lambda: f64,
    pub alpha: f64,
    pub weights: WeightMatrix,
    pub target: Target,
    /// Neighborhood index per observation.
    pub assignment: Vec<usize>,
    pub neighborhoods: Vec<NeighborhoodFit>,
    /// Objective value in the target basis.
    pub objective: f64,
    pub traces: Vec<ChainTrace>,
    pub best_chain: usize,
    /// Fraction of nonincreasing objective transitions over all chains.
    pub monotone_fraction: f64,
    pub converged: bool,
}

impl SsMrcdModel {
    pub fn sigmas(&self) -> Vec<&SymmetricMatrix> {
        self.neighborhoods.iter().map(|n| &n.sigma).collect()
    }
}

/// State shared by the heuristic and the exhaustive search.
struct Prepared {
    target: Target,
    z: DMatrix<f64>,
    c_alpha: f64,
    h: Vec<usize>,
    rho: Vec<f64>,
    /// Retained starts per neighborhood, as observation indices.
    starts: Vec<Vec<Vec<usize>>>,
}

fn build_target(x: &DMatrix<f64>, alpha: f64, parallel: bool) -> Result<Target> {
    let (n, p) = x.shape();
    let mcd = if n > 2 * p {
        mcd::mcd_estimate_with(x, alpha, parallel)
    } else {
        invalid("n <= 2p")
    };
    if let Ok(fit) = mcd.and_then(|f| {
        let t = Target::from_scatter(f.mean.clone(), f.scatter.clone(), true);
        t.map(|t| (f, t))
    }) {
        return Ok(fit.1);
    }
    warn!("MCD target unavailable; falling back to a diagonal MAD target (no affine equivariance)");
    let mut scales = Vec::with_capacity(p);
    let mut centers = Vec::with_capacity(p);
    for (j, col) in x.column_iter().enumerate() {
        let v: Vec<f64> = col.iter().copied().collect();
        let s = robust_scale(&v);
        if !(s > 0.0) {
            return Err(Error::ConstantCoordinate(j));
        }
        scales.push(s * s);
        centers.push(median(&v));
    }
    Target::from_scatter(
        DVector::from_vec(centers),
        SymmetricMatrix::from_diagonal(&scales),
        false,
    )
}

fn prepare(
    data: &Dataset,
    structure: &NeighborhoodStructure,
    config: &SsMrcdConfig,
) -> Result<Prepared> {
    let (n, p) = data.x.shape();
    if structure.assignment.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: structure.assignment.len(),
        });
    }
    config.validate(structure.len())?;
    let required = p + 2;
    for (i, m) in structure.members.iter().enumerate() {
        if m.len() < required {
            return Err(Error::NeighborhoodTooSmall {
                index: i,
                size: m.len(),
                required,
            });
        }
    }
    let target = build_target(&data.x, config.alpha, config.parallel)?;
    let (z, _, _) = transform_to_target_basis(&data.x, &target.scatter)?;
    let c_alpha = consistency_factor(config.alpha, p)?;
    let h: Vec<usize> = structure
        .members
        .iter()
        .map(|m| subset_size(config.alpha, m.len()).max(2))
        .collect();

    let per_hood = par::map_range(structure.len(), config.parallel, |i| -> Result<_> {
        let members = &structure.members[i];
        let local = select_rows(&z, members);
        let starts = if h[i] == members.len() {
            vec![(0..members.len()).collect()]
        } else {
            mcd::deterministic_starts(&local, h[i])?
        };
        let (rho, retained) = match &config.fixed_rho {
            Some(fixed) => (fixed[i], (0..starts.len()).collect()),
            None => {
                let sel = select_rho(
                    &local,
                    &starts,
                    config.alpha,
                    config.max_cond,
                    &config.rho_grid,
                )?;
                (sel.rho, sel.retained)
            }
        };
        let global: Vec<Vec<usize>> = retained
            .into_iter()
            .map(|k| starts[k].iter().map(|&l| members[l]).collect())
            .collect();
        Ok((rho, global))
    });
    let mut rho = Vec::with_capacity(structure.len());
    let mut starts = Vec::with_capacity(structure.len());
    for r in per_hood {
        let (r, s) = r?;
        rho.push(r);
        starts.push(s);
    }
    Ok(Prepared {
        target,
        z,
        c_alpha,
        h,
        rho,
        starts,
    })
}

impl Prepared {
    fn k_and_mean(&self, i: usize, subset: &[usize]) -> Result<(SymmetricMatrix, DVector<f64>)> {
        let (mean, cov) = subset_covariance(&self.z, subset)?;
        Ok((regularize(&cov, self.rho[i], self.c_alpha), mean))
    }

    fn ks_and_means(
        &self,
        subsets: &[Vec<usize>],
    ) -> Result<(Vec<SymmetricMatrix>, Vec<DVector<f64>>)> {
        let mut ks = Vec::with_capacity(subsets.len());
        let mut means = Vec::with_capacity(subsets.len());
        for (i, s) in subsets.iter().enumerate() {
            let (k, m) = self.k_and_mean(i, s)?;
            ks.push(k);
            means.push(m);
        }
        Ok((ks, means))
    }

    fn run_chain(
        &self,
        structure: &NeighborhoodStructure,
        config: &SsMrcdConfig,
        start: &[usize],
    ) -> Result<(Vec<Vec<usize>>, ChainTrace)> {
        let w = &config.weights;
        let lambda = config.lambda;
        let mut state: Vec<Vec<usize>> = start
            .iter()
            .enumerate()
            .map(|(i, &k)| self.starts[i][k].clone())
            .collect();
        let (mut ks, mut means) = self.ks_and_means(&state)?;
        let mut obj = objective(&ks, w, lambda)?;
        let mut objectives = vec![obj];
        let mut best = (obj, state.clone());
        let mut visited: HashSet<Vec<Vec<usize>>> = HashSet::new();
        visited.insert(state.clone());
        let mut substeps = Vec::new();
        let mut status = ChainStatus::MaxIter;

        for sweep in 0..config.max_iter {
            let mut next = Vec::with_capacity(state.len());
            for (i, members) in structure.members.iter().enumerate() {
                let (ld_before, chol) = smoothed_log_det(i, &ks, w, lambda)?;
                let h_new = select_closest(&self.z, members, self.h[i], &means[i], &chol);
                if config.instrument {
                    let mut frozen = ks.clone();
                    frozen[i] = self.k_and_mean(i, &h_new)?.0;
                    let (ld_after, _) = smoothed_log_det(i, &frozen, w, lambda)?;
                    substeps.push(Substep {
                        sweep,
                        neighborhood: i,
                        log_det_before: ld_before,
                        log_det_after: ld_after,
                    });
                }
                next.push(h_new);
            }
            (ks, means) = self.ks_and_means(&next)?;
            obj = objective(&ks, w, lambda)?;
            objectives.push(obj);
            if next == state {
                status = ChainStatus::Converged;
                best = (obj, next);
                break;
            }
            if obj < best.0 {
                best = (obj, next.clone());
            }
            if !visited.insert(next.clone()) {
                status = ChainStatus::Cycled;
                break;
            }
            state = next;
        }
        Ok((
            best.1,
            ChainTrace {
                start: start.to_vec(),
                objectives,
                status,
                final_objective: best.0,
                substeps,
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        self,
        data: &Dataset,
        structure: &NeighborhoodStructure,
        config: &SsMrcdConfig,
        subsets: Vec<Vec<usize>>,
        objective_value: f64,
        traces: Vec<ChainTrace>,
        best_chain: usize,
    ) -> Result<SsMrcdModel> {
        let (kz, _) = self.ks_and_means(&subsets)?;
        let ks: Vec<SymmetricMatrix> = kz.iter().map(|k| self.target.back_transform(k)).collect();
        let mut neighborhoods = Vec::with_capacity(ks.len());
        for (i, subset) in subsets.into_iter().enumerate() {
            let sigma = smoothed_covariance(i, &ks, &config.weights, config.lambda);
            let sigma_inv = sigma
                .inverse_pd()
                .map_err(|_| Error::NeighborhoodNotPd(i))?;
            let (mean, _) = subset_covariance(&data.x, &subset)?;
            neighborhoods.push(NeighborhoodFit {
                members: structure.members[i].clone(),
                subset,
                rho: self.rho[i],
                mean,
                k: ks[i].clone(),
                sigma,
                sigma_inv,
                starts: self.starts[i].clone(),
            });
        }
        let (mut up, mut total) = (0usize, 0usize);
        for t in &traces {
            for w in t.objectives.windows(2) {
                total += 1;
                if w[1] <= w[0] * (1.0 + 1e-12) {
                    up += 1;
                }
            }
        }
        let converged = traces
            .get(best_chain)
            .is_none_or(|t| t.status == ChainStatus::Converged);
        Ok(SsMrcdModel {
            lambda: config.lambda,
            alpha: config.alpha,
            weights: config.weights.clone(),
            target: self.target,
            assignment: structure.assignment.clone(),
            neighborhoods,
            objective: objective_value,
            traces,
            best_chain,
            monotone_fraction: if total == 0 {
                1.0
            } else {
                up as f64 / total as f64
            },
            converged,
        })
    }
}

/// Starting combinations: all of them when their count is within the cap,
/// otherwise a seeded uniform sample without replacement.
fn start_combinations(counts: &[usize], max_starts: usize, seed: u64) -> Vec<Vec<usize>> {
    let total = counts.iter().fold(1.0_f64, |acc, &c| acc * c as f64);
    if total <= max_starts as f64 {
        return counts
            .iter()
            .map(|&c| 0..c)
            .multi_cartesian_product()
            .collect::<Vec<_>>()
            .into_iter()
            .chain(if counts.is_empty() {
                vec![vec![]]
            } else {
                vec![]
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(max_starts);
    let mut out = Vec::with_capacity(max_starts);
    while out.len() < max_starts {
        let combo: Vec<usize> = counts.iter().map(|&c| rng.random_range(0..c)).collect();
        if seen.insert(combo.clone()) {
            out.push(combo);
        }
    }
    out
}

/// Fits the estimator with deterministic starts and generalized C-steps.
pub fn ssmrcd_fit(
    data: &Dataset,
    structure: &NeighborhoodStructure,
    config: &SsMrcdConfig,
) -> Result<SsMrcdModel> {
    let prep = prepare(data, structure, config)?;
    let counts: Vec<usize> = prep.starts.iter().map(Vec::len).collect();
    let cap = config.max_starts.unwrap_or(6 * structure.len());
    let combos = start_combinations(&counts, cap, config.seed);

    let chains = par::map_slice(&combos, config.parallel, |c| {
        prep.run_chain(structure, config, c)
    });
    let mut results = Vec::with_capacity(chains.len());
    for c in chains {
        results.push(c?);
    }
    let best_chain = (0..results.len())
        .min_by(|&a, &b| {
            results[a]
                .1
                .final_objective
                .total_cmp(&results[b].1.final_objective)
                .then(a.cmp(&b))
        })
        .expect("at least one start combination");
    let objective_value = results[best_chain].1.final_objective;
    let subsets = results[best_chain].0.clone();
    if results[best_chain].1.status != ChainStatus::Converged {
        warn!(
            "best C-step chain did not converge ({:?})",
            results[best_chain].1.status
        );
    }
    let traces = results.into_iter().map(|(_, t)| t).collect();
    prep.assemble(
        data,
        structure,
        config,
        subsets,
        objective_value,
        traces,
        best_chain,
    )
}

/// Number of subset combinations `prod_i C(n_i, h_i)`.
pub fn combination_count(structure: &NeighborhoodStructure, alpha: f64) -> f64 {
    structure
        .members
        .iter()
        .map(|m| binomial(m.len(), subset_size(alpha, m.len()).max(2)))
        .product()
}

/// Exact minimizer by enumerating every subset combination. Uses the same
/// target and rho values as [`ssmrcd_fit`].
pub fn ssmrcd_exhaustive(
    data: &Dataset,
    structure: &NeighborhoodStructure,
    config: &SsMrcdConfig,
) -> Result<SsMrcdModel> {
    let total = combination_count(structure, config.alpha);
    if total > EXHAUSTIVE_GUARD {
        return Err(Error::CombinatorialGuard(total));
    }
    let prep = prepare(data, structure, config)?;
    let mut candidates: Vec<Vec<(Vec<usize>, SymmetricMatrix)>> = Vec::new();
    for (i, members) in structure.members.iter().enumerate() {
        let mut list = Vec::new();
        for s in members.iter().copied().combinations(prep.h[i]) {
            let (k, _) = prep.k_and_mean(i, &s)?;
            list.push((s, k));
        }
        candidates.push(list);
    }
    let counts: Vec<usize> = candidates.iter().map(Vec::len).collect();
    let w = &config.weights;
    let lambda = config.lambda;

    // split on the first neighborhood for parallelism; results reduce in order
    let partial = par::map_range(
        counts[0],
        config.parallel,
        |first| -> Result<Option<(f64, Vec<usize>)>> {
            let mut best: Option<(f64, Vec<usize>)> = None;
            let rest: Vec<std::ops::Range<usize>> = counts[1..].iter().map(|&c| 0..c).collect();
            let tails: Box<dyn Iterator<Item = Vec<usize>>> = if rest.is_empty() {
                Box::new(std::iter::once(Vec::new()))
            } else {
                Box::new(rest.into_iter().multi_cartesian_product())
            };
            let mut ks: Vec<SymmetricMatrix> = candidates.iter().map(|c| c[0].1.clone()).collect();
            for tail in tails {
                let mut combo = Vec::with_capacity(counts.len());
                combo.push(first);
                combo.extend(tail);
                for (i, &c) in combo.iter().enumerate() {
                    ks[i] = candidates[i][c].1.clone();
                }
                let obj = objective(&ks, w, lambda)?;
                if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    best = Some((obj, combo));
                }
            }
            Ok(best)
        },
    );
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in partial {
        if let Some((obj, combo)) = p? {
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, combo));
            }
        }
    }
    let (obj, combo) = best.expect("at least one combination");
    let subsets = combo
        .iter()
        .enumerate()
        .map(|(i, &c)| candidates[i][c].0.clone())
        .collect();
    prep.assemble(data, structure, config, subsets, obj, Vec::new(), 0)
}
