//! Local outlier detection from next distances: the smallest pairwise
//! Mahalanobis distance between an observation and its spatial nearest
//! neighbors, measured under the observation's neighborhood covariance.

use crate::error::{invalid, Error, Result};
use crate::numerics::adjusted_upper_fence;
use crate::par;
use crate::spatial::{spatial_knn, Dataset};
use crate::ssmrcd::{mahalanobis_pair, SsMrcdModel};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    pub ids: Vec<String>,
    pub next_distance: Vec<f64>,
    pub neighborhood: Vec<usize>,
    /// Index of the neighbor attaining the next distance.
    pub nearest: Vec<usize>,
    pub nearest_id: Vec<String>,
    pub cutoff: f64,
    pub flags: Vec<bool>,
    pub ratio: Vec<f64>,
}

impl OutlierReport {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Indices of flagged observations, ascending.
    pub fn outliers(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.flags[i]).collect()
    }
}

/// Next distance of observation `i` over `neighbors`, with the index of the
/// closest neighbor (lowest index on ties).
pub fn next_distance(
    data: &Dataset,
    model: &SsMrcdModel,
    i: usize,
    neighbors: &[usize],
) -> Result<(f64, usize)> {
    if neighbors.is_empty() {
        return invalid(format!("observation {i} has no neighbors"));
    }
    let n = data.n();
    if i >= n || model.assignment.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: model.assignment.len(),
        });
    }
    let inv = &model.neighborhoods[model.assignment[i]].sigma_inv;
    let xi: Vec<f64> = data.x.row(i).iter().copied().collect();
    let mut best = (f64::INFINITY, usize::MAX);
    for &j in neighbors {
        if j == i || j >= n {
            return invalid(format!("invalid neighbor {j} for observation {i}"));
        }
        let xj: Vec<f64> = data.x.row(j).iter().copied().collect();
        let d = mahalanobis_pair(&xi, &xj, inv)?;
        if d < best.0 || (d == best.0 && j < best.1) {
            best = (d, j);
        }
    }
    Ok(best)
}

pub fn detect_outliers(data: &Dataset, model: &SsMrcdModel, k: usize) -> Result<OutlierReport> {
    detect_outliers_with(data, model, k, true)
}

/// Flags observations whose next distance exceeds the adjusted-boxplot upper
/// fence of all next distances.
pub fn detect_outliers_with(
    data: &Dataset,
    model: &SsMrcdModel,
    k: usize,
    parallel: bool,
) -> Result<OutlierReport> {
    let n = data.n();
    if n < 4 {
        return invalid("detection needs at least 4 observations");
    }
    let knn = spatial_knn(&data.coords, k, parallel)?;
    report_from_neighbors(data, model, &knn, parallel)
}

/// Same as [`detect_outliers_with`] with precomputed neighbor lists.
pub fn report_from_neighbors(
    data: &Dataset,
    model: &SsMrcdModel,
    knn: &[Vec<usize>],
    parallel: bool,
) -> Result<OutlierReport> {
    let n = data.n();
    if knn.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: knn.len(),
        });
    }
    let pairs = par::map_range(n, parallel, |i| next_distance(data, model, i, &knn[i]));
    let mut dist = Vec::with_capacity(n);
    let mut nearest = Vec::with_capacity(n);
    for r in pairs {
        let (d, j) = r?;
        dist.push(d);
        nearest.push(j);
    }
    let cutoff = adjusted_upper_fence(&dist)?;
    let flags: Vec<bool> = dist.iter().map(|&d| d > cutoff).collect();
    let ratio = dist
        .iter()
        .map(|&d| {
            if d == 0.0 {
                0.0
            } else {
                d / cutoff.max(f64::MIN_POSITIVE)
            }
        })
        .collect();
    Ok(OutlierReport {
        ids: data.ids.clone(),
        nearest_id: nearest.iter().map(|&j| data.ids[j].clone()).collect(),
        neighborhood: model.assignment.clone(),
        next_distance: dist,
        nearest,
        cutoff,
        flags,
        ratio,
    })
}
