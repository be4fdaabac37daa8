//! Outlier planting by exchanging attribute vectors between locations.

use std::collections::HashSet;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::mcd::mcd_estimate;
use crate::numerics::median;
use crate::spatial::{spatial_knn, Dataset};

/// Neighbors excluded around every extreme swap.
pub const EXCLUSION_NEIGHBORS: usize = 15;

/// A dataset with ground-truth outlier labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub dataset: Dataset,
    pub labels: Vec<bool>,
    /// Swapped index pairs in the order they were made.
    pub pairs: Vec<(usize, usize)>,
}

impl SimTruth {
    pub fn clean(dataset: Dataset) -> Self {
        let n = dataset.n();
        SimTruth {
            dataset,
            labels: vec![false; n],
            pairs: Vec::new(),
        }
    }

    pub fn outlier_count(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.dataset.x.swap_rows(a, b);
        self.labels[a] = true;
        self.labels[b] = true;
        self.pairs.push((a, b));
    }
}

/// `⌊beta·n⌋` rounded down to an even number, as a pair count.
pub fn pair_budget(beta: f64, n: usize) -> Result<usize> {
    if !(0.0..0.5).contains(&beta) {
        return invalid(format!("beta must lie in [0, 0.5), got {beta}"));
    }
    Ok(((beta * n as f64 + 1e-9).floor() as usize) / 2)
}

/// Swaps the attribute vectors of disjoint uniformly random pairs.
pub fn contaminate_random(truth: &SimTruth, beta: f64, seed: u64) -> Result<SimTruth> {
    let pairs = pair_budget(beta, truth.dataset.n())?;
    swap_random_pairs(truth, pairs, seed)
}

/// Swaps `pairs` disjoint uniformly random pairs.
pub fn swap_random_pairs(truth: &SimTruth, pairs: usize, seed: u64) -> Result<SimTruth> {
    let n = truth.dataset.n();
    if 2 * pairs > n {
        return invalid(format!("{pairs} pairs need more than {n} observations"));
    }
    let mut out = truth.clone();
    if pairs == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample(&mut rng, n, 2 * pairs).into_vec();
    for pair in picked.chunks_exact(2) {
        out.swap(pair[0], pair[1]);
    }
    Ok(out)
}

/// Scores on the leading robust principal axis, computed from median-centered
/// data and the MCD scatter at alpha 0.75.
pub fn robust_pc_scores(data: &Dataset) -> Result<Vec<f64>> {
    let fit = mcd_estimate(&data.x, 0.75)?;
    let (_, vecs) = fit.scatter.eigen_desc();
    let v = vecs.column(0);
    let centers: Vec<f64> = data
        .x
        .column_iter()
        .map(|c| median(&c.iter().copied().collect::<Vec<_>>()))
        .collect();
    Ok((0..data.n())
        .map(|r| {
            (0..data.p())
                .map(|c| (data.x[(r, c)] - centers[c]) * v[c])
                .sum()
        })
        .collect())
}

/// Repeatedly swaps the most positive with the most negative eligible score.
/// Swapped observations and their 15 nearest neighbors leave the pool, and a
/// candidate is skipped when a swapped observation lies among its own 15
/// nearest neighbors.
pub fn contaminate_extreme(truth: &SimTruth, beta: f64, _seed: u64) -> Result<SimTruth> {
    let scores = robust_pc_scores(&truth.dataset)?;
    contaminate_by_scores(truth, beta, &scores)
}

/// [`contaminate_extreme`] with precomputed scores.
pub fn contaminate_by_scores(truth: &SimTruth, beta: f64, scores: &[f64]) -> Result<SimTruth> {
    let n = truth.dataset.n();
    if scores.len() != n {
        return invalid("one score per observation required");
    }
    let budget = pair_budget(beta, n)?;
    let mut out = truth.clone();
    if budget == 0 {
        return Ok(out);
    }
    let k = EXCLUSION_NEIGHBORS.min(n - 1);
    let knn = spatial_knn(&truth.dataset.coords, k, false)?;
    let mut eligible = vec![true; n];
    let mut swapped: HashSet<usize> = HashSet::new();
    let clear = |i: usize, swapped: &HashSet<usize>| !knn[i].iter().any(|j| swapped.contains(j));

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut low_order: Vec<usize> = (0..n).collect();
    low_order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    while out.pairs.len() < budget {
        let Some(hi) = order
            .iter()
            .copied()
            .find(|&i| eligible[i] && clear(i, &swapped))
        else {
            break;
        };
        let Some(lo) = low_order.iter().copied().find(|&i| {
            i != hi
                && eligible[i]
                && clear(i, &swapped)
                && !knn[hi].contains(&i)
                && !knn[i].contains(&hi)
        }) else {
            eligible[hi] = false;
            continue;
        };
        out.swap(hi, lo);
        for s in [hi, lo] {
            swapped.insert(s);
            eligible[s] = false;
            for &j in &knn[s] {
                eligible[j] = false;
            }
        }
    }
    if out.pairs.len() < budget {
        warn!(
            "extreme swapping stopped after {} of {budget} pairs: no eligible observations left",
            out.pairs.len()
        );
    }
    Ok(out)
}
