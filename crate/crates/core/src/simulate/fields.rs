//! Data generators: piecewise-stationary Gaussian areas and separable Matérn
//! random fields.

use nalgebra::{DMatrix, DVector};
use puruspe::besselik;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::numerics::{cholesky_lower, SymmetricMatrix};
use crate::spatial::{cell_index, lattice, Dataset};

/// Side length of the square simulation window.
pub const WINDOW: f64 = 20.0;
/// Lattice spacing of the random-field setup.
pub const FIELD_SPACING: f64 = 0.5;
/// Ridge added to the spatial correlation matrix before factorization.
pub const SPATIAL_RIDGE: f64 = 1e-10;

/// Toeplitz correlation matrix with entries `delta^|j-k|`.
pub fn sigma_delta(p: usize, delta: f64) -> Result<SymmetricMatrix> {
    if p == 0 {
        return invalid("dimension must be positive");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(SymmetricMatrix::symmetrize(DMatrix::from_fn(
        p,
        p,
        |j, k| delta.powi(j.abs_diff(k) as i32),
    )))
}

/// Matérn correlation `2^{1-nu} / Γ(nu) (a h)^nu K_nu(a h)`.
pub fn matern_correlation(h: f64, nu: f64, a: f64) -> Result<f64> {
    if !(nu > 0.0) || !(a > 0.0) {
        return invalid("nu and a must be positive");
    }
    if !(h >= 0.0) {
        return invalid(format!("distance must be nonnegative, got {h}"));
    }
    let t = a * h;
    if t == 0.0 {
        return Ok(1.0);
    }
    if t > 700.0 {
        return Ok(0.0);
    }
    let (_, k, _, _) = besselik(nu, t);
    let log = (1.0 - nu) * std::f64::consts::LN_2 - gamma(nu).ln() + nu * t.ln() + k.ln();
    Ok(log.exp().min(1.0))
}

fn check_field_args(n_side: usize, p: usize) -> Result<()> {
    if n_side < 2 || p == 0 {
        return invalid("need n_side >= 2 and p >= 1");
    }
    Ok(())
}

/// Area index `(l, m)` (both from 1) and parameter of each lattice point.
fn setup1_areas(coords: &[[f64; 2]], n_sim: usize) -> Result<(usize, Vec<(usize, usize)>)> {
    let side = (n_sim as f64).sqrt().round() as usize;
    if side == 0 || side * side != n_sim {
        return invalid(format!(
            "number of areas must be a perfect square, got {n_sim}"
        ));
    }
    let width = WINDOW / side as f64;
    let areas = coords
        .iter()
        .map(|c| {
            (
                cell_index(c[0], 0.0, width, side) + 1,
                cell_index(c[1], 0.0, width, side) + 1,
            )
        })
        .collect();
    Ok((side, areas))
}

/// `(0.1 + l·0.8/√N)(0.1 + m·0.8/√N)`.
pub fn setup1_delta(l: usize, m: usize, side: usize) -> f64 {
    let f = |v: usize| 0.1 + v as f64 * 0.8 / side as f64;
    f(l) * f(m)
}

/// Mean entry of area `(l, m)`: the average of its two center coordinates.
pub fn setup1_mean(l: usize, m: usize, side: usize) -> f64 {
    let w = WINDOW / side as f64;
    let c1 = (l as f64 - 0.5) * w;
    let c2 = (m as f64 - 0.5) * w;
    (c1 + c2) / 2.0
}

/// Lattice on `[0, 20]²` split into `n_sim` square areas, each area drawn
/// from `N(mu_lm, Σ(delta_lm))`.
pub fn setup1_generate(n_side: usize, n_sim: usize, p: usize, seed: u64) -> Result<Dataset> {
    check_field_args(n_side, p)?;
    let coords = lattice(n_side, 0.0, WINDOW);
    let (side, areas) = setup1_areas(&coords, n_sim)?;
    let mut factors = std::collections::HashMap::new();
    for l in 1..=side {
        for m in 1..=side {
            let s = sigma_delta(p, setup1_delta(l, m, side))?;
            factors.insert((l, m), cholesky_lower(&s)?);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(coords.len(), p);
    for (r, area) in areas.iter().enumerate() {
        let g = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let v = &factors[area] * g;
        let mu = setup1_mean(area.0, area.1, side);
        for c in 0..p {
            x[(r, c)] = mu + v[c];
        }
    }
    Dataset::with_index_ids(coords, x)
}

/// Zero-mean Gaussian field on a lattice with spacing 0.5 whose covariance is
/// `Σ(delta)_{jk} · Matérn(‖s - t‖; nu, 1)`, sampled as `L_s G L_vᵀ`.
pub fn setup2_generate(n_side: usize, p: usize, nu: f64, delta: f64, seed: u64) -> Result<Dataset> {
    check_field_args(n_side, p)?;
    let coords = lattice(n_side, 0.0, (n_side - 1) as f64 * FIELD_SPACING);
    let n = coords.len();
    let mut corr = DMatrix::zeros(n, n);
    for i in 0..n {
        corr[(i, i)] = 1.0 + SPATIAL_RIDGE;
        for j in 0..i {
            let h = (coords[i][0] - coords[j][0]).hypot(coords[i][1] - coords[j][1]);
            let v = matern_correlation(h, nu, 1.0)?;
            corr[(i, j)] = v;
            corr[(j, i)] = v;
        }
    }
    let ls = corr.cholesky().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "spatial correlation matrix is numerically singular for nu = {nu}; use a smaller grid"
        ))
    })?;
    let lv = sigma_delta(p, delta)?.cholesky()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let x = ls.l() * g * lv.transpose();
    Dataset::with_index_ids(coords, x)
}
