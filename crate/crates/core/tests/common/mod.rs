#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ssmrcd::mcd::deterministic_starts;
use ssmrcd::numerics::{consistency_factor, select_rows, SymmetricMatrix};
use ssmrcd::spatial::{Dataset, NeighborhoodStructure, WeightMatrix};
use ssmrcd::ssmrcd::{select_rho, transform_to_target_basis, SsMrcdConfig};

pub fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
}

/// `blocks` neighborhoods of `n_each` Gaussian rows, spatially far apart.
pub fn blocks(
    blocks: usize,
    n_each: usize,
    p: usize,
    seed: u64,
) -> (Dataset, NeighborhoodStructure) {
    let n = blocks * n_each;
    let coords: Vec<[f64; 2]> = (0..n)
        .map(|r| [100.0 * (r / n_each) as f64, (r % n_each) as f64])
        .collect();
    let assignment = (0..n).map(|r| r / n_each).collect();
    let s = NeighborhoodStructure::from_assignment(&coords, assignment).unwrap();
    (
        Dataset::with_index_ids(coords, gaussian(n, p, seed)).unwrap(),
        s,
    )
}

pub fn complete_weights(n: usize) -> WeightMatrix {
    if n == 1 {
        return WeightMatrix::single();
    }
    WeightMatrix::from_raw(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            1.0 + (i + j) as f64
        }
    }))
    .unwrap()
}

/// Random matrix with condition number in `[1, max_cond]`.
pub fn random_affine(p: usize, max_cond: f64, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = gaussian(p, p, rng.random()).qr().q();
    let v = gaussian(p, p, rng.random()).qr().q();
    let mut s: Vec<f64> = (0..p).map(|_| max_cond.powf(rng.random::<f64>())).collect();
    s[0] = 1.0;
    let scale: f64 = rng.random_range(0.2..5.0);
    let a = u * DMatrix::from_diagonal(&DVector::from_vec(s)) * v.transpose() * scale;
    let b = DVector::from_fn(p, |_, _| rng.random_range(-10.0..10.0));
    (a, b)
}

pub fn transform(x: &DMatrix<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut y = x * a.transpose();
    for mut row in y.row_iter_mut() {
        row += b.transpose();
    }
    y
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Plain MRCD in the target basis for one neighborhood, written without the
/// library's coupled machinery: returns the best subset (global indices) and
/// its `K` in the original basis.
pub fn independent_mrcd(
    x: &DMatrix<f64>,
    target: &SymmetricMatrix,
    members: &[usize],
    alpha: f64,
    config: &SsMrcdConfig,
) -> (Vec<usize>, DMatrix<f64>) {
    let p = x.ncols();
    let (z, q, vals) = transform_to_target_basis(x, target).unwrap();
    let local = select_rows(&z, members);
    let m = members.len();
    let h = ((alpha * m as f64) - 1e-9).ceil() as usize;
    let starts = deterministic_starts(&local, h).unwrap();
    let sel = select_rho(&local, &starts, alpha, config.max_cond, &config.rho_grid).unwrap();
    let c = consistency_factor(alpha, p).unwrap();
    let k_of = |subset: &[usize]| -> (DMatrix<f64>, DVector<f64>) {
        let rows = select_rows(&local, subset);
        let mean = rows.row_mean().transpose();
        let mut cov = DMatrix::zeros(p, p);
        for r in rows.row_iter() {
            let d = r.transpose() - &mean;
            cov += &d * d.transpose();
        }
        cov /= (subset.len() - 1) as f64;
        (
            DMatrix::identity(p, p) * sel.rho + cov * ((1.0 - sel.rho) * c),
            mean,
        )
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for &s in &sel.retained {
        let mut subset = starts[s].clone();
        let mut seen = vec![subset.clone()];
        let (k0, _) = k_of(&subset);
        let mut chain_best = (k0.determinant(), subset.clone());
        for _ in 0..config.max_iter {
            let (k, mean) = k_of(&subset);
            let inv = k.try_inverse().unwrap();
            let mut d: Vec<(f64, usize)> = (0..m)
                .map(|r| {
                    let diff = local.row(r).transpose() - &mean;
                    ((diff.transpose() * &inv * &diff)[(0, 0)], r)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut next: Vec<usize> = d[..h].iter().map(|&(_, r)| r).collect();
            next.sort_unstable();
            let det = k_of(&next).0.determinant();
            if next == subset {
                chain_best = (det, next);
                break;
            }
            if det < chain_best.0 {
                chain_best = (det, next.clone());
            }
            if seen.contains(&next) {
                break;
            }
            seen.push(next.clone());
            subset = next;
        }
        if best.as_ref().is_none_or(|b| chain_best.0 < b.0) {
            best = Some(chain_best);
        }
    }
    let (_, subset) = best.unwrap();
    let (kz, _) = k_of(&subset);
    let half = &q * DMatrix::from_diagonal(&vals.map(f64::sqrt));
    let k = &half * kz * half.transpose();
    (subset.into_iter().map(|r| members[r]).collect(), k)
}

use ssmrcd::mcd::{mcd_estimate, mcd_exhaustive};
use ssmrcd::simulate::{contaminate_random, setup2_generate, FitSettings, SimTruth};
use ssmrcd::ssmrcd::{ssmrcd_exhaustive, ssmrcd_fit, SsMrcdModel};

pub fn pair_weights() -> WeightMatrix {
    WeightMatrix::try_new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap()
}

/// Two neighborhoods of 8 bivariate points with subsets of size 5.
pub fn tiny_instance(seed: u64) -> (Dataset, NeighborhoodStructure) {
    blocks(2, 8, 2, seed)
}

pub const TINY_ALPHA: f64 = 0.625;

#[derive(Debug, Default)]
pub struct OracleStats {
    pub instances: usize,
    pub matches: usize,
    pub undercuts: usize,
}

/// Heuristic versus exhaustive objective on tiny instances.
pub fn oracle_equivalence(lambda: f64, instances: usize, seed0: u64) -> OracleStats {
    let mut st = OracleStats::default();
    for seed in seed0..seed0 + instances as u64 {
        let (d, s) = tiny_instance(seed);
        let config = SsMrcdConfig::new(pair_weights())
            .with_lambda(lambda)
            .with_alpha(TINY_ALPHA);
        let fit = ssmrcd_fit(&d, &s, &config).unwrap();
        let ex = ssmrcd_exhaustive(&d, &s, &config).unwrap();
        st.instances += 1;
        if fit.objective < ex.objective * (1.0 - 1e-10) {
            st.undercuts += 1;
        }
        if (fit.objective - ex.objective).abs() <= 1e-10 * ex.objective {
            st.matches += 1;
        }
    }
    st
}

/// Unsmoothed fits against independent per-neighborhood MRCD fits sharing
/// the same target. Returns descriptions of all disagreements.
pub fn reduction_failures(instances: usize, seed0: u64) -> Vec<String> {
    let mut failures = Vec::new();
    for seed in seed0..seed0 + instances as u64 {
        let hoods = 2 + (seed % 2) as usize;
        let (d, s) = blocks(hoods, 24, 3, seed);
        let mut config = SsMrcdConfig::new(complete_weights(hoods)).with_lambda(0.0);
        config.max_starts = Some(usize::MAX);
        let fit = ssmrcd_fit(&d, &s, &config).unwrap();
        let target = mcd_estimate(&d.x, config.alpha).unwrap().scatter;
        for (i, members) in s.members.iter().enumerate() {
            let (subset, k) = independent_mrcd(&d.x, &target, members, config.alpha, &config);
            let n = &fit.neighborhoods[i];
            if n.subset != subset {
                failures.push(format!("seed {seed} neighborhood {i}: subsets differ"));
            }
            let err = (n.k.as_matrix() - &k).abs().max();
            if err > 1e-10 {
                failures.push(format!(
                    "seed {seed} neighborhood {i}: K differs by {err:e}"
                ));
            }
        }
    }
    failures
}

#[derive(Debug, Default)]
pub struct EquivarianceStats {
    pub trials: usize,
    pub skipped: usize,
    pub subset_mismatches: usize,
    pub max_sigma_error: f64,
    pub max_mean_error: f64,
}

fn mcd_verified(x: &DMatrix<f64>, alpha: f64) -> bool {
    mcd_estimate(x, alpha).unwrap().subset == mcd_exhaustive(x, alpha).unwrap().subset
}

/// Exhaustive fits on tiny instances before and after `x -> A x + b`, with a
/// verified exact MCD target on both sides and fixed regularization.
pub fn equivariance(trials: usize, seed0: u64) -> EquivarianceStats {
    let mut st = EquivarianceStats::default();
    let mut seed = seed0;
    while st.trials < trials {
        seed += 1;
        let (d, s) = tiny_instance(seed);
        let (a, b) = random_affine(2, 100.0, seed);
        let y = transform(&d.x, &a, &b);
        if !mcd_verified(&d.x, TINY_ALPHA) || !mcd_verified(&y, TINY_ALPHA) {
            st.skipped += 1;
            continue;
        }
        let dy = Dataset::with_index_ids(d.coords.clone(), y).unwrap();
        let mut config = SsMrcdConfig::new(pair_weights()).with_alpha(TINY_ALPHA);
        config.fixed_rho = Some(vec![0.25, 0.4]);
        let fx = ssmrcd_exhaustive(&d, &s, &config).unwrap();
        let fy = ssmrcd_exhaustive(&dy, &s, &config).unwrap();
        st.trials += 1;
        for (nx, ny) in fx.neighborhoods.iter().zip(&fy.neighborhoods) {
            if nx.subset != ny.subset {
                st.subset_mismatches += 1;
                continue;
            }
            let expect = &a * nx.sigma.as_matrix() * a.transpose();
            st.max_sigma_error = st
                .max_sigma_error
                .max(rel_frobenius(ny.sigma.as_matrix(), &expect));
            let mu = &a * &nx.mean + &b;
            st.max_mean_error = st
                .max_mean_error
                .max((&ny.mean - &mu).norm() / mu.norm().max(1.0));
        }
    }
    st
}

fn min_eigenvalue(s: &SymmetricMatrix) -> f64 {
    let (v, _) = s.eigen_desc();
    v[v.len() - 1]
}

/// `min_i λ_min(Σ_i) - min_j ρ_j λ_min(T)` after planting `h_i - 1` copies of
/// one row in every neighborhood.
pub fn implosion_margin(seed: u64) -> f64 {
    let settings = FitSettings::default().with_grid(3);
    let mut data = setup2_generate(21, 3, 1.5, 0.7, seed).unwrap();
    let s = settings.structure(&data).unwrap();
    for members in &s.members {
        let h = ((0.75 * members.len() as f64) - 1e-9).ceil() as usize;
        let src = members[0];
        let row = data.x.row(src).into_owned();
        for &r in &members[1..h] {
            data.x.set_row(r, &row);
        }
    }
    let (_, model) = settings.fit(&data, seed).unwrap();
    implosion_margin_of(&model)
}

pub fn implosion_margin_of(model: &SsMrcdModel) -> f64 {
    let rho = model
        .neighborhoods
        .iter()
        .map(|n| n.rho)
        .fold(f64::INFINITY, f64::min);
    let bound = rho * min_eigenvalue(&model.target.scatter);
    model
        .neighborhoods
        .iter()
        .map(|n| min_eigenvalue(&n.sigma) - bound)
        .fold(f64::INFINITY, f64::min)
}

fn max_sigma_norm(model: &SsMrcdModel) -> f64 {
    model
        .neighborhoods
        .iter()
        .map(|n| n.sigma.frobenius_norm())
        .fold(0.0, f64::max)
}

/// Replaces `count` rows of the central neighborhood by points of the given
/// scale and returns the largest smoothed-covariance norm.
fn contaminated_norm(seed: u64, count: usize, scale: f64) -> f64 {
    let settings = FitSettings::default().with_grid(3);
    let mut data = setup2_generate(21, 3, 1.5, 0.7, seed).unwrap();
    let s = settings.structure(&data).unwrap();
    let members = &s.members[4];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    for &r in members.iter().take(count) {
        for c in 0..data.p() {
            data.x[(r, c)] = scale * (1.0 + rng.random::<f64>());
        }
    }
    let (_, model) = settings.fit(&data, seed).unwrap();
    max_sigma_norm(&model)
}

#[derive(Debug)]
pub struct ExplosionStats {
    pub clean: f64,
    pub bounded: f64,
    pub broken: Vec<f64>,
}

pub fn explosion(seed: u64) -> ExplosionStats {
    let settings = FitSettings::default().with_grid(3);
    let data = setup2_generate(21, 3, 1.5, 0.7, seed).unwrap();
    let s = settings.structure(&data).unwrap();
    let m = s.members[4].len();
    let h = ((0.75 * m as f64) - 1e-9).ceil() as usize;
    ExplosionStats {
        clean: contaminated_norm(seed, 0, 1.0),
        bounded: contaminated_norm(seed, m - h, 1e6),
        broken: [1e3, 1e4, 1e5]
            .iter()
            .map(|&sc| contaminated_norm(seed, m - h + 1, sc))
            .collect(),
    }
}

#[derive(Debug, Default)]
pub struct MonotonicityStats {
    pub fits: usize,
    pub substeps: usize,
    pub violations: usize,
    pub min_fraction: f64,
    pub pooled_fraction: f64,
}

/// Instrumented fits on contaminated random fields with smoothness 1.5.
pub fn monotonicity(fits: usize, seed0: u64) -> MonotonicityStats {
    let mut st = MonotonicityStats {
        min_fraction: 1.0,
        ..Default::default()
    };
    let (mut up, mut total) = (0usize, 0usize);
    let settings = FitSettings {
        instrument: true,
        ..FitSettings::default().with_grid(3)
    };
    for seed in seed0..seed0 + fits as u64 {
        let clean = SimTruth::clean(setup2_generate(21, 5, 1.5, 0.7, seed).unwrap());
        let data = contaminate_random(&clean, 0.05, seed).unwrap().dataset;
        let (_, model) = settings.fit(&data, seed).unwrap();
        st.fits += 1;
        st.min_fraction = st.min_fraction.min(model.monotone_fraction);
        for t in &model.traces {
            for sub in &t.substeps {
                st.substeps += 1;
                if sub.log_det_after > sub.log_det_before + 1e-10_f64.ln_1p() {
                    st.violations += 1;
                }
            }
            for w in t.objectives.windows(2) {
                total += 1;
                if w[1] <= w[0] * (1.0 + 1e-12) {
                    up += 1;
                }
            }
        }
    }
    st.pooled_fraction = up as f64 / total.max(1) as f64;
    st
}

/// `K_nu(x) = ∫_0^∞ exp(-x cosh t) cosh(nu t) dt` by the trapezoid rule.
pub fn bessel_k_integral(nu: f64, x: f64) -> f64 {
    let h: f64 = 1e-3;
    let mut sum = 0.5 * (-x).exp();
    let mut t: f64 = h;
    loop {
        let v = (-x * t.cosh()).exp() * (nu * t).cosh();
        sum += v;
        if v < 1e-300 || t > 50.0 {
            break;
        }
        t += h;
    }
    sum * h
}

pub fn matern_oracle(h: f64, nu: f64) -> f64 {
    let g = statrs_gamma(nu);
    2f64.powf(1.0 - nu) / g * h.powf(nu) * bessel_k_integral(nu, h)
}

/// Γ for integer and half-integer arguments.
pub fn statrs_gamma(nu: f64) -> f64 {
    let mut g = if nu.fract() == 0.0 {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut v = if nu.fract() == 0.0 { 1.0 } else { 0.5 };
    while v < nu {
        g *= v;
        v += 1.0;
    }
    g
}
