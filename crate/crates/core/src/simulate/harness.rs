//! Monte-Carlo harnesses: detection experiments, swap-based smoothing
//! tuning, runtime benchmarks and convergence traces.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::contamination::{contaminate_extreme, contaminate_random, swap_random_pairs, SimTruth};
use super::fields::{setup1_generate, setup2_generate};
use super::metrics::{confusion_metrics, Metrics};
use crate::detect::detect_outliers_with;
use crate::error::{invalid, Result};
use crate::numerics::quantile_sorted;
use crate::par;
use crate::spatial::{
    adjacency_weights, grid_neighborhoods, inverse_distance_weights, Dataset,
    NeighborhoodStructure, WeightMatrix,
};
use crate::ssmrcd::{ssmrcd_fit, ChainStatus, SsMrcdConfig, SsMrcdModel};

/// Data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Setup {
    /// Square areas with their own mean and `Σ(delta_lm)`.
    MovingMatrix {
        n_side: usize,
        n_sim: usize,
        p: usize,
    },
    /// Separable Matérn field.
    RandomField {
        n_side: usize,
        p: usize,
        nu: f64,
        delta: f64,
    },
}

impl Setup {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match *self {
            Setup::MovingMatrix { n_side, n_sim, p } => setup1_generate(n_side, n_sim, p, seed),
            Setup::RandomField {
                n_side,
                p,
                nu,
                delta,
            } => setup2_generate(n_side, p, nu, delta, seed),
        }
    }

    pub fn p(&self) -> usize {
        match *self {
            Setup::MovingMatrix { p, .. } | Setup::RandomField { p, .. } => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Contamination {
    None,
    Random { beta: f64 },
    Extreme { beta: f64 },
}

impl Contamination {
    pub fn apply(&self, truth: &SimTruth, seed: u64) -> Result<SimTruth> {
        match *self {
            Contamination::None => Ok(truth.clone()),
            Contamination::Random { beta } => contaminate_random(truth, beta, seed),
            Contamination::Extreme { beta } => contaminate_extreme(truth, beta, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    InverseDistance,
    Adjacency,
}

/// Neighborhood grid and estimator settings shared by all harnesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub lambda: f64,
    pub alpha: f64,
    pub gx: usize,
    pub gy: usize,
    pub min_size: usize,
    pub weighting: Weighting,
    pub max_cond: f64,
    pub max_starts: Option<usize>,
    pub max_iter: usize,
    pub parallel: bool,
    pub instrument: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            lambda: 0.5,
            alpha: 0.75,
            gx: 5,
            gy: 5,
            min_size: 2,
            weighting: Weighting::InverseDistance,
            max_cond: 50.0,
            max_starts: None,
            max_iter: 100,
            parallel: true,
            instrument: false,
        }
    }
}

impl FitSettings {
    pub fn with_grid(mut self, g: usize) -> Self {
        self.gx = g;
        self.gy = g;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn structure(&self, data: &Dataset) -> Result<NeighborhoodStructure> {
        grid_neighborhoods(&data.coords, self.gx, self.gy, self.min_size)
    }

    pub fn weights(&self, structure: &NeighborhoodStructure) -> Result<WeightMatrix> {
        if structure.len() == 1 {
            return Ok(WeightMatrix::single());
        }
        match self.weighting {
            Weighting::InverseDistance => inverse_distance_weights(&structure.centers),
            Weighting::Adjacency => adjacency_weights(structure),
        }
    }

    pub fn config(&self, structure: &NeighborhoodStructure, seed: u64) -> Result<SsMrcdConfig> {
        let mut c = SsMrcdConfig::new(self.weights(structure)?)
            .with_lambda(self.lambda)
            .with_alpha(self.alpha)
            .with_seed(seed);
        c.max_cond = self.max_cond;
        c.max_starts = self.max_starts;
        c.max_iter = self.max_iter;
        c.parallel = self.parallel;
        c.instrument = self.instrument;
        Ok(c)
    }

    pub fn fit(&self, data: &Dataset, seed: u64) -> Result<(NeighborhoodStructure, SsMrcdModel)> {
        let s = self.structure(data)?;
        let model = ssmrcd_fit(data, &s, &self.config(&s, seed)?)?;
        Ok((s, model))
    }
}

/// Independent per-replication seeds drawn from a master seed.
pub fn replication_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.random()).collect()
}

fn contamination_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Mean and 5%/95% quantiles of one metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub metric: String,
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
    pub count: usize,
}

pub fn summarize(metric: &str, values: &[f64]) -> Summary {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let count = sorted.len();
    let (mean, q05, q95) = if count == 0 {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            sorted.iter().sum::<f64>() / count as f64,
            quantile_sorted(&sorted, 0.05),
            quantile_sorted(&sorted, 0.95),
        )
    };
    Summary {
        metric: metric.to_string(),
        mean,
        q05,
        q95,
        count,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub setup: Setup,
    pub contamination: Contamination,
    #[serde(default)]
    pub fit: FitSettings,
    pub k: usize,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub seed: u64,
    pub outliers: usize,
    pub flagged: usize,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub rows: Vec<ReplicationRow>,
    pub summary: Vec<Summary>,
}

impl ExperimentResult {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.metric == metric)
            .map(|s| s.mean)
    }
}

fn one_replication(spec: &ExperimentSpec, replication: usize, seed: u64) -> ReplicationRow {
    let run = || -> Result<(usize, Metrics)> {
        let clean = SimTruth::clean(spec.setup.generate(seed)?);
        let truth = spec.contamination.apply(&clean, contamination_seed(seed))?;
        let (_, model) = spec.fit.fit(&truth.dataset, seed)?;
        let report = detect_outliers_with(&truth.dataset, &model, spec.k, spec.fit.parallel)?;
        let m = confusion_metrics(&truth.labels, &report.flags)?;
        Ok((truth.outlier_count(), m))
    };
    match run() {
        Ok((outliers, m)) => ReplicationRow {
            replication,
            seed,
            outliers,
            flagged: m.tp + m.fp,
            metrics: Some(m),
            error: None,
        },
        Err(e) => ReplicationRow {
            replication,
            seed,
            outliers: 0,
            flagged: 0,
            metrics: None,
            error: Some(e.to_string()),
        },
    }
}

/// Generate, contaminate, fit, detect and score each replication. Failed
/// replications are kept with their error message.
pub fn run_detection_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    if spec.replications == 0 || spec.k == 0 {
        return invalid("replications and k must be positive");
    }
    let seeds = replication_seeds(spec.seed, spec.replications);
    let rows = par::map_range(spec.replications, spec.fit.parallel, |r| {
        one_replication(spec, r, seeds[r])
    });
    let ok: Vec<&Metrics> = rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let collect =
        |f: &dyn Fn(&Metrics) -> Option<f64>| ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>();
    let summary = vec![
        summarize("f1", &collect(&|m| Some(m.f1))),
        summarize("fnr", &collect(&|m| m.fnr)),
        summarize("fpr", &collect(&|m| m.fpr)),
        summarize(
            "flagged_fraction",
            &collect(&|m| Some(m.flagged_fraction())),
        ),
    ];
    Ok(ExperimentResult { rows, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneRow {
    pub lambda: f64,
    pub trial: usize,
    pub found_fraction: Option<f64>,
    pub total_flagged: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneSummary {
    pub lambda: f64,
    pub found_fraction: f64,
    pub total_flagged: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub rows: Vec<TuneRow>,
    pub summary: Vec<TuneSummary>,
}

/// For every smoothing value, plants random swaps into the (assumed clean)
/// data and records the fraction of planted observations found and the total
/// number flagged. Trials share planted pairs across smoothing values.
pub fn tune_lambda(
    data: &Dataset,
    fit: &FitSettings,
    lambdas: &[f64],
    k: usize,
    pairs_per_trial: usize,
    trials: usize,
    seed: u64,
) -> Result<TuneResult> {
    if lambdas.is_empty() || trials == 0 || pairs_per_trial == 0 {
        return invalid("need at least one lambda, one trial and one swap");
    }
    let seeds = replication_seeds(seed, trials);
    let clean = SimTruth::clean(data.clone());
    let planted: Vec<SimTruth> = seeds
        .iter()
        .map(|&s| swap_random_pairs(&clean, pairs_per_trial, s))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..lambdas.len())
        .flat_map(|l| (0..trials).map(move |t| (l, t)))
        .collect();
    let rows = par::map_slice(&cells, fit.parallel, |&(l, t)| {
        let settings = fit.clone().with_lambda(lambdas[l]);
        let truth = &planted[t];
        let res = settings
            .fit(&truth.dataset, seeds[t])
            .and_then(|(_, model)| detect_outliers_with(&truth.dataset, &model, k, fit.parallel));
        match res {
            Ok(rep) => {
                let found = truth
                    .labels
                    .iter()
                    .zip(&rep.flags)
                    .filter(|(&l, &f)| l && f)
                    .count();
                TuneRow {
                    lambda: lambdas[l],
                    trial: t,
                    found_fraction: Some(found as f64 / truth.outlier_count() as f64),
                    total_flagged: Some(rep.flags.iter().filter(|&&f| f).count()),
                    error: None,
                }
            }
            Err(e) => TuneRow {
                lambda: lambdas[l],
                trial: t,
                found_fraction: None,
                total_flagged: None,
                error: Some(e.to_string()),
            },
        }
    });
    let summary = lambdas
        .iter()
        .map(|&lambda| {
            let ok: Vec<&TuneRow> = rows
                .iter()
                .filter(|r| r.lambda == lambda && r.error.is_none())
                .collect();
            let m = ok.len().max(1) as f64;
            TuneSummary {
                lambda,
                found_fraction: ok.iter().filter_map(|r| r.found_fraction).sum::<f64>() / m,
                total_flagged: ok.iter().filter_map(|r| r.total_flagged).sum::<usize>() as f64 / m,
                trials: ok.len(),
            }
        })
        .collect();
    Ok(TuneResult { rows, summary })
}

/// Default operating point of the runtime benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchPoint {
    pub p: usize,
    pub n_side: usize,
    /// Neighborhood grid cells per axis.
    pub cells: usize,
    pub lambda: f64,
}

impl Default for BenchPoint {
    fn default() -> Self {
        BenchPoint {
            p: 5,
            n_side: 41,
            cells: 5,
            lambda: 0.5,
        }
    }
}

/// Parameters varied one at a time around `defaults`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub p: Vec<usize>,
    pub n_side: Vec<usize>,
    pub cells: Vec<usize>,
    pub lambda: Vec<f64>,
    pub defaults: BenchPoint,
    pub replications: usize,
    pub seed: u64,
    /// Areas of the generating moving-matrix setup.
    pub n_sim: usize,
    pub beta: f64,
    pub parallel: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            p: vec![],
            n_side: vec![],
            cells: vec![],
            lambda: vec![],
            defaults: BenchPoint::default(),
            replications: 5,
            seed: 0,
            n_sim: 25,
            beta: 0.05,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub parameter: String,
    pub p: usize,
    pub n: usize,
    pub neighborhoods: usize,
    pub lambda: f64,
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
    pub replications: usize,
}

/// Mean fit time per cell; one warm-up fit per cell is discarded.
pub fn run_benchmark(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    if spec.replications == 0 {
        return invalid("replications must be positive");
    }
    let mut points: Vec<(&str, BenchPoint)> = Vec::new();
    let d = spec.defaults;
    points.extend(spec.p.iter().map(|&p| ("p", BenchPoint { p, ..d })));
    points.extend(
        spec.n_side
            .iter()
            .map(|&n_side| ("n", BenchPoint { n_side, ..d })),
    );
    points.extend(
        spec.cells
            .iter()
            .map(|&cells| ("N", BenchPoint { cells, ..d })),
    );
    points.extend(
        spec.lambda
            .iter()
            .map(|&lambda| ("lambda", BenchPoint { lambda, ..d })),
    );
    if points.is_empty() {
        points.push(("default", d));
    }
    let seeds = replication_seeds(spec.seed, spec.replications + 1);
    let mut rows = Vec::with_capacity(points.len());
    for (name, pt) in points {
        let settings = FitSettings {
            parallel: spec.parallel,
            ..FitSettings::default()
                .with_grid(pt.cells)
                .with_lambda(pt.lambda)
        };
        let setup = Setup::MovingMatrix {
            n_side: pt.n_side,
            n_sim: spec.n_sim,
            p: pt.p,
        };
        let mut times = Vec::with_capacity(spec.replications);
        let mut neighborhoods = 0;
        for (r, &seed) in seeds.iter().enumerate() {
            let clean = SimTruth::clean(setup.generate(seed)?);
            let data = contaminate_random(&clean, spec.beta, contamination_seed(seed))?.dataset;
            let structure = settings.structure(&data)?;
            let config = settings.config(&structure, seed)?;
            let start = Instant::now();
            ssmrcd_fit(&data, &structure, &config)?;
            let elapsed = start.elapsed().as_secs_f64();
            neighborhoods = structure.len();
            if r > 0 {
                times.push(elapsed);
            }
        }
        let s = summarize("seconds", &times);
        rows.push(BenchRow {
            parameter: name.to_string(),
            p: pt.p,
            n: pt.n_side * pt.n_side,
            neighborhoods,
            lambda: pt.lambda,
            mean: s.mean,
            q05: s.q05,
            q95: s.q95,
            replications: s.count,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return invalid("need at least two positive (x, y) pairs");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("x values must not all be equal");
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub start: usize,
    pub sweep: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<TraceRow>,
    pub monotone_fraction: f64,
    /// Every frozen single-neighborhood step kept or lowered its determinant.
    pub substeps_nonincreasing: bool,
    pub converged_chains: usize,
    pub chains: usize,
}

/// Objective paths of all starting combinations of one instrumented fit.
pub fn convergence_trace(
    setup: &Setup,
    contamination: &Contamination,
    fit: &FitSettings,
    seed: u64,
) -> Result<ConvergenceReport> {
    let clean = SimTruth::clean(setup.generate(seed)?);
    let truth = contamination.apply(&clean, contamination_seed(seed))?;
    let settings = FitSettings {
        instrument: true,
        ..fit.clone()
    };
    let (_, model) = settings.fit(&truth.dataset, seed)?;
    Ok(trace_report(&model))
}

pub fn trace_report(model: &SsMrcdModel) -> ConvergenceReport {
    let mut rows = Vec::new();
    for (start, t) in model.traces.iter().enumerate() {
        for (sweep, &objective) in t.objectives.iter().enumerate() {
            rows.push(TraceRow {
                start,
                sweep,
                objective,
            });
        }
    }
    let substeps_nonincreasing = model
        .traces
        .iter()
        .flat_map(|t| &t.substeps)
        .all(|s| s.log_det_after <= s.log_det_before + 1e-10_f64.ln_1p());
    ConvergenceReport {
        rows,
        monotone_fraction: model.monotone_fraction,
        substeps_nonincreasing,
        converged_chains: model
            .traces
            .iter()
            .filter(|t| t.status == ChainStatus::Converged)
            .count(),
        chains: model.traces.len(),
    }
}
