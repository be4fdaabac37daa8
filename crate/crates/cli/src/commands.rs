//! Subcommand implementations. Each returns the one-line summary printed on
//! success.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix2, Vector2};
use ssmrcd::detect::{detect_outliers_with, OutlierReport};
use ssmrcd::numerics::chi2_quantile;
use ssmrcd::simulate::{
    convergence_trace, loglog_slope, run_benchmark, run_detection_experiment, tune_lambda,
    ExperimentSpec, SimTruth,
};
use ssmrcd::ssmrcd::{mahalanobis_pair, SsMrcdModel};

use crate::config::{RunConfig, SimulateConfig};
use crate::data::{
    default_variables, fmt_f64, fmt_opt, load_dataset, save_dataset, write_table, Table,
};
use crate::error::{io_error, validation, CliError, CliResult};
use crate::model_file::ModelFile;

pub const ELLIPSE_POINTS: usize = 64;
pub const ELLIPSE_LEVEL: f64 = 0.975;

fn prepare_out(cfg: &RunConfig) -> CliResult<&Path> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| io_error(&cfg.out, e))?;
    let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Compute(e.to_string()))?;
    let path = cfg.out.join("config.json");
    std::fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
    Ok(&cfg.out)
}

fn simulate_section(cfg: &RunConfig) -> CliResult<&SimulateConfig> {
    match &cfg.simulate {
        Some(s) => Ok(s),
        None => validation("this command needs a \"simulate\" section in the config"),
    }
}

/// Fits the configured model; returns the table, the model and its file form.
pub fn fit_model(cfg: &RunConfig) -> CliResult<(Table, SsMrcdModel, ModelFile)> {
    let table = load_dataset(cfg.require_data()?)?;
    let (structure, model) = cfg.fit.fit(&table.dataset, cfg.seed)?;
    let file = ModelFile::from_model(&model, &structure, &table.dataset, &table.variables, cfg);
    Ok((table, model, file))
}

pub fn cmd_fit(cfg: &RunConfig) -> CliResult<String> {
    let (table, model, file) = fit_model(cfg)?;
    let out = prepare_out(cfg)?;
    let path = out.join("model.json");
    file.save(&path)?;
    Ok(format!(
        "fit: {} observations, {} neighborhoods, objective {}, model written to {}",
        table.dataset.n(),
        model.neighborhoods.len(),
        fmt_f64(model.objective),
        path.display()
    ))
}

pub fn cmd_detect(cfg: &RunConfig) -> CliResult<String> {
    let (table, model) = match &cfg.model {
        Some(path) => {
            let table = load_dataset(cfg.require_data()?)?;
            let model = ModelFile::load(path)?.to_model(&table.dataset)?;
            (table, model)
        }
        None => {
            let (table, model, _) = fit_model(cfg)?;
            (table, model)
        }
    };
    let report = detect_outliers_with(&table.dataset, &model, cfg.k, cfg.fit.parallel)?;
    let out = prepare_out(cfg)?;
    write_report(&out.join("report.csv"), &report)?;
    write_ellipses(&out.join("ellipses.csv"), &model)?;
    write_distances(&out.join("distances.csv"), &table, &model, &report)?;
    Ok(format!(
        "detect: {} of {} observations flagged, cutoff {}, tables written to {}",
        report.outliers().len(),
        report.len(),
        fmt_f64(report.cutoff),
        out.display()
    ))
}

pub fn write_report(path: &Path, r: &OutlierReport) -> CliResult<()> {
    write_table(
        path,
        &[
            "id",
            "neighborhood",
            "next_distance",
            "cutoff",
            "ratio",
            "flag",
            "nearest_id",
        ],
        (0..r.len()).map(|i| {
            vec![
                r.ids[i].clone(),
                r.neighborhood[i].to_string(),
                fmt_f64(r.next_distance[i]),
                fmt_f64(r.cutoff),
                fmt_f64(r.ratio[i]),
                r.flags[i].to_string(),
                r.nearest_id[i].clone(),
            ]
        }),
    )
}

/// Boundary of the tolerance ellipse of each neighborhood covariance,
/// projected on the two leading eigenvectors of the target.
pub fn ellipse_points(model: &SsMrcdModel) -> CliResult<Vec<Vec<[f64; 2]>>> {
    let p = model.target.eigenvectors.nrows();
    if p < 2 {
        return Ok(Vec::new());
    }
    let v: DMatrix<f64> = model.target.eigenvectors.columns(0, 2).into_owned();
    let radius = chi2_quantile(ELLIPSE_LEVEL, 2)?.sqrt();
    model
        .neighborhoods
        .iter()
        .map(|n| {
            let s = v.transpose() * n.sigma.as_matrix() * &v;
            let s = Matrix2::new(s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)]);
            let c = v.transpose() * &n.mean;
            let l = s
                .cholesky()
                .ok_or_else(|| {
                    CliError::Compute("projected covariance is not positive definite".into())
                })?
                .l();
            Ok((0..ELLIPSE_POINTS)
                .map(|j| {
                    let t = std::f64::consts::TAU * j as f64 / ELLIPSE_POINTS as f64;
                    let u = l * Vector2::new(t.cos(), t.sin()) * radius;
                    [c[0] + u[0], c[1] + u[1]]
                })
                .collect())
        })
        .collect()
}

fn write_ellipses(path: &Path, model: &SsMrcdModel) -> CliResult<()> {
    let ellipses = ellipse_points(model)?;
    if ellipses.is_empty() {
        log::warn!("one variable only; ellipses.csv has no rows");
    }
    write_table(
        path,
        &["neighborhood", "point", "pc1", "pc2"],
        ellipses.iter().enumerate().flat_map(|(i, pts)| {
            pts.iter()
                .enumerate()
                .map(move |(j, q)| vec![i.to_string(), j.to_string(), fmt_f64(q[0]), fmt_f64(q[1])])
        }),
    )
}

/// Robust distance to the global target and to the own neighborhood, next
/// to the next distance.
fn write_distances(
    path: &Path,
    table: &Table,
    model: &SsMrcdModel,
    r: &OutlierReport,
) -> CliResult<()> {
    let d = &table.dataset;
    let t_inv = model.target.scatter.inverse_pd()?;
    let t_mean: Vec<f64> = model.target.mean.iter().copied().collect();
    let mut rows = Vec::with_capacity(d.n());
    for i in 0..d.n() {
        let x: Vec<f64> = d.x.row(i).iter().copied().collect();
        let hood = &model.neighborhoods[model.assignment[i]];
        let mu: Vec<f64> = hood.mean.iter().copied().collect();
        rows.push(vec![
            d.ids[i].clone(),
            r.neighborhood[i].to_string(),
            fmt_f64(mahalanobis_pair(&x, &t_mean, &t_inv)?),
            fmt_f64(mahalanobis_pair(&x, &mu, &hood.sigma_inv)?),
            fmt_f64(r.next_distance[i]),
            r.flags[i].to_string(),
        ]);
    }
    write_table(
        path,
        &[
            "id",
            "neighborhood",
            "global_distance",
            "local_distance",
            "next_distance",
            "flag",
        ],
        rows,
    )
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<String> {
    let sim = simulate_section(cfg)?;
    let spec = ExperimentSpec {
        setup: sim.setup.clone(),
        contamination: sim.contamination,
        fit: cfg.fit.clone(),
        k: cfg.k,
        replications: sim.replications,
        seed: cfg.seed,
    };
    let result = run_detection_experiment(&spec)?;
    let out = prepare_out(cfg)?;
    write_table(
        &out.join("raw.csv"),
        &[
            "replication",
            "seed",
            "outliers",
            "flagged",
            "tp",
            "fp",
            "tn",
            "fn",
            "fnr",
            "fpr",
            "f1",
            "flagged_fraction",
            "errors",
        ],
        result.rows.iter().map(|r| {
            let m = r.metrics.as_ref();
            let count = |f: fn(&ssmrcd::simulate::Metrics) -> usize| {
                m.map(|m| f(m).to_string()).unwrap_or_default()
            };
            vec![
                r.replication.to_string(),
                r.seed.to_string(),
                r.outliers.to_string(),
                r.flagged.to_string(),
                count(|m| m.tp),
                count(|m| m.fp),
                count(|m| m.tn),
                count(|m| m.fn_),
                fmt_opt(m.and_then(|m| m.fnr)),
                fmt_opt(m.and_then(|m| m.fpr)),
                fmt_opt(m.map(|m| m.f1)),
                fmt_opt(m.map(|m| m.flagged_fraction())),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )?;
    write_table(
        &out.join("summary.csv"),
        &["metric", "mean", "q05", "q95", "count"],
        result.summary.iter().map(|s| {
            vec![
                s.metric.clone(),
                fmt_f64(s.mean),
                fmt_f64(s.q05),
                fmt_f64(s.q95),
                s.count.to_string(),
            ]
        }),
    )?;
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    let mean = |m: &str| result.mean(m).map(fmt_f64).unwrap_or_else(|| "NaN".into());
    Ok(format!(
        "simulate: {} replications, {failed} failed, mean f1 {}, mean fpr {}, mean fnr {}",
        result.rows.len(),
        mean("f1"),
        mean("fpr"),
        mean("fnr")
    ))
}

pub fn cmd_bench(cfg: &RunConfig) -> CliResult<String> {
    let spec = cfg.bench.clone().unwrap_or_default();
    let rows = run_benchmark(&spec)?;
    let out = prepare_out(cfg)?;
    write_table(
        &out.join("bench.csv"),
        &[
            "parameter",
            "p",
            "n",
            "neighborhoods",
            "lambda",
            "mean_seconds",
            "q05",
            "q95",
            "replications",
        ],
        rows.iter().map(|r| {
            vec![
                r.parameter.clone(),
                r.p.to_string(),
                r.n.to_string(),
                r.neighborhoods.to_string(),
                fmt_f64(r.lambda),
                fmt_f64(r.mean),
                fmt_f64(r.q05),
                fmt_f64(r.q95),
                r.replications.to_string(),
            ]
        }),
    )?;
    let by_p: Vec<_> = rows.iter().filter(|r| r.parameter == "p").collect();
    let slope = if by_p.len() >= 2 {
        let x: Vec<f64> = by_p.iter().map(|r| r.p as f64).collect();
        let y: Vec<f64> = by_p.iter().map(|r| r.mean).collect();
        format!(", log-log slope in p {}", fmt_f64(loglog_slope(&x, &y)?))
    } else {
        String::new()
    };
    Ok(format!("bench: {} cells timed{slope}", rows.len()))
}

pub fn cmd_tune(cfg: &RunConfig) -> CliResult<String> {
    let Some(tune) = &cfg.tune else {
        return validation("tune needs a \"tune\" section in the config");
    };
    let table = load_dataset(cfg.require_data()?)?;
    let result = tune_lambda(
        &table.dataset,
        &cfg.fit,
        &tune.lambdas,
        cfg.k,
        tune.pairs_per_trial,
        tune.trials,
        cfg.seed,
    )?;
    let out = prepare_out(cfg)?;
    write_table(
        &out.join("tune_raw.csv"),
        &[
            "lambda",
            "trial",
            "found_fraction",
            "total_flagged",
            "errors",
        ],
        result.rows.iter().map(|r| {
            vec![
                fmt_f64(r.lambda),
                r.trial.to_string(),
                fmt_opt(r.found_fraction),
                r.total_flagged.map(|v| v.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )?;
    write_table(
        &out.join("tune_summary.csv"),
        &["lambda", "found_fraction", "total_flagged", "trials"],
        result.summary.iter().map(|s| {
            vec![
                fmt_f64(s.lambda),
                fmt_f64(s.found_fraction),
                fmt_f64(s.total_flagged),
                s.trials.to_string(),
            ]
        }),
    )?;
    let best = result
        .summary
        .iter()
        .max_by(|a, b| a.found_fraction.total_cmp(&b.found_fraction))
        .map(|s| {
            format!(
                ", highest found fraction {} at lambda {}",
                fmt_f64(s.found_fraction),
                fmt_f64(s.lambda)
            )
        })
        .unwrap_or_default();
    Ok(format!(
        "tune: {} lambdas x {} trials{best}",
        tune.lambdas.len(),
        tune.trials
    ))
}

pub fn cmd_trace(cfg: &RunConfig) -> CliResult<String> {
    let sim = simulate_section(cfg)?;
    let report = convergence_trace(&sim.setup, &sim.contamination, &cfg.fit, cfg.seed)?;
    let out = prepare_out(cfg)?;
    write_table(
        &out.join("trace.csv"),
        &["start", "sweep", "objective"],
        report.rows.iter().map(|r| {
            vec![
                r.start.to_string(),
                r.sweep.to_string(),
                fmt_f64(r.objective),
            ]
        }),
    )?;
    Ok(format!(
        "trace: {} chains, {} converged, monotone fraction {}, substeps nonincreasing {}",
        report.chains,
        report.converged_chains,
        fmt_f64(report.monotone_fraction),
        report.substeps_nonincreasing
    ))
}

/// Writes one simulated dataset and its outlier labels.
pub fn cmd_generate(cfg: &RunConfig) -> CliResult<String> {
    let sim = simulate_section(cfg)?;
    let clean = SimTruth::clean(sim.setup.generate(cfg.seed)?);
    let truth = sim.contamination.apply(&clean, cfg.seed)?;
    let out = prepare_out(cfg)?;
    let table = Table {
        variables: default_variables(truth.dataset.p()),
        dataset: truth.dataset,
    };
    let data_path: PathBuf = out.join("data.csv");
    save_dataset(&data_path, &table)?;
    write_table(
        &out.join("labels.csv"),
        &["id", "outlier"],
        table
            .dataset
            .ids
            .iter()
            .zip(&truth.labels)
            .map(|(id, l)| vec![id.clone(), l.to_string()]),
    )?;
    Ok(format!(
        "generate: {} observations, {} contaminated, written to {}",
        table.dataset.n(),
        truth.labels.iter().filter(|&&l| l).count(),
        data_path.display()
    ))
}
