use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use ssmrcd::numerics::chi2_quantile;
use ssmrcd::simulate::setup2_generate;
use ssmrcd_cli::commands::{ellipse_points, ELLIPSE_POINTS};
use ssmrcd_cli::config::RunConfig;
use ssmrcd_cli::data::{
    default_variables, load_dataset, read_dataset, save_dataset, write_dataset, Table,
};
use ssmrcd_cli::model_file::ModelFile;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ssmrcd"));
    c.env_remove("SSMRCD_THREADS");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn field_table(seed: u64) -> Table {
    let d = setup2_generate(15, 3, 1.5, 0.7, seed).unwrap();
    Table {
        variables: default_variables(3),
        dataset: d,
    }
}

/// Temp dir holding `data.csv` and a `cfg.json` with a 2 x 2 grid.
fn workspace(extra: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    save_dataset(&dir.path().join("data.csv"), &field_table(5)).unwrap();
    let cfg = format!(r#"{{"data": "data.csv", "seed": 4, "fit": {{"gx": 2, "gy": 2}}{extra}}}"#);
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    dir
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let (h, rows) = read_csv(path);
    let c = h.iter().position(|x| x == name).unwrap();
    rows.into_iter().map(|r| r[c].clone()).collect()
}

fn load_err(text: &str) -> String {
    read_dataset(text.as_bytes(), "in.csv")
        .unwrap_err()
        .to_string()
}

#[test]
fn loads_small_file() {
    let t = read_dataset(
        "id,coord_1,coord_2,a,b\nw,0,0,1,2\nx,1,0,3,4\ny,0,1,5,6\nz,1,1,7,8.5\n".as_bytes(),
        "in",
    )
    .unwrap();
    assert_eq!((t.dataset.n(), t.dataset.p()), (4, 2));
    assert_eq!(t.variables, ["a", "b"]);
    assert_eq!(t.dataset.ids, ["w", "x", "y", "z"]);
    assert_eq!(t.dataset.x[(3, 1)], 8.5);
}

#[test]
fn load_errors_name_their_location() {
    let e = load_err("id,coord_1,coord_2,a\n1,0,0,1\n2,1,0,\n3,0,1,2\n4,1,1,3\n");
    assert!(
        e.contains("line 3") && e.contains("column 4") && e.contains("missing"),
        "{e}"
    );
    let e = load_err("id,coord_1,coord_2,a\n1,0,0,1\n2,1,zz,2\n3,0,1,2\n4,1,1,3\n");
    assert!(e.contains("line 3") && e.contains("coord_2"), "{e}");
    let e = load_err("id,coord_1,coord_2,a\n1,0,0,1\n2,1,0,2\n1,0,1,2\n4,1,1,3\n");
    assert!(e.contains("line 4") && e.contains("duplicate"), "{e}");
    let e = load_err("id,coord_1,coord_2,a\n1,0,0,1\n2,1,0,2\n3,0,1,2\n");
    assert!(e.contains("at least 4"), "{e}");
    let e = load_err("id,x,y,a\n1,0,0,1\n2,1,0,2\n3,0,1,2\n4,1,1,3\n");
    assert!(e.contains("header"), "{e}");
    let e = load_err("id,coord_1,coord_2\n1,0,0\n2,1,0\n3,0,1\n4,1,1\n");
    assert!(e.contains("header"), "{e}");
}

#[test]
fn dataset_round_trip_is_byte_identical() {
    let t = field_table(2);
    let mut first = Vec::new();
    write_dataset(&mut first, &t).unwrap();
    let back = read_dataset(first.as_slice(), "mem").unwrap();
    assert_eq!(back, t);
    let mut second = Vec::new();
    write_dataset(&mut second, &back).unwrap();
    assert_eq!(first, second);
    let long = "id,coord_1,coord_2,a\n1,0,0,0.10000000000000001\n2,1,0,2\n3,0,1,3\n4,1,1,4\n";
    assert_eq!(
        read_dataset(long.as_bytes(), "mem").unwrap().dataset.x[(0, 0)],
        0.1
    );
}

#[test]
fn unsmoothed_single_neighborhood_sigma_is_k() {
    let dir = workspace("");
    ok(
        dir.path(),
        &["fit", "--config", "cfg.json", "--lambda", "0"],
    );
    std::fs::write(
        dir.path().join("one.json"),
        r#"{"data": "data.csv", "fit": {"gx": 1, "gy": 1, "lambda": 0}}"#,
    )
    .unwrap();
    ok(dir.path(), &["fit", "--config", "one.json"]);
    let m = ModelFile::load(&dir.path().join("out/model.json")).unwrap();
    assert_eq!(m.neighborhoods.len(), 1);
    assert_eq!(m.neighborhoods[0].sigma, m.neighborhoods[0].k);
}

#[test]
fn reloaded_model_gives_bit_identical_reports() {
    let dir = workspace("");
    ok(
        dir.path(),
        &["fit", "--config", "cfg.json", "--out", "fitted"],
    );
    ok(
        dir.path(),
        &[
            "detect",
            "--config",
            "cfg.json",
            "--model",
            "fitted/model.json",
            "--out",
            "reloaded",
        ],
    );
    ok(
        dir.path(),
        &["detect", "--config", "cfg.json", "--out", "direct"],
    );
    for f in ["report.csv", "distances.csv", "ellipses.csv"] {
        let a = std::fs::read(dir.path().join("reloaded").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("direct").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn model_file_follows_schema() {
    let dir = workspace("");
    ok(dir.path(), &["fit", "--config", "cfg.json"]);
    let path = dir.path().join("out/model.json");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        [
            "alpha",
            "config",
            "format",
            "lambda",
            "neighborhoods",
            "objective",
            "seed",
            "target",
            "trace",
            "variables",
            "version",
            "weights"
        ]
    );
    let m = ModelFile::load(&path).unwrap();
    assert_eq!(m.neighborhoods.len(), 4);
    let data = load_dataset(&dir.path().join("data.csv")).unwrap();
    let total: usize = m.neighborhoods.iter().map(|n| n.member_ids.len()).sum();
    assert_eq!(total, data.dataset.n());
    for n in &m.neighborhoods {
        assert_eq!(
            n.subset_ids.len(),
            (0.75 * n.member_ids.len() as f64).ceil() as usize
        );
        assert!(n.subset_ids.iter().all(|id| n.member_ids.contains(id)));
    }
    assert_eq!(m.seed, 4);
    let mut extra = v.clone();
    extra["surprise"] = serde_json::json!(1);
    std::fs::write(&path, extra.to_string()).unwrap();
    assert!(ModelFile::load(&path).is_err());
}

#[test]
fn report_columns_are_consistent() {
    let dir = workspace("");
    ok(dir.path(), &["detect", "--config", "cfg.json"]);
    let report = dir.path().join("out/report.csv");
    let (h, _) = read_csv(&report);
    assert_eq!(
        h,
        [
            "id",
            "neighborhood",
            "next_distance",
            "cutoff",
            "ratio",
            "flag",
            "nearest_id"
        ]
    );
    let cutoff = column(&report, "cutoff");
    assert!(cutoff.iter().all(|c| *c == cutoff[0]));
    let ratio = column(&report, "ratio");
    let flag = column(&report, "flag");
    for (r, f) in ratio.iter().zip(&flag) {
        assert_eq!(r.parse::<f64>().unwrap() > 1.0, f == "true");
    }
    let dist = column(&report, "next_distance");
    let c: f64 = cutoff[0].parse().unwrap();
    for (d, r) in dist.iter().zip(&ratio) {
        assert_eq!(d.parse::<f64>().unwrap() / c, r.parse::<f64>().unwrap());
    }
    assert_eq!(
        column(&dir.path().join("out/distances.csv"), "next_distance"),
        dist
    );
}

#[test]
fn ellipse_points_lie_on_the_tolerance_contour() {
    let dir = workspace("");
    ok(dir.path(), &["fit", "--config", "cfg.json"]);
    let data = load_dataset(&dir.path().join("data.csv")).unwrap();
    let model = ModelFile::load(&dir.path().join("out/model.json"))
        .unwrap()
        .to_model(&data.dataset)
        .unwrap();
    let q = chi2_quantile(0.975, 2).unwrap();
    let v: DMatrix<f64> = model.target.eigenvectors.columns(0, 2).into_owned();
    let ellipses = ellipse_points(&model).unwrap();
    assert_eq!(ellipses.len(), model.neighborhoods.len());
    for (pts, n) in ellipses.iter().zip(&model.neighborhoods) {
        assert_eq!(pts.len(), ELLIPSE_POINTS);
        let s = v.transpose() * n.sigma.as_matrix() * &v;
        let s_inv = s.try_inverse().unwrap();
        let c = v.transpose() * &n.mean;
        for p in pts {
            let d = nalgebra::DVector::from_vec(vec![p[0] - c[0], p[1] - c[1]]);
            let form = (d.transpose() * &s_inv * &d)[0];
            assert!((form - q).abs() <= 1e-8 * q, "{form} vs {q}");
        }
    }
    ok(
        dir.path(),
        &["detect", "--config", "cfg.json", "--out", "det"],
    );
    let (_, rows) = read_csv(&dir.path().join("det/ellipses.csv"));
    assert_eq!(rows.len(), ELLIPSE_POINTS * model.neighborhoods.len());
}

const SIM: &str = r#", "simulate": {"setup": {"kind": "random_field", "n_side": 15, "p": 3, "nu": 1.5, "delta": 0.7}, "contamination": {"kind": "random", "beta": 0.05}, "replications": REPS}"#;

fn sim_workspace(reps: usize) -> TempDir {
    workspace(&SIM.replace("REPS", &reps.to_string()))
}

fn mean_of(col: &[String]) -> f64 {
    let v: Vec<f64> = col
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().unwrap())
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn summary_means(path: &Path) -> Vec<(String, f64)> {
    let (_, rows) = read_csv(path);
    rows.into_iter()
        .map(|r| (r[0].clone(), r[1].parse().unwrap()))
        .collect()
}

#[test]
fn simulate_aggregates_match_raw_rows() {
    let dir = sim_workspace(4);
    let line = ok(dir.path(), &["simulate", "--config", "cfg.json"]);
    assert!(line.starts_with("simulate: 4 replications"), "{line}");
    let raw = dir.path().join("out/raw.csv");
    assert_eq!(column(&raw, "errors"), vec![""; 4]);
    for (metric, mean) in summary_means(&dir.path().join("out/summary.csv")) {
        let expect = mean_of(&column(&raw, &metric));
        assert!(
            (mean - expect).abs() <= 1e-12 * expect.abs().max(1.0),
            "{metric}: {mean} vs {expect}"
        );
    }
}

#[test]
fn single_replication_summary_equals_raw() {
    let dir = sim_workspace(1);
    ok(dir.path(), &["simulate", "--config", "cfg.json"]);
    let raw = dir.path().join("out/raw.csv");
    for (metric, mean) in summary_means(&dir.path().join("out/summary.csv")) {
        assert_eq!(mean, column(&raw, &metric)[0].parse::<f64>().unwrap());
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = sim_workspace(2);
    ok(
        dir.path(),
        &["simulate", "--config", "cfg.json", "--out", "a"],
    );
    ok(
        dir.path(),
        &[
            "simulate",
            "--config",
            "cfg.json",
            "--out",
            "b",
            "--threads",
            "2",
        ],
    );
    for f in ["raw.csv", "summary.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
    ok(
        dir.path(),
        &["trace", "--config", "cfg.json", "--out", "t1"],
    );
    ok(
        dir.path(),
        &["trace", "--config", "cfg.json", "--out", "t2"],
    );
    assert_eq!(
        std::fs::read(dir.path().join("t1/trace.csv")).unwrap(),
        std::fs::read(dir.path().join("t2/trace.csv")).unwrap()
    );
}

#[test]
fn failed_replications_are_recorded() {
    let dir = sim_workspace(2);
    let out = ok(
        dir.path(),
        &["simulate", "--config", "cfg.json", "--out", "fine"],
    );
    assert!(out.contains("0 failed"));
    std::fs::write(
        dir.path().join("fine.json"),
        format!(
            r#"{{"fit": {{"gx": 8, "gy": 8}}{}}}"#,
            SIM.replace("REPS", "2")
        ),
    )
    .unwrap();
    let out = ok(dir.path(), &["simulate", "--config", "fine.json"]);
    assert!(out.contains("2 failed"), "{out}");
    let errors = column(&dir.path().join("out/raw.csv"), "errors");
    assert!(
        errors.iter().all(|e| e.contains("neighborhood")),
        "{errors:?}"
    );
}

#[test]
fn tune_and_generate_write_tables() {
    let dir = workspace(r#", "tune": {"lambdas": [0.0, 0.5], "pairs_per_trial": 3, "trials": 2}"#);
    let line = ok(dir.path(), &["tune", "--config", "cfg.json"]);
    assert!(line.starts_with("tune: 2 lambdas x 2 trials"), "{line}");
    let (_, rows) = read_csv(&dir.path().join("out/tune_summary.csv"));
    assert_eq!(rows.len(), 2);
    let (_, raw) = read_csv(&dir.path().join("out/tune_raw.csv"));
    assert_eq!(raw.len(), 4);

    let dir = sim_workspace(1);
    ok(
        dir.path(),
        &["generate", "--config", "cfg.json", "--out", "gen"],
    );
    let t = load_dataset(&dir.path().join("gen/data.csv")).unwrap();
    assert_eq!(t.dataset.n(), 225);
    let labels = column(&dir.path().join("gen/labels.csv"), "outlier");
    assert_eq!(labels.iter().filter(|l| *l == "true").count(), 10);
}

#[test]
fn bench_writes_one_row_per_cell() {
    let dir = workspace(
        r#", "bench": {"p": [2, 3], "defaults": {"p": 2, "n_side": 11, "cells": 2, "lambda": 0.5}, "replications": 1}"#,
    );
    let line = ok(dir.path(), &["bench", "--config", "cfg.json"]);
    assert!(line.contains("log-log slope"), "{line}");
    let (_, rows) = read_csv(&dir.path().join("out/bench.csv"));
    assert_eq!(rows.len(), 2);
}

#[test]
fn overrides_are_echoed() {
    let dir = workspace("");
    ok(
        dir.path(),
        &[
            "fit", "--config", "cfg.json", "--lambda", "0.25", "--seed", "9", "--k", "7",
        ],
    );
    let m = ModelFile::load(&dir.path().join("out/model.json")).unwrap();
    assert_eq!(
        (
            m.config.fit.lambda,
            m.config.seed,
            m.config.k,
            m.seed,
            m.lambda
        ),
        (0.25, 9, 7, 9, 0.25)
    );
    let echo: RunConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/config.json")).unwrap())
            .unwrap();
    assert_eq!(echo, m.config);
}

fn expect_exit(dir: &Path, args: &[&str], code: i32, needle: &str) {
    let out = run(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}");
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err
        .lines()
        .find(|l| l.starts_with("error:"))
        .unwrap_or_else(|| panic!("no error line: {err}"));
    assert!(line.contains(needle), "{line}");
}

#[test]
fn exit_codes_separate_validation_from_computation() {
    let dir = workspace("");
    let d = dir.path();
    std::fs::write(
        d.join("unknown.json"),
        r#"{"data": "data.csv", "lamda": 0.5}"#,
    )
    .unwrap();
    expect_exit(d, &["fit", "--config", "unknown.json"], 1, "unknown field");
    std::fs::write(
        d.join("nested.json"),
        r#"{"data": "data.csv", "fit": {"gx": 2, "smooth": 1}}"#,
    )
    .unwrap();
    expect_exit(d, &["fit", "--config", "nested.json"], 1, "unknown field");
    expect_exit(
        d,
        &["fit", "--config", "cfg.json", "--lambda", "1"],
        1,
        "lambda",
    );
    expect_exit(d, &["fit", "--config", "missing.json"], 1, "missing.json");
    expect_exit(d, &["fit"], 1, "no input data");
    expect_exit(
        d,
        &["fit", "--config", "cfg.json", "--frobnicate"],
        1,
        "frobnicate",
    );
    expect_exit(d, &["simulate", "--config", "cfg.json"], 1, "simulate");
    let out = bin()
        .current_dir(d)
        .args(["fit", "--config", "cfg.json"])
        .env("SSMRCD_THREADS", "none")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(
        d.join("fine.json"),
        r#"{"data": "data.csv", "fit": {"gx": 9, "gy": 9}}"#,
    )
    .unwrap();
    expect_exit(d, &["fit", "--config", "fine.json"], 2, "neighborhood");
}

#[test]
fn detect_rejects_foreign_models() {
    let dir = workspace("");
    let d = dir.path();
    ok(d, &["fit", "--config", "cfg.json"]);
    let mut other = field_table(5);
    other.dataset.ids[0] = "stranger".into();
    save_dataset(&d.join("other.csv"), &other).unwrap();
    expect_exit(
        d,
        &[
            "detect",
            "--config",
            "cfg.json",
            "--data",
            "other.csv",
            "--model",
            "out/model.json",
        ],
        1,
        "not in the data",
    );
}

#[test]
fn config_paths_are_relative_to_the_config_file() {
    let dir = workspace("");
    let nested = dir.path().join("sub");
    std::fs::create_dir(&nested).unwrap();
    std::fs::write(
        nested.join("cfg.json"),
        r#"{"data": "../data.csv", "out": "res", "fit": {"gx": 2, "gy": 2}}"#,
    )
    .unwrap();
    ok(dir.path(), &["fit", "--config", "sub/cfg.json"]);
    assert!(PathBuf::from(&nested).join("res/model.json").exists());
}
