use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ssmrcd_cli::commands;
use ssmrcd_cli::config::{Overrides, RunConfig};
use ssmrcd_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "ssmrcd",
    version,
    about = "Spatially smoothed MRCD fitting and local outlier detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the estimator and write model.json.
    Fit(Common),
    /// Write report.csv, ellipses.csv and distances.csv.
    Detect(Common),
    /// Run a seeded detection experiment.
    Simulate(Common),
    /// Time fits while varying one parameter at a time.
    Bench(Common),
    /// Compare smoothing values by planting swaps into the data.
    Tune(Common),
    /// Export objective paths of one instrumented fit.
    Trace(Common),
    /// Write one simulated dataset with its outlier labels.
    Generate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to SSMRCD_THREADS, then the config.
    #[arg(long)]
    threads: Option<usize>,
}

fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var("SSMRCD_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Validation(format!(
                "SSMRCD_THREADS must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

fn resolve(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let threads = match c.threads {
        Some(t) => Some(t),
        None => threads_from_env()?,
    };
    cfg.apply(&Overrides {
        data: c.data.clone(),
        model: c.model.clone(),
        out: c.out.clone(),
        lambda: c.lambda,
        k: c.k,
        seed: c.seed,
        threads,
    })?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Compute(e.to_string()))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Fit(c) => commands::cmd_fit(&resolve(&c)?),
        Command::Detect(c) => commands::cmd_detect(&resolve(&c)?),
        Command::Simulate(c) => commands::cmd_simulate(&resolve(&c)?),
        Command::Bench(c) => commands::cmd_bench(&resolve(&c)?),
        Command::Tune(c) => commands::cmd_tune(&resolve(&c)?),
        Command::Trace(c) => commands::cmd_trace(&resolve(&c)?),
        Command::Generate(c) => commands::cmd_generate(&resolve(&c)?),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!(
                "{}",
                if first.starts_with("error:") {
                    first.to_string()
                } else {
                    format!("error: {first}")
                }
            );
            std::process::exit(1);
        }
    };
    match run(cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            for line in e.to_string().lines() {
                eprintln!("error: {line}");
            }
            std::process::exit(e.exit_code());
        }
    }
}
