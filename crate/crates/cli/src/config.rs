//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssmrcd::simulate::{BenchSpec, Contamination, FitSettings, Setup};

use crate::error::{io_error, validation, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV for `fit`, `detect` and `tune`.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Model file read by `detect`; when absent `detect` fits first.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub bench: Option<BenchSpec>,
    #[serde(default)]
    pub tune: Option<TuneConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub setup: Setup,
    #[serde(default = "no_contamination")]
    pub contamination: Contamination,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub lambdas: Vec<f64>,
    pub pairs_per_trial: usize,
    #[serde(default = "default_replications")]
    pub trials: usize,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_k() -> usize {
    ssmrcd::detect::DEFAULT_K
}

fn default_replications() -> usize {
    20
}

fn no_contamination() -> Contamination {
    Contamination::None
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            model: None,
            out: default_out(),
            seed: 0,
            k: default_k(),
            threads: None,
            fit: FitSettings::default(),
            simulate: None,
            bench: None,
            tune: None,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths inside it are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data, &mut cfg.model].into_iter().flatten() {
            *p = base.join(&*p);
        }
        cfg.out = base.join(&cfg.out);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> CliResult<()> {
        if let Some(v) = &o.data {
            self.data = Some(v.clone());
        }
        if let Some(v) = &o.model {
            self.model = Some(v.clone());
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.lambda {
            self.fit.lambda = v;
        }
        if let Some(v) = o.k {
            self.k = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.threads {
            self.threads = Some(v);
        }
        self.validate()
    }

    pub fn validate(&self) -> CliResult<()> {
        let f = &self.fit;
        if !(0.0..1.0).contains(&f.lambda) {
            return validation(format!("fit.lambda must lie in [0, 1), got {}", f.lambda));
        }
        if !(0.5..=1.0).contains(&f.alpha) {
            return validation(format!("fit.alpha must lie in [0.5, 1], got {}", f.alpha));
        }
        if f.gx == 0 || f.gy == 0 || f.min_size == 0 {
            return validation("fit.gx, fit.gy and fit.min_size must be positive");
        }
        if !(f.max_cond > 1.0) {
            return validation(format!("fit.max_cond must exceed 1, got {}", f.max_cond));
        }
        if f.max_iter == 0 || f.max_starts == Some(0) {
            return validation("fit.max_iter and fit.max_starts must be positive");
        }
        if self.k == 0 {
            return validation("k must be positive");
        }
        if self.threads == Some(0) {
            return validation("threads must be positive");
        }
        if let Some(s) = &self.simulate {
            if s.replications == 0 {
                return validation("simulate.replications must be positive");
            }
            match s.contamination {
                Contamination::Random { beta } | Contamination::Extreme { beta }
                    if !(0.0..0.5).contains(&beta) =>
                {
                    return validation(format!(
                        "contamination beta must lie in [0, 0.5), got {beta}"
                    ));
                }
                _ => {}
            }
        }
        if let Some(t) = &self.tune {
            if t.lambdas.is_empty() || t.lambdas.iter().any(|l| !(0.0..1.0).contains(l)) {
                return validation("tune.lambdas must be a nonempty list of values in [0, 1)");
            }
            if t.pairs_per_trial == 0 || t.trials == 0 {
                return validation("tune.pairs_per_trial and tune.trials must be positive");
            }
        }
        if let Some(b) = &self.bench {
            if b.replications == 0 {
                return validation("bench.replications must be positive");
            }
        }
        Ok(())
    }

    pub fn require_data(&self) -> CliResult<&Path> {
        match &self.data {
            Some(p) => Ok(p),
            None => validation("no input data: set \"data\" in the config or pass --data"),
        }
    }
}
