//! JSON model file written by `fit` and read by `detect`.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use ssmrcd::numerics::SymmetricMatrix;
use ssmrcd::spatial::{Dataset, NeighborhoodStructure, WeightMatrix};
use ssmrcd::ssmrcd::{ChainStatus, NeighborhoodFit, SsMrcdModel, Target};

use crate::config::RunConfig;
use crate::error::{io_error, validation, CliError, CliResult};

pub const FORMAT: &str = "ssmrcd-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: RunConfig,
    pub variables: Vec<String>,
    pub lambda: f64,
    pub alpha: f64,
    pub weights: Vec<Vec<f64>>,
    pub target: TargetFile,
    pub neighborhoods: Vec<NeighborhoodFile>,
    pub objective: f64,
    pub trace: TraceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetFile {
    pub mean: Vec<f64>,
    pub scatter: SymmetricMatrix,
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, stored row by row.
    pub eigenvectors: Vec<Vec<f64>>,
    pub from_mcd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborhoodFile {
    pub index: usize,
    pub center: [f64; 2],
    pub member_ids: Vec<String>,
    pub rho: f64,
    pub subset_ids: Vec<String>,
    pub mu: Vec<f64>,
    pub k: SymmetricMatrix,
    pub sigma: SymmetricMatrix,
    pub sigma_inv: SymmetricMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSummary {
    pub chains: usize,
    pub converged_chains: usize,
    pub best_chain: usize,
    pub converged: bool,
    pub monotone_fraction: f64,
    /// Objective path of the best chain.
    pub best_path: Vec<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn from_rows(r: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    let n = r.len();
    let m = r.first().map_or(0, Vec::len);
    if n == 0 || r.iter().any(|row| row.len() != m) {
        return validation(format!(
            "model: {what} must be a nonempty rectangular matrix"
        ));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| r[i][j]))
}

impl ModelFile {
    pub fn from_model(
        model: &SsMrcdModel,
        structure: &NeighborhoodStructure,
        data: &Dataset,
        variables: &[String],
        config: &RunConfig,
    ) -> Self {
        let ids = |idx: &[usize]| idx.iter().map(|&i| data.ids[i].clone()).collect::<Vec<_>>();
        let best = model.traces.get(model.best_chain);
        ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            seed: config.seed,
            config: config.clone(),
            variables: variables.to_vec(),
            lambda: model.lambda,
            alpha: model.alpha,
            weights: model.weights.to_rows(),
            target: TargetFile {
                mean: model.target.mean.iter().copied().collect(),
                scatter: model.target.scatter.clone(),
                eigenvalues: model.target.eigenvalues.iter().copied().collect(),
                eigenvectors: rows(&model.target.eigenvectors),
                from_mcd: model.target.from_mcd,
            },
            neighborhoods: model
                .neighborhoods
                .iter()
                .enumerate()
                .map(|(index, n)| NeighborhoodFile {
                    index,
                    center: structure.centers[index],
                    member_ids: ids(&n.members),
                    rho: n.rho,
                    subset_ids: ids(&n.subset),
                    mu: n.mean.iter().copied().collect(),
                    k: n.k.clone(),
                    sigma: n.sigma.clone(),
                    sigma_inv: n.sigma_inv.clone(),
                })
                .collect(),
            objective: model.objective,
            trace: TraceSummary {
                chains: model.traces.len(),
                converged_chains: model
                    .traces
                    .iter()
                    .filter(|t| t.status == ChainStatus::Converged)
                    .count(),
                best_chain: model.best_chain,
                converged: model.converged,
                monotone_fraction: model.monotone_fraction,
                best_path: best.map(|t| t.objectives.clone()).unwrap_or_default(),
            },
        }
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| CliError::Compute(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let m: ModelFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if m.format != FORMAT || m.version != VERSION {
            return validation(format!(
                "{}: expected format {FORMAT:?} version {VERSION}, found {:?} version {}",
                path.display(),
                m.format,
                m.version
            ));
        }
        Ok(m)
    }

    /// Rebuilds the fitted model on `data`, whose ids must be exactly the
    /// ids the model was fitted on.
    pub fn to_model(&self, data: &Dataset) -> CliResult<SsMrcdModel> {
        let p = self.target.mean.len();
        if data.p() != p {
            return validation(format!("model has {p} variables, data has {}", data.p()));
        }
        let index: HashMap<&str, usize> = data
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let lookup = |ids: &[String]| -> CliResult<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    index.get(id.as_str()).copied().ok_or_else(|| {
                        CliError::Validation(format!("model id {id:?} is not in the data"))
                    })
                })
                .collect()
        };
        let mut assignment = vec![usize::MAX; data.n()];
        let mut neighborhoods = Vec::with_capacity(self.neighborhoods.len());
        for (i, n) in self.neighborhoods.iter().enumerate() {
            if n.index != i {
                return validation(format!(
                    "model: neighborhood {i} is stored with index {}",
                    n.index
                ));
            }
            let members = lookup(&n.member_ids)?;
            for &m in &members {
                if assignment[m] != usize::MAX {
                    return validation(format!(
                        "model: id {:?} belongs to two neighborhoods",
                        data.ids[m]
                    ));
                }
                assignment[m] = i;
            }
            let mut subset = lookup(&n.subset_ids)?;
            subset.sort_unstable();
            for s in [&n.k, &n.sigma, &n.sigma_inv] {
                if s.dim() != p {
                    return validation(format!(
                        "model: neighborhood {i} matrices must be {p} x {p}"
                    ));
                }
            }
            if n.mu.len() != p {
                return validation(format!(
                    "model: neighborhood {i} mean must have {p} entries"
                ));
            }
            neighborhoods.push(NeighborhoodFit {
                members,
                subset,
                rho: n.rho,
                mean: DVector::from_vec(n.mu.clone()),
                k: n.k.clone(),
                sigma: n.sigma.clone(),
                sigma_inv: n.sigma_inv.clone(),
                starts: Vec::new(),
            });
        }
        if let Some(i) = assignment.iter().position(|&a| a == usize::MAX) {
            return validation(format!(
                "data id {:?} is not covered by the model",
                data.ids[i]
            ));
        }
        let eigenvectors = from_rows(&self.target.eigenvectors, "target eigenvectors")?;
        if eigenvectors.shape() != (p, p)
            || self.target.eigenvalues.len() != p
            || self.target.scatter.dim() != p
        {
            return validation(format!("model: target must be {p}-dimensional"));
        }
        Ok(SsMrcdModel {
            lambda: self.lambda,
            alpha: self.alpha,
            weights: WeightMatrix::try_new(from_rows(&self.weights, "weights")?)?,
            target: Target {
                mean: DVector::from_vec(self.target.mean.clone()),
                scatter: self.target.scatter.clone(),
                eigenvalues: DVector::from_vec(self.target.eigenvalues.clone()),
                eigenvectors,
                from_mcd: self.target.from_mcd,
            },
            assignment,
            neighborhoods,
            objective: self.objective,
            traces: Vec::new(),
            best_chain: self.trace.best_chain,
            monotone_fraction: self.trace.monotone_fraction,
            converged: self.trace.converged,
        })
    }
}
