//! Pipeline configuration file.
//!
//! One JSON document; unknown keys are rejected. Seeds may be omitted, in which
//! case they are drawn from entropy and written back into the resolved config
//! (unless strict reproducibility is requested).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fokker_planck::PdeGrid;
use crate::km::BinningConfig;
use crate::model::SdeModel;
use crate::sim::{InitialState, SimulationConfig};
use crate::ssr::{SelectionRule, Weighting};
use crate::transition_path::PathProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FromData {
    #[serde(rename = "from-data")]
    FromData,
}

/// Generating model, or the marker `"from-data"` for externally supplied pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    FromData(FromData),
    Known(SdeModel),
}

impl ModelSource {
    pub fn known(&self) -> Option<&SdeModel> {
        match self {
            ModelSource::Known(m) => Some(m),
            ModelSource::FromData(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub x0: InitialState,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub domain_clip: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSection {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub fold_seed: Option<u64>,
    pub max_degree_scan: Vec<usize>,
    #[serde(default)]
    pub selection: SelectionRule,
    #[serde(default)]
    pub weighting: Weighting,
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    pub x_lo: f64,
    pub x_hi: f64,
    #[serde(default = "default_n_x")]
    pub n_x: usize,
    /// Defaults to `dt_pde <= dx / 12`.
    #[serde(default)]
    pub n_t: Option<usize>,
}

fn default_n_x() -> usize {
    401
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelSource,
    /// Pair CSV consumed when `model` is `"from-data"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    pub binning: BinningConfig,
    pub regression: RegressionSection,
    pub pde: PdeSection,
    pub problem: PathProblem,
    pub output_dir: PathBuf,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub strict_repro: bool,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies overrides, fills missing seeds and validates every section.
    pub fn resolve(mut self, ov: &Overrides) -> Result<Self> {
        if let Some(dir) = &ov.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(sim) = &mut self.simulation {
            if let Some(seed) = ov.seed {
                sim.seed = Some(seed);
            }
            if sim.seed.is_none() {
                if ov.strict_repro {
                    return Err(Error::Config("simulation.seed is required with --strict-repro".into()));
                }
                sim.seed = Some(rand::random());
            }
        }
        if self.regression.fold_seed.is_none() {
            if ov.strict_repro {
                return Err(Error::Config("regression.fold_seed is required with --strict-repro".into()));
            }
            self.regression.fold_seed = Some(rand::random());
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.model, &self.simulation, &self.pairs_csv) {
            (ModelSource::Known(_), None, _) => {
                return Err(Error::Config("a known model needs a simulation section".into()))
            }
            (ModelSource::FromData(_), _, None) => return Err(Error::Config("\"from-data\" needs pairs_csv".into())),
            _ => {}
        }
        if self.model.known().is_some() {
            self.simulation_config()?.validate()?;
        }
        if self.binning.min_count == 0 {
            return Err(Error::Config("binning.min_count must be positive".into()));
        }
        if self.regression.k < 2 {
            return Err(Error::Config("regression.k must be at least 2".into()));
        }
        if self.regression.max_degree_scan.is_empty() {
            return Err(Error::Config("regression.max_degree_scan is empty".into()));
        }
        if let Some(d) = self.regression.max_degree_scan.iter().find(|d| **d > crate::model::MAX_DEGREE) {
            return Err(Error::Config(format!("scan degree {d} exceeds {}", crate::model::MAX_DEGREE)));
        }
        let grid = self.grid()?;
        self.problem.validate_on(&grid)
    }

    pub fn simulation_config(&self) -> Result<SimulationConfig> {
        let s = self.simulation.as_ref().ok_or_else(|| Error::Config("missing simulation section".into()))?;
        Ok(SimulationConfig {
            dt: s.dt,
            n_steps: s.n_steps,
            n_paths: s.n_paths,
            x0: s.x0,
            seed: s.seed.ok_or_else(|| Error::Config("simulation seed unresolved".into()))?,
            domain_clip: s.domain_clip,
        })
    }

    pub fn fold_seed(&self) -> Result<u64> {
        self.regression.fold_seed.ok_or_else(|| Error::Config("fold_seed unresolved".into()))
    }

    /// PDE grid spanning `[0, problem.tf]`.
    pub fn grid(&self) -> Result<PdeGrid> {
        let p = &self.pde;
        match p.n_t {
            Some(n_t) => PdeGrid::new(p.x_lo, p.x_hi, p.n_x, self.problem.tf, n_t),
            None => PdeGrid::with_default_steps(p.x_lo, p.x_hi, p.n_x, self.problem.tf),
        }
    }
}
