//! Stage runners over a working directory.
//!
//! Each stage reads its inputs from files written by the previous stage and
//! writes its own outputs next to them, so running the stages one by one and
//! running [`run_pipeline`] produce the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{self, ArtifactError};
use crate::config::PipelineConfig;
use crate::error::Error;
use crate::fokker_planck::{solve_backward, solve_forward, FieldKind, SolverDiagnostics};
use crate::km::{bin_moments, BinnedMoments};
use crate::model::SdeModel;
use crate::sim::{extract_pairs, simulate_em};
use crate::ssr::{dictionary_size_scan, DegreeScan, Weighting};
use crate::transition_path::{path_for_learned_model, path_from_fields};

pub const PAIRS: &str = "pairs.csv";
pub const SIMULATION: &str = "simulation.json";
pub const BINS: &str = "bins.csv";
pub const MODEL: &str = "model.json";
pub const CV_SCAN: &str = "cv_scan.csv";
pub const FIT_REPORT: &str = "fit_report.json";
pub const FORWARD: &str = "forward.csv";
pub const BACKWARD: &str = "backward.csv";
pub const FP_DIAGNOSTICS: &str = "fp_diagnostics.json";
pub const PATH: &str = "path.csv";
pub const PATH_DIAGNOSTICS: &str = "path_diagnostics.json";
pub const PATH_TRUE: &str = "path_true.csv";
pub const PATH_TRUE_DIAGNOSTICS: &str = "path_true_diagnostics.json";
pub const MANIFEST: &str = "manifest.json";

const ARTIFACTS: [&str; 13] = [
    PAIRS,
    SIMULATION,
    BINS,
    MODEL,
    CV_SCAN,
    FIT_REPORT,
    FORWARD,
    BACKWARD,
    FP_DIAGNOSTICS,
    PATH,
    PATH_DIAGNOSTICS,
    PATH_TRUE,
    PATH_TRUE_DIAGNOSTICS,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Estimate,
    Fit,
    SolveFp,
    Path,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Simulate, Stage::Estimate, Stage::Fit, Stage::SolveFp, Stage::Path];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Estimate => "estimate",
            Stage::Fit => "fit",
            Stage::SolveFp => "solve-fp",
            Stage::Path => "path",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Numeric(#[from] Error),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(Error),
    #[error("stage={stage}: {source}")]
    Stage { stage: Stage, source: StageError },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Config(_) => None,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_) | PipelineError::Stage { source: StageError::Numeric(Error::Config(_)), .. }
        )
    }

    /// 2 for configuration problems, 3 for numerical or stage failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_config() {
            2
        } else {
            3
        }
    }
}

type StageResult<T> = std::result::Result<T, StageError>;

fn in_stage<T>(stage: Stage, r: StageResult<T>) -> Result<T, PipelineError> {
    r.map_err(|source| PipelineError::Stage { stage, source })
}

fn out(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

/// Summary of one target's fit, written to `fit_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFit {
    pub selected_degree: usize,
    pub selected_q: usize,
    pub active: Vec<usize>,
    pub coeffs: Vec<f64>,
    /// `(degree, delta)` at each degree's selected sparsity.
    pub degree_curve: Vec<(usize, f64)>,
    /// Full CV curve `delta[q]` per degree.
    pub delta_by_degree: BTreeMap<usize, Vec<f64>>,
}

impl TargetFit {
    fn from_scan(scan: &DegreeScan) -> Self {
        let sel = scan.selected_entry();
        Self {
            selected_degree: sel.degree,
            selected_q: sel.report.selected_q,
            active: sel.report.selected_active.clone(),
            coeffs: sel.report.selected_coeffs.clone(),
            degree_curve: scan.curve(),
            delta_by_degree: scan.entries.iter().map(|e| (e.degree, e.report.delta.clone())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub k: usize,
    pub fold_seed: u64,
    pub n_bins: usize,
    pub drift: TargetFit,
    pub diffusion: TargetFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpDiagnostics {
    pub forward: SolverDiagnostics,
    pub backward: SolverDiagnostics,
}

/// Hashes of every artifact plus the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    pub files: BTreeMap<String, String>,
}

/// Writes `pairs.csv` (and `simulation.json` for a known model).
pub fn stage_simulate(cfg: &PipelineConfig) -> StageResult<()> {
    let pairs = match cfg.model.known() {
        Some(model) => {
            let sim = cfg.simulation_config()?;
            let traj = simulate_em(model, &sim)?;
            let pairs = extract_pairs(&traj)?;
            artifacts::write_json(&out(cfg, SIMULATION), &sim)?;
            pairs
        }
        None => {
            let src = cfg.pairs_csv.as_ref().ok_or_else(|| Error::Config("pairs_csv missing".into()))?;
            artifacts::read_pairs_csv(src)?
        }
    };
    log::info!("{} increment pairs", pairs.len());
    artifacts::write_pairs_csv(&out(cfg, PAIRS), &pairs)?;
    Ok(())
}

pub fn stage_estimate(cfg: &PipelineConfig) -> StageResult<()> {
    let pairs = artifacts::read_pairs_csv(&out(cfg, PAIRS))?;
    let bins = bin_moments(&pairs, &cfg.binning)?;
    log::info!("{} bins kept, {} dropped", bins.len(), bins.dropped);
    artifacts::write_bins_csv(&out(cfg, BINS), &bins)?;
    Ok(())
}

/// Row weights for the drift and diffusion regressions, normalised to mean one.
pub fn fit_weights(bins: &BinnedMoments, weighting: Weighting) -> [Option<Vec<f64>>; 2] {
    let normalise = |w: Vec<f64>| {
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        w.into_iter().map(|v| v / mean).collect::<Vec<f64>>()
    };
    let counts = || bins.counts.iter().map(|&c| c as f64);
    // second-moment floor keeps weights finite where the noise vanishes
    let floor = 1e-3 * bins.y2.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let s2 = || bins.y2.iter().map(|v| v.max(floor));
    match weighting {
        Weighting::Unweighted => [None, None],
        Weighting::Counts => {
            let w = normalise(counts().collect());
            [Some(w.clone()), Some(w)]
        }
        Weighting::InverseVariance => [
            Some(normalise(counts().zip(s2()).map(|(n, v)| n / v).collect())),
            Some(normalise(counts().zip(s2()).map(|(n, v)| n / (v * v)).collect())),
        ],
    }
}

pub fn stage_fit(cfg: &PipelineConfig) -> StageResult<()> {
    let bins = artifacts::read_bins_csv(&out(cfg, BINS))?;
    let reg = &cfg.regression;
    let fold_seed = cfg.fold_seed()?;
    let [w_drift, w_diff] = fit_weights(&bins, reg.weighting);
    let scan = |target: &[f64], weights: Option<&[f64]>| {
        dictionary_size_scan(&bins.centers, target, weights, &reg.max_degree_scan, reg.k, fold_seed, reg.selection)
    };
    let (drift, diff) = rayon::join(|| scan(&bins.y1, w_drift.as_deref()), || scan(&bins.y2, w_diff.as_deref()));
    let (drift, diff) = (drift?, diff?);
    let model = SdeModel::new(
        drift.selected_entry().report.selected_coeffs.clone(),
        diff.selected_entry().report.selected_coeffs.clone(),
    )?;
    log::info!("drift support {:?}, diffusion support {:?}", model.drift_support(), model.diff2_support());
    let report = FitReport {
        k: reg.k,
        fold_seed,
        n_bins: bins.len(),
        drift: TargetFit::from_scan(&drift),
        diffusion: TargetFit::from_scan(&diff),
    };
    artifacts::write_json(&out(cfg, MODEL), &model)?;
    artifacts::write_cv_scan_csv(&out(cfg, CV_SCAN), &[("drift", &drift), ("diffusion", &diff)])?;
    artifacts::write_json(&out(cfg, FIT_REPORT), &report)?;
    Ok(())
}

pub fn stage_solve_fp(cfg: &PipelineConfig) -> StageResult<()> {
    let model: SdeModel = artifacts::read_json(&out(cfg, MODEL))?;
    let grid = cfg.grid()?;
    let p = &cfg.problem;
    let (fwd, bwd) = rayon::join(|| solve_forward(&model, p.x0, &grid), || solve_backward(&model, p.xf, &grid));
    let (fwd, bwd) = (fwd?, bwd?);
    artifacts::write_field_csv(&out(cfg, FORWARD), &fwd)?;
    artifacts::write_field_csv(&out(cfg, BACKWARD), &bwd)?;
    let diag = FpDiagnostics { forward: fwd.diagnostics, backward: bwd.diagnostics };
    artifacts::write_json(&out(cfg, FP_DIAGNOSTICS), &diag)?;
    Ok(())
}

/// Writes `path.csv` from the stored fields, and `path_true.csv` when the
/// generating model is known.
pub fn stage_path(cfg: &PipelineConfig) -> StageResult<()> {
    let grid = cfg.grid()?;
    let mut fwd = artifacts::read_field_csv(&out(cfg, FORWARD), &grid, FieldKind::Forward)?;
    let mut bwd = artifacts::read_field_csv(&out(cfg, BACKWARD), &grid, FieldKind::Backward)?;
    let diag: FpDiagnostics = artifacts::read_json(&out(cfg, FP_DIAGNOSTICS))?;
    fwd.diagnostics = diag.forward;
    bwd.diagnostics = diag.backward;
    let (path, pdiag) = path_from_fields(&fwd, &bwd, &cfg.problem)?;
    artifacts::write_path_csv(&out(cfg, PATH), &path)?;
    artifacts::write_json(&out(cfg, PATH_DIAGNOSTICS), &pdiag)?;
    if let Some(model) = cfg.model.known() {
        let (tpath, tdiag) = path_for_learned_model(model, &cfg.problem, &grid)?;
        artifacts::write_path_csv(&out(cfg, PATH_TRUE), &tpath)?;
        artifacts::write_json(&out(cfg, PATH_TRUE_DIAGNOSTICS), &tdiag)?;
    }
    Ok(())
}

fn prepare_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| PipelineError::Config(Error::Config(format!("cannot create {}: {e}", dir.display()))))
}

/// Runs a single stage against `cfg.output_dir`.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    prepare_dir(&cfg.output_dir)?;
    log::info!("stage {stage}");
    let r = match stage {
        Stage::Simulate => stage_simulate(cfg),
        Stage::Estimate => stage_estimate(cfg),
        Stage::Fit => stage_fit(cfg),
        Stage::SolveFp => stage_solve_fp(cfg),
        Stage::Path => stage_path(cfg),
    };
    in_stage(stage, r)
}

/// Runs every stage in order and writes `manifest.json`. On failure, the
/// artifacts of completed stages are left in place.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest, PipelineError> {
    for stage in Stage::ALL {
        run_stage(stage, cfg)?;
    }
    let mut files = BTreeMap::new();
    for name in ARTIFACTS {
        let p = out(cfg, name);
        if p.exists() {
            let hash = artifacts::sha256_file(&p)
                .map_err(|e| PipelineError::Stage { stage: Stage::Path, source: e.into() })?;
            files.insert(name.to_string(), hash);
        }
    }
    let manifest = Manifest { config: cfg.clone(), files };
    artifacts::write_json(&out(cfg, MANIFEST), &manifest)
        .map_err(|e| PipelineError::Stage { stage: Stage::Path, source: e.into() })?;
    Ok(manifest)
}
