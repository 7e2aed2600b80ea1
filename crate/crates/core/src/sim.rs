//! Euler–Maruyama trajectory generation and lag-one increment extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SdeModel;

/// Paths whose magnitude exceeds this are reported as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Fixed(f64),
    Uniform([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub x0: InitialState,
    pub seed: u64,
    #[serde(default)]
    pub domain_clip: Option<[f64; 2]>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 || self.n_paths == 0 {
            return Err(Error::Config("n_steps and n_paths must be positive".into()));
        }
        if !(self.dt * self.n_steps as f64).is_finite() {
            return Err(Error::Config("simulation horizon is not finite".into()));
        }
        match self.x0 {
            InitialState::Fixed(x) if !x.is_finite() => {
                return Err(Error::Config(format!("initial state {x} is not finite")))
            }
            InitialState::Uniform([a, b]) if !(a.is_finite() && b.is_finite() && a <= b) => {
                return Err(Error::Config(format!("bad uniform initial range [{a}, {b}]")))
            }
            _ => {}
        }
        if let Some([lo, hi]) = self.domain_clip {
            if !(lo < hi) {
                return Err(Error::Config(format!("domain_clip [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }
}

/// Simulated sample paths, each `n_steps + 1` states long.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub paths: Vec<Vec<f64>>,
    pub dt: f64,
    pub seed: u64,
    pub domain_clip: Option<[f64; 2]>,
}

/// Consecutive `(X_k, X_{k+1} - X_k)` pairs at lag `delta_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementPairs {
    pub x: Vec<f64>,
    pub dx: Vec<f64>,
    pub delta_t: f64,
}

impl IncrementPairs {
    pub fn new(x: Vec<f64>, dx: Vec<f64>, delta_t: f64) -> Result<Self> {
        if x.len() != dx.len() {
            return Err(Error::Contract(format!("pair vectors differ in length ({} vs {})", x.len(), dx.len())));
        }
        Ok(Self { x, dx, delta_t })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Random stream for path `index`; independent of how many paths are drawn.
fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn simulate_em(model: &SdeModel, cfg: &SimulationConfig) -> Result<TrajectorySet> {
    cfg.validate()?;
    let sqrt_dt = cfg.dt.sqrt();
    let paths = (0..cfg.n_paths)
        .into_par_iter()
        .map(|j| {
            let mut rng = path_rng(cfg.seed, j);
            let mut x = match cfg.x0 {
                InitialState::Fixed(x) => x,
                InitialState::Uniform([a, b]) => a + (b - a) * rng.random::<f64>(),
            };
            let mut path = Vec::with_capacity(cfg.n_steps + 1);
            path.push(x);
            for step in 1..=cfg.n_steps {
                let s2 = model.diff2(x);
                if s2 < 0.0 {
                    return Err(Error::NegativeDiffusion { x, value: s2 });
                }
                let xi: f64 = rng.sample(StandardNormal);
                x += model.drift(x) * cfg.dt + s2.sqrt() * sqrt_dt * xi;
                if !x.is_finite() || x.abs() > DIVERGENCE_LIMIT {
                    return Err(Error::Divergence { path: j, step, value: x.abs() });
                }
                path.push(x);
            }
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectorySet { paths, dt: cfg.dt, seed: cfg.seed, domain_clip: cfg.domain_clip })
}

pub fn extract_pairs(traj: &TrajectorySet) -> Result<IncrementPairs> {
    if let Some(p) = traj.paths.iter().position(|p| p.len() < 2) {
        return Err(Error::Contract(format!("path {p} has fewer than two points")));
    }
    let inside = |x: f64| match traj.domain_clip {
        Some([lo, hi]) => (lo..=hi).contains(&x),
        None => true,
    };
    let total: usize = traj.paths.iter().map(|p| p.len() - 1).sum();
    let mut x = Vec::with_capacity(total);
    let mut dx = Vec::with_capacity(total);
    for path in &traj.paths {
        for w in path.windows(2) {
            if inside(w[0]) {
                x.push(w[0]);
                dx.push(w[1] - w[0]);
            }
        }
    }
    IncrementPairs::new(x, dx, traj.dt)
}
