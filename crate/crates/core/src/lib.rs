//! Data-driven identification of one-dimensional SDEs and their most probable
//! transition paths.
//!
//! The pipeline simulates (or loads) trajectories, bins lag-one increments into
//! Kramers-Moyal conditional moments, fits sparse polynomial drift and squared
//! diffusion with stepwise sparse regression under cross-validation, and then
//! solves the forward Fokker–Planck and backward Kolmogorov equations of the
//! learned model to extract the argmax path of the two-point conditional density.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod fokker_planck;
pub mod km;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod ssr;
pub mod transition_path;

pub use error::{Error, Result};
pub use fokker_planck::{solve_backward, solve_forward, DensityField, FieldKind, PdeGrid};
pub use km::{bin_moments, BinRange, BinnedMoments, BinningConfig, SecondMoment};
pub use model::{build_design_matrix, eval_poly, DesignMatrix, PolynomialDictionary, SdeModel};
pub use sim::{extract_pairs, simulate_em, IncrementPairs, InitialState, SimulationConfig, TrajectorySet};
pub use ssr::{
    cv_score, dictionary_size_scan, least_squares, select_model, ssr_path, ssr_step, CvReport, DegreeScan,
    SelectionRule, SparsityPath, Weighting,
};
pub use transition_path::{
    conditional_density, most_probable_path, path_for_learned_model, ConditionalDensity, PathProblem, TransitionPath,
};
