//! Two-point conditional density and the maximum likelihood transition path.
//!
//! With both endpoints pinned, `P_A(x, t) = Q(xf, tf | x, t) Q(x, t | x0, 0) / Z`,
//! where `Z = Q(xf, tf | x0, 0)`. The path `x_m(t)` is the per-time argmax of
//! `P_A`, located on the grid and refined by a three-point parabola.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fokker_planck::{solve_backward, solve_forward, DensityField, FieldKind, PdeGrid};
use crate::model::SdeModel;

/// Normalizers at or below this are treated as an unreachable endpoint.
pub const MIN_NORMALIZER: f64 = 1e-300;
/// Allowed deviation of interior-level mass from one.
pub const INTERIOR_MASS_TOLERANCE: f64 = 1e-2;
/// Relative gap under which the two highest peaks are flagged as tied.
pub const PEAK_TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathProblem {
    pub x0: f64,
    pub xf: f64,
    pub tf: f64,
}

impl PathProblem {
    pub fn validate_on(&self, grid: &PdeGrid) -> Result<()> {
        if !(self.tf.is_finite() && self.tf > 0.0) {
            return Err(Error::Config(format!("tf must be positive, got {}", self.tf)));
        }
        if (grid.t_f - self.tf).abs() > 1e-12 * self.tf {
            return Err(Error::Config(format!("grid horizon {} does not match tf = {}", grid.t_f, self.tf)));
        }
        grid.check_interior(self.x0)?;
        grid.check_interior(self.xf)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDensity {
    pub grid: PdeGrid,
    pub problem: PathProblem,
    values: Vec<f64>,
    /// `Q(xf, tf | x0, 0)`.
    pub normalizer: f64,
    /// Min and max trapezoid mass over interior levels.
    pub interior_mass: [f64; 2],
}

impl ConditionalDensity {
    pub fn level(&self, m: usize) -> &[f64] {
        let n = self.grid.n_x;
        &self.values[m * n..(m + 1) * n]
    }

    /// Same field divided by `factor` more, i.e. with normalizer `normalizer * factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v /= factor);
        out.normalizer *= factor;
        out
    }
}

pub fn conditional_density(
    forward: &DensityField,
    backward: &DensityField,
    problem: &PathProblem,
) -> Result<ConditionalDensity> {
    if forward.kind != FieldKind::Forward || backward.kind != FieldKind::Backward {
        return Err(Error::Contract("expected one forward and one backward field".into()));
    }
    if forward.grid != backward.grid {
        return Err(Error::Contract("forward and backward fields use different grids".into()));
    }
    let grid = forward.grid;
    problem.validate_on(&grid)?;
    let n_t = grid.n_t;
    if n_t < 2 {
        return Err(Error::Config("conditional density needs at least two time steps".into()));
    }

    let product =
        |m: usize| -> Vec<f64> { forward.level(m).iter().zip(backward.level(m)).map(|(p, u)| p * u).collect() };
    let normalizer = grid.trapezoid(&product(1));
    if !(normalizer > MIN_NORMALIZER) || !normalizer.is_finite() {
        return Err(Error::UnreachableEndpoint(normalizer));
    }

    let mut values = Vec::with_capacity((n_t + 1) * grid.n_x);
    values.extend(grid.delta(problem.x0));
    let mut mass = [f64::INFINITY, f64::NEG_INFINITY];
    for m in 1..n_t {
        let level: Vec<f64> = product(m).into_iter().map(|v| v / normalizer).collect();
        let mm = grid.trapezoid(&level);
        mass = [mass[0].min(mm), mass[1].max(mm)];
        values.extend(level);
    }
    values.extend(grid.delta(problem.xf));
    let worst = (mass[0] - 1.0).abs().max((mass[1] - 1.0).abs());
    if worst > INTERIOR_MASS_TOLERANCE {
        return Err(Error::SolverFailure(format!(
            "conditional density mass range [{}, {}] strays beyond 1 +/- {INTERIOR_MASS_TOLERANCE}",
            mass[0], mass[1]
        )));
    }
    Ok(ConditionalDensity { grid, problem: *problem, values, normalizer, interior_mass: mass })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPath {
    pub t: Vec<f64>,
    pub x_m: Vec<f64>,
    pub peak_density: Vec<f64>,
    /// Levels whose two highest local maxima agree within [`PEAK_TIE_RTOL`].
    pub tie_levels: Vec<usize>,
}

/// Argmax of one level, refined by the vertex of the parabola through the
/// peak node and its neighbours. Plateaus anchor at the leftmost maximum.
fn refine_peak(row: &[f64], x_lo: f64, dx: f64) -> (f64, f64) {
    let mut j = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[j] {
            j = i;
        }
    }
    if j == 0 || j + 1 == row.len() {
        return (x_lo + j as f64 * dx, row[j]);
    }
    let (y0, y1, y2) = (row[j - 1], row[j], row[j + 1]);
    let a = 0.5 * (y0 - 2.0 * y1 + y2);
    let b = 0.5 * (y2 - y0);
    if a < 0.0 {
        let off = (-b / (2.0 * a)).clamp(-0.5, 0.5);
        (x_lo + (j as f64 + off) * dx, y1 + off * (b + a * off))
    } else {
        (x_lo + j as f64 * dx, y1)
    }
}

fn has_peak_tie(row: &[f64]) -> bool {
    let n = row.len();
    let mut peaks: Vec<f64> = (0..n)
        .filter(|&i| {
            let left = i == 0 || row[i] > row[i - 1];
            let right = i + 1 == n || row[i] >= row[i + 1];
            left && right && row[i] > 0.0
        })
        .map(|i| row[i])
        .collect();
    if peaks.len() < 2 {
        return false;
    }
    peaks.sort_unstable_by(|a, b| b.total_cmp(a));
    (peaks[0] - peaks[1]) <= PEAK_TIE_RTOL * peaks[0]
}

pub fn most_probable_path(pa: &ConditionalDensity) -> TransitionPath {
    let grid = &pa.grid;
    let n_t = grid.n_t;
    let dx = grid.dx();
    let mut path = TransitionPath {
        t: grid.times(),
        x_m: Vec::with_capacity(n_t + 1),
        peak_density: Vec::with_capacity(n_t + 1),
        tie_levels: Vec::new(),
    };
    for m in 0..=n_t {
        let row = pa.level(m);
        let peak = row.iter().copied().fold(0.0, f64::max);
        if m == 0 {
            path.x_m.push(pa.problem.x0);
            path.peak_density.push(peak);
            continue;
        }
        if m == n_t {
            path.x_m.push(pa.problem.xf);
            path.peak_density.push(peak);
            continue;
        }
        let (x, p) = refine_peak(row, grid.x_lo, dx);
        if has_peak_tie(row) {
            path.tie_levels.push(m);
        }
        path.x_m.push(x);
        path.peak_density.push(p);
    }
    if !path.tie_levels.is_empty() {
        log::warn!("{} time levels have tied peaks; leftmost taken", path.tie_levels.len());
    }
    path
}

/// Diagnostics gathered while solving for a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDiagnostics {
    pub normalizer: f64,
    /// Forward field read directly at `(xf, tf)`; should agree with `normalizer`.
    pub normalizer_direct: f64,
    pub interior_mass_min: f64,
    pub interior_mass_max: f64,
    pub tie_levels: Vec<usize>,
    pub forward: crate::fokker_planck::SolverDiagnostics,
    pub backward: crate::fokker_planck::SolverDiagnostics,
}

/// Path and diagnostics from a pair of already-solved fields.
pub fn path_from_fields(
    forward: &DensityField,
    backward: &DensityField,
    problem: &PathProblem,
) -> Result<(TransitionPath, PathDiagnostics)> {
    let pa = conditional_density(forward, backward, problem)?;
    let path = most_probable_path(&pa);
    let diag = PathDiagnostics {
        normalizer: pa.normalizer,
        normalizer_direct: forward.interpolate(forward.grid.n_t, problem.xf),
        interior_mass_min: pa.interior_mass[0],
        interior_mass_max: pa.interior_mass[1],
        tie_levels: path.tie_levels.clone(),
        forward: forward.diagnostics.clone(),
        backward: backward.diagnostics.clone(),
    };
    Ok((path, diag))
}

/// Forward and backward solves, conditional density and argmax path for `model`.
pub fn path_for_learned_model(
    model: &SdeModel,
    problem: &PathProblem,
    grid: &PdeGrid,
) -> Result<(TransitionPath, PathDiagnostics)> {
    problem.validate_on(grid)?;
    let (fwd, bwd) = rayon::join(|| solve_forward(model, problem.x0, grid), || solve_backward(model, problem.xf, grid));
    path_from_fields(&fwd?, &bwd?, problem)
}
