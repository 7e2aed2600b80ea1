//! Forward Fokker–Planck and backward Kolmogorov solvers on a uniform 1-D grid.
//!
//! The forward equation is written in flux form
//! `dp/dt = -dJ/dx`, `J = B p - D dp/dx`, with `D = sigma^2 / 2` and
//! `B = f - (sigma^2)' / 2`. Interface fluxes use Chang–Cooper exponential
//! fitting, `J = (D/dx) [Ber(-w) p_j - Ber(w) p_{j+1}]` with `w = B dx / D` and
//! `Ber(z) = z / (e^z - 1)`, which keeps the semi-discrete operator an M-matrix
//! and reproduces the discrete Boltzmann stationary state exactly.
//!
//! Nodes carry trapezoid control volumes (`dx`, halved at the two ends) and the
//! outer interface fluxes are zero, so the trapezoid mass is conserved to
//! round-off. The backward equation uses the transpose of the same flux matrix,
//! which is the discrete adjoint under the trapezoid inner product; the pairing
//! `sum_j w_j u_j p_j` is then time-independent up to the start-up steps.
//!
//! Time stepping is Crank–Nicolson, preceded by two implicit Euler steps that
//! damp the ringing from the delta initial data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SdeModel;

/// Floor applied to `sigma^2` on the grid.
pub const DIFFUSION_FLOOR: f64 = 1e-6;
/// Allowed drift of the trapezoid mass of a forward field.
pub const MASS_TOLERANCE: f64 = 1e-4;
/// Values below `-NEGATIVITY_TOLERANCE` are a solver failure.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-10;
/// Courant number `dt max|f| / dx` above which a warning is logged.
pub const COURANT_WARN: f64 = 5.0;
/// Default time-step ratio: `dt_pde <= dx / STEPS_PER_DX`.
pub const STEPS_PER_DX: f64 = 12.0;

const STARTUP_EULER_STEPS: usize = 2;
/// Cells at each end counted as "boundary" in the diagnostics.
const BOUNDARY_CELLS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
    pub t_f: f64,
    pub n_t: usize,
}

impl PdeGrid {
    pub fn new(x_lo: f64, x_hi: f64, n_x: usize, t_f: f64, n_t: usize) -> Result<Self> {
        let g = Self { x_lo, x_hi, n_x, t_f, n_t };
        g.validate()?;
        Ok(g)
    }

    /// Picks `n_t` so that `dt_pde <= dx / 12`.
    pub fn with_default_steps(x_lo: f64, x_hi: f64, n_x: usize, t_f: f64) -> Result<Self> {
        if n_x < 3 {
            return Err(Error::Config(format!("n_x must be at least 3, got {n_x}")));
        }
        let dx = (x_hi - x_lo) / (n_x - 1) as f64;
        let n_t = (t_f * STEPS_PER_DX / dx).ceil().max(1.0) as usize;
        Self::new(x_lo, x_hi, n_x, t_f, n_t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_lo.is_finite() && self.x_hi.is_finite() && self.x_lo < self.x_hi) {
            return Err(Error::Config(format!("bad PDE domain [{}, {}]", self.x_lo, self.x_hi)));
        }
        if self.n_x < 3 {
            return Err(Error::Config(format!("n_x must be at least 3, got {}", self.n_x)));
        }
        if !(self.t_f.is_finite() && self.t_f > 0.0) {
            return Err(Error::Config(format!("t_f must be positive, got {}", self.t_f)));
        }
        if self.n_t == 0 {
            return Err(Error::Config("n_t must be positive".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.n_x - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_f / self.n_t as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.x_lo + j as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| self.node(j)).collect()
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_t).map(|m| self.time(m)).collect()
    }

    /// Trapezoid quadrature weights (control-volume widths).
    pub fn weights(&self) -> Vec<f64> {
        let dx = self.dx();
        let mut w = vec![dx; self.n_x];
        w[0] = dx / 2.0;
        w[self.n_x - 1] = dx / 2.0;
        w
    }

    pub fn trapezoid(&self, v: &[f64]) -> f64 {
        let dx = self.dx();
        let n = v.len();
        dx * (v[1..n - 1].iter().sum::<f64>() + 0.5 * (v[0] + v[n - 1]))
    }

    pub fn check_interior(&self, x: f64) -> Result<()> {
        if x > self.x_lo && x < self.x_hi {
            Ok(())
        } else {
            Err(Error::Config(format!("point {x} is not strictly inside ({}, {})", self.x_lo, self.x_hi)))
        }
    }

    /// Unit-mass grid delta at `x`: the mass is split linearly between the two
    /// bracketing nodes so that both the mass and the first moment are exact.
    pub fn delta(&self, x: f64) -> Vec<f64> {
        let w = self.weights();
        let s = (x - self.x_lo) / self.dx();
        let mut j = (s.floor().max(0.0) as usize).min(self.n_x - 2);
        let mut r = s - j as f64;
        if r < 1e-9 {
            r = 0.0;
        } else if r > 1.0 - 1e-9 {
            j += 1;
            r = 0.0;
        }
        let mut v = vec![0.0; self.n_x];
        v[j] = (1.0 - r) / w[j];
        if r > 0.0 {
            v[j + 1] = r / w[j + 1];
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    /// `dt max|f| / dx` over the grid.
    pub courant: f64,
    /// Interfaces where `sigma^2` was raised to [`DIFFUSION_FLOOR`].
    pub clamped_interfaces: usize,
    /// Extent of the clamped region, when non-empty.
    pub clamp_range: Option<[f64; 2]>,
    /// Most negative value produced before clamping to zero.
    pub min_raw_value: f64,
    /// Largest `|mass - 1|` over time levels (forward fields only).
    pub max_mass_drift: f64,
    /// Largest trapezoid mass found in the outer cells at either end.
    pub max_boundary_mass: f64,
}

/// Space–time field, `values[m * n_x + j]` at `(x_j, t_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: PdeGrid,
    pub kind: FieldKind,
    values: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

impl DensityField {
    pub fn from_levels(grid: PdeGrid, kind: FieldKind, levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.len() != grid.n_t + 1 || levels.iter().any(|l| l.len() != grid.n_x) {
            return Err(Error::Contract("field shape does not match its grid".into()));
        }
        Ok(Self {
            grid,
            kind,
            values: levels.into_iter().flatten().collect(),
            diagnostics: SolverDiagnostics::default(),
        })
    }

    pub fn level(&self, m: usize) -> &[f64] {
        let n = self.grid.n_x;
        &self.values[m * n..(m + 1) * n]
    }

    pub fn levels(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.grid.n_x)
    }

    /// Linear interpolation in `x` at time level `m`.
    pub fn interpolate(&self, m: usize, x: f64) -> f64 {
        let row = self.level(m);
        let s = ((x - self.grid.x_lo) / self.grid.dx()).clamp(0.0, (self.grid.n_x - 1) as f64);
        let j = (s.floor() as usize).min(self.grid.n_x - 2);
        let r = s - j as f64;
        (1.0 - r) * row[j] + r * row[j + 1]
    }
}

/// `z / (e^z - 1)`, continuous through `z = 0`.
pub(crate) fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Tridiagonal matrix: `lower[j]` multiplies `v[j-1]`, `upper[j]` multiplies `v[j+1]`.
struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        (0..n)
            .map(|j| {
                let mut s = self.diag[j] * v[j];
                if j > 0 {
                    s += self.lower[j] * v[j - 1];
                }
                if j + 1 < n {
                    s += self.upper[j] * v[j + 1];
                }
                s
            })
            .collect()
    }

    fn transpose(&self) -> Self {
        let n = self.diag.len();
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for j in 0..n {
            if j > 0 {
                lower[j] = self.upper[j - 1];
            }
            if j + 1 < n {
                upper[j] = self.lower[j + 1];
            }
        }
        Self { lower, diag: self.diag.clone(), upper }
    }
}

/// Thomas algorithm; the systems here are diagonally dominant M-matrices.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    c[0] = upper[0] / beta;
    rhs[0] /= beta;
    for j in 1..n {
        beta = diag[j] - lower[j] * c[j - 1];
        c[j] = upper[j] / beta;
        rhs[j] = (rhs[j] - lower[j] * rhs[j - 1]) / beta;
    }
    for j in (0..n - 1).rev() {
        rhs[j] -= c[j] * rhs[j + 1];
    }
}

/// Flux-difference matrix `A` of the forward operator, so that `W dp/dt = A p`.
fn flux_operator(model: &SdeModel, grid: &PdeGrid, diag: &mut SolverDiagnostics) -> Tridiagonal {
    let n = grid.n_x;
    let dx = grid.dx();
    let mut lower = vec![0.0; n];
    let mut main = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut clamp: Option<[f64; 2]> = None;
    for j in 0..n - 1 {
        let xm = grid.x_lo + (j as f64 + 0.5) * dx;
        let mut eta = model.diff2(xm);
        let mut deta = model.diff2_derivative(xm);
        if !(eta >= DIFFUSION_FLOOR) {
            eta = DIFFUSION_FLOOR;
            deta = 0.0;
            diag.clamped_interfaces += 1;
            clamp = Some(match clamp {
                Some([lo, _]) => [lo, xm],
                None => [xm, xm],
            });
        }
        let d = 0.5 * eta;
        let b = model.drift(xm) - 0.5 * deta;
        let w = b * dx / d;
        // J_{j+1/2} = a p_j - c p_{j+1}
        let a = d / dx * bernoulli(-w);
        let c = d / dx * bernoulli(w);
        main[j] -= a;
        upper[j] += c;
        lower[j + 1] += a;
        main[j + 1] -= c;
    }
    diag.clamp_range = clamp;
    diag.courant = grid.dt() * grid.nodes().iter().map(|&x| model.drift(x).abs()).fold(0.0, f64::max) / dx;
    if diag.courant > COURANT_WARN {
        log::warn!("Courant number {:.2} exceeds {COURANT_WARN}; implicit steps remain stable", diag.courant);
    }
    if let Some([lo, hi]) = clamp {
        log::info!("sigma^2 floored at {DIFFUSION_FLOOR:e} on [{lo}, {hi}] ({} interfaces)", diag.clamped_interfaces);
    }
    Tridiagonal { lower, diag: main, upper }
}

/// Marches `W dv/ds = A v` for `n_t` steps from `start`.
fn march(op: &Tridiagonal, grid: &PdeGrid, start: Vec<f64>) -> Vec<Vec<f64>> {
    let w = grid.weights();
    let h = grid.dt();
    let mut levels = Vec::with_capacity(grid.n_t + 1);
    let mut v = start;
    levels.push(v.clone());
    for m in 0..grid.n_t {
        let theta = if m < STARTUP_EULER_STEPS { 1.0 } else { 0.5 };
        let av = op.apply(&v);
        let mut rhs: Vec<f64> = (0..v.len()).map(|j| w[j] * v[j] + (1.0 - theta) * h * av[j]).collect();
        let lower: Vec<f64> = op.lower.iter().map(|l| -theta * h * l).collect();
        let upper: Vec<f64> = op.upper.iter().map(|u| -theta * h * u).collect();
        let main: Vec<f64> = op.diag.iter().zip(&w).map(|(d, wj)| wj - theta * h * d).collect();
        solve_tridiagonal(&lower, &main, &upper, &mut rhs);
        v = rhs;
        levels.push(v.clone());
    }
    levels
}

fn finish(
    grid: &PdeGrid,
    kind: FieldKind,
    mut levels: Vec<Vec<f64>>,
    mut diag: SolverDiagnostics,
) -> Result<DensityField> {
    let min = levels.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    diag.min_raw_value = min;
    if !min.is_finite() || levels.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure("non-finite value in field".into()));
    }
    if min < -NEGATIVITY_TOLERANCE {
        return Err(Error::SolverFailure(format!("field value {min:e} below -{NEGATIVITY_TOLERANCE:e}")));
    }
    let edge = BOUNDARY_CELLS.min(grid.n_x / 2);
    let w = grid.weights();
    for level in &mut levels {
        let n = level.len();
        let lo: f64 = (0..edge).map(|j| w[j] * level[j]).sum();
        let hi: f64 = (n - edge..n).map(|j| w[j] * level[j]).sum();
        diag.max_boundary_mass = diag.max_boundary_mass.max(lo).max(hi);
        if kind == FieldKind::Forward {
            let drift = (grid.trapezoid(level) - 1.0).abs();
            diag.max_mass_drift = diag.max_mass_drift.max(drift);
        }
        for v in level.iter_mut() {
            *v = v.max(0.0);
        }
    }
    if diag.max_mass_drift > MASS_TOLERANCE {
        return Err(Error::SolverFailure(format!("mass drifted by {:e} (> {MASS_TOLERANCE:e})", diag.max_mass_drift)));
    }
    let mut field = DensityField::from_levels(*grid, kind, levels)?;
    field.diagnostics = diag;
    Ok(field)
}

/// Transition density `Q(x, t | x0, 0)` on the grid.
pub fn solve_forward(model: &SdeModel, x0: f64, grid: &PdeGrid) -> Result<DensityField> {
    grid.validate()?;
    grid.check_interior(x0)?;
    let mut diag = SolverDiagnostics::default();
    let op = flux_operator(model, grid, &mut diag);
    let levels = march(&op, grid, grid.delta(x0));
    finish(grid, FieldKind::Forward, levels, diag)
}

/// `Q(xf, t_f | x, t)` as a function of `(x, t)`, solved backward from `t_f`.
pub fn solve_backward(model: &SdeModel, xf: f64, grid: &PdeGrid) -> Result<DensityField> {
    grid.validate()?;
    grid.check_interior(xf)?;
    let mut diag = SolverDiagnostics::default();
    let op = flux_operator(model, grid, &mut diag).transpose();
    let mut levels = march(&op, grid, grid.delta(xf));
    levels.reverse();
    finish(grid, FieldKind::Backward, levels, diag)
}
