//! Stepwise sparse regression with k-fold cross-validation.
//!
//! Starting from the dense least-squares fit, the coefficient with the smallest
//! magnitude is zeroed and the remaining columns are refit, one index per step.
//! The solution after `q` removals is the `q`-sparse solution. Cross-validation
//! scores every `q` on held-out folds and picks the sparsity level.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_design_matrix, PolynomialDictionary};

/// Relative tolerance under which two CV scores count as tied.
pub const TIE_RTOL: f64 = 1e-9;

/// Minimum-norm least squares via SVD with a rank cutoff at
/// `max(m, n) * eps * sigma_max`.
pub fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let (rows, cols) = x.shape();
    if y.len() != rows {
        return Err(Error::Contract(format!("{} targets for {rows} rows", y.len())));
    }
    if cols == 0 {
        return Err(Error::Contract("least squares with no columns".into()));
    }
    if rows < cols {
        return Err(Error::Underdetermined { rows, cols });
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * smax;
    let b = svd.solve(&DVector::from_column_slice(y), cutoff).map_err(|e| Error::SolverFailure(e.to_string()))?;
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure("least-squares solution is not finite".into()));
    }
    Ok(b.iter().copied().collect())
}

/// Least squares restricted to `active`, scattered back to a full-length vector.
fn fit_active(x: &DMatrix<f64>, y: &[f64], active: &[usize]) -> Result<Vec<f64>> {
    let sub = x.select_columns(active);
    let b = least_squares(&sub, y)?;
    let mut full = vec![0.0; x.ncols()];
    for (&j, v) in active.iter().zip(b) {
        full[j] = v;
    }
    Ok(full)
}

/// Index of the smallest-magnitude coefficient over `active`; lowest index wins ties.
fn weakest(active: &[usize], coeffs: &[f64]) -> usize {
    let mut best = 0;
    for (pos, &j) in active.iter().enumerate().skip(1) {
        let (a, b) = (coeffs[j].abs(), coeffs[active[best]].abs());
        if a < b || (a == b && j < active[best]) {
            best = pos;
        }
    }
    best
}

/// One elimination step: fit on `active` and drop the weakest column.
pub fn ssr_step(x: &DMatrix<f64>, y: &[f64], active: &[usize]) -> Result<Vec<usize>> {
    if active.is_empty() {
        return Err(Error::Contract("ssr_step on an empty active set".into()));
    }
    if active.len() == 1 {
        return Err(Error::Contract("ssr_step would remove the last active column".into()));
    }
    let coeffs = fit_active(x, y, active)?;
    let mut next = active.to_vec();
    next.remove(weakest(active, &coeffs));
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    /// Surviving column indices, ascending.
    pub active: Vec<usize>,
    /// Full-length coefficients, zero off the active set.
    pub coeffs: Vec<f64>,
}

/// Solutions for `q = 0..M`, where `q` counts zeroed coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPath {
    pub solutions: Vec<SparseSolution>,
}

impl SparsityPath {
    pub fn at(&self, q: usize) -> &SparseSolution {
        &self.solutions[q]
    }
}

pub fn ssr_path(x: &DMatrix<f64>, y: &[f64]) -> Result<SparsityPath> {
    let m = x.ncols();
    let mut active: Vec<usize> = (0..m).collect();
    let mut solutions = Vec::with_capacity(m);
    loop {
        let coeffs = fit_active(x, y, &active)?;
        let done = active.len() == 1;
        let next = if done {
            Vec::new()
        } else {
            let mut n = active.clone();
            n.remove(weakest(&active, &coeffs));
            n
        };
        solutions.push(SparseSolution { active, coeffs });
        if done {
            break;
        }
        active = next;
    }
    Ok(SparsityPath { solutions })
}

/// Random partition of `0..n` into `k` near-equal disjoint folds.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..k).map(|i| perm[i * n / k..(i + 1) * n / k].to_vec()).collect()
}

fn check_cv_inputs(x: &DMatrix<f64>, y: &[f64], k: usize) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(Error::Contract(format!("{} targets for {} rows", y.len(), x.nrows())));
    }
    if k < 2 {
        return Err(Error::Contract(format!("cross-validation needs k >= 2, got {k}")));
    }
    if x.nrows() < k {
        return Err(Error::InsufficientData(format!("{} rows cannot be split into {k} folds", x.nrows())));
    }
    Ok(())
}

/// Held-out squared error sums, `errors[fold][q]`, over one fold partition.
fn fold_errors(x: &DMatrix<f64>, y: &[f64], folds: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let n = x.nrows();
    folds
        .par_iter()
        .map(|test| {
            let mut held = vec![false; n];
            for &i in test {
                held[i] = true;
            }
            let train: Vec<usize> = (0..n).filter(|&i| !held[i]).collect();
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let path = ssr_path(&x.select_rows(&train), &y_train)?;
            let x_test = x.select_rows(test);
            let y_test = DVector::from_iterator(test.len(), test.iter().map(|&i| y[i]));
            Ok(path
                .solutions
                .iter()
                .map(|s| (&y_test - &x_test * DVector::from_column_slice(&s.coeffs)).norm_squared())
                .collect())
        })
        .collect()
}

/// Root of the fold-averaged held-out squared error of the `q`-sparse fit.
pub fn cv_score(x: &DMatrix<f64>, y: &[f64], q: usize, k: usize, fold_seed: u64) -> Result<f64> {
    check_cv_inputs(x, y, k)?;
    if q >= x.ncols() {
        return Err(Error::Contract(format!("sparsity q = {q} needs q < M = {}", x.ncols())));
    }
    let errors = fold_errors(x, y, &fold_partition(x.nrows(), k, fold_seed))?;
    Ok((errors.iter().map(|e| e[q]).sum::<f64>() / k as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Minimum CV score, ties toward the sparser model.
    #[default]
    Min,
    /// Sparsest model whose score is within one standard error of the minimum.
    OneStandardError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    /// CV score per sparsity level `q`.
    pub delta: Vec<f64>,
    /// Fold standard error of each score (delta-method, on the `delta` scale).
    pub delta_se: Vec<f64>,
    pub k: usize,
    pub fold_seed: u64,
    pub rule: SelectionRule,
    pub selected_q: usize,
    pub selected_active: Vec<usize>,
    pub selected_coeffs: Vec<f64>,
}

impl CvReport {
    pub fn selected_delta(&self) -> f64 {
        self.delta[self.selected_q]
    }

    pub fn selected_se(&self) -> f64 {
        self.delta_se[self.selected_q]
    }
}

/// Largest index whose score is at most `threshold`.
fn sparsest_within(scores: &[f64], threshold: f64) -> usize {
    scores.iter().rposition(|&d| d <= threshold).unwrap_or(0)
}

fn tie_tolerance(best: f64, y: &[f64]) -> f64 {
    let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64).sqrt();
    TIE_RTOL * best + 1e-12 * rms
}

pub fn select_model(x: &DMatrix<f64>, y: &[f64], k: usize, fold_seed: u64, rule: SelectionRule) -> Result<CvReport> {
    check_cv_inputs(x, y, k)?;
    let m = x.ncols();
    let errors = fold_errors(x, y, &fold_partition(x.nrows(), k, fold_seed))?;
    let kf = k as f64;
    let mut delta = Vec::with_capacity(m);
    let mut delta_se = Vec::with_capacity(m);
    for q in 0..m {
        let e: Vec<f64> = errors.iter().map(|f| f[q]).collect();
        let mean = e.iter().sum::<f64>() / kf;
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (kf - 1.0);
        let d = mean.sqrt();
        delta.push(d);
        delta_se.push(if d > 0.0 { (var / kf).sqrt() / (2.0 * d) } else { 0.0 });
    }
    let q_min = (0..m).fold(0, |b, q| if delta[q] < delta[b] { q } else { b });
    let tol = tie_tolerance(delta[q_min], y);
    let threshold = match rule {
        SelectionRule::Min => delta[q_min] + tol,
        SelectionRule::OneStandardError => delta[q_min] + delta_se[q_min] + tol,
    };
    let selected_q = sparsest_within(&delta, threshold);
    let full = ssr_path(x, y)?;
    let sol = full.solutions.into_iter().nth(selected_q).expect("q < M");
    Ok(CvReport {
        delta,
        delta_se,
        k,
        fold_seed,
        rule,
        selected_q,
        selected_active: sol.active,
        selected_coeffs: sol.coeffs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Unweighted,
    /// Rows scaled by `sqrt(count / mean count)`.
    Counts,
    /// Rows scaled by the inverse of the estimated per-bin sampling variance
    /// (`y2 / n` for the first moment, `y2^2 / n` for the second).
    InverseVariance,
}

/// Scales rows of `x` and `y` by `sqrt(w_i)`.
pub fn apply_row_weights(x: &mut DMatrix<f64>, y: &mut [f64], weights: &[f64]) {
    for (i, w) in weights.iter().enumerate() {
        let s = w.sqrt();
        x.row_mut(i).scale_mut(s);
        y[i] *= s;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeScore {
    pub degree: usize,
    pub report: CvReport,
}

/// Per-degree CV results and the dictionary size picked from them.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeScan {
    pub entries: Vec<DegreeScore>,
    pub selected: usize,
}

impl DegreeScan {
    pub fn selected_entry(&self) -> &DegreeScore {
        &self.entries[self.selected]
    }

    /// `(degree, selected delta)` curve.
    pub fn curve(&self) -> Vec<(usize, f64)> {
        self.entries.iter().map(|e| (e.degree, e.report.selected_delta())).collect()
    }
}

/// Runs [`select_model`] for each candidate dictionary degree and picks the
/// smallest degree whose score reaches the plateau (the minimum under
/// [`SelectionRule::Min`], within one standard error of it otherwise).
pub fn dictionary_size_scan(
    samples: &[f64],
    target: &[f64],
    weights: Option<&[f64]>,
    degrees: &[usize],
    k: usize,
    fold_seed: u64,
    rule: SelectionRule,
) -> Result<DegreeScan> {
    if degrees.is_empty() {
        return Err(Error::Contract("dictionary scan needs at least one degree".into()));
    }
    let mut degrees = degrees.to_vec();
    degrees.sort_unstable();
    degrees.dedup();
    let entries = degrees
        .par_iter()
        .map(|&degree| {
            let dict = PolynomialDictionary::new(degree)?;
            let mut x = build_design_matrix(samples, dict)?.into_matrix();
            let mut y = target.to_vec();
            if let Some(w) = weights {
                apply_row_weights(&mut x, &mut y, w);
            }
            let report = select_model(&x, &y, k, fold_seed, rule)?;
            Ok(DegreeScore { degree, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = (0..entries.len()).fold(0, |b, i| {
        if entries[i].report.selected_delta() < entries[b].report.selected_delta() {
            i
        } else {
            b
        }
    });
    let best_delta = entries[best].report.selected_delta();
    let tol = tie_tolerance(best_delta, target);
    let threshold = match rule {
        SelectionRule::Min => best_delta + tol,
        SelectionRule::OneStandardError => best_delta + entries[best].report.selected_se() + tol,
    };
    let selected = entries
        .iter()
        .position(|e| e.report.selected_delta() <= threshold)
        .expect("best entry satisfies its own threshold");
    Ok(DegreeScan { entries, selected })
}
