//! Polynomial dictionary, design matrices and the SDE model
//! `dX = f(X) dt + sigma(X) dW` with `f` and `sigma^2` expanded over monomials.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest monomial degree accepted by [`PolynomialDictionary`].
pub const MAX_DEGREE: usize = 12;

/// Above this degree the Vandermonde design matrix is poorly conditioned.
pub const CONDITIONING_WARN_DEGREE: usize = 6;

/// Monomial basis `{1, x, x^2, ..., x^max_degree}` in ascending degree order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolynomialDictionary {
    max_degree: usize,
}

impl PolynomialDictionary {
    pub fn new(max_degree: usize) -> Result<Self> {
        if max_degree > MAX_DEGREE {
            return Err(Error::DegreeTooLarge(max_degree));
        }
        if max_degree > CONDITIONING_WARN_DEGREE {
            log::warn!(
                "dictionary degree {max_degree} > {CONDITIONING_WARN_DEGREE}: \
                 design matrix may be badly conditioned"
            );
        }
        Ok(Self { max_degree })
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Number of basis functions, `max_degree + 1`.
    pub fn len(&self) -> usize {
        self.max_degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Basis values `[1, x, x^2, ...]` at `x`.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.len());
        let mut p = 1.0;
        for _ in 0..self.len() {
            row.push(p);
            p *= x;
        }
        row
    }
}

/// Evaluates `sum_j coeffs[j] x^j` by Horner's rule.
pub fn eval_poly(coeffs: &[f64], x: f64) -> Result<f64> {
    if coeffs.is_empty() {
        return Err(Error::EmptyInput("polynomial coefficients"));
    }
    if !x.is_finite() {
        return Err(Error::Domain(format!("cannot evaluate polynomial at {x}")));
    }
    if let Some(c) = coeffs.iter().find(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("non-finite coefficient {c}")));
    }
    Ok(horner(coeffs, x))
}

#[inline]
pub(crate) fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Derivative of the polynomial, evaluated by Horner's rule.
#[inline]
pub(crate) fn horner_derivative(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().enumerate().skip(1).rev().fold(0.0, |acc, (j, &c)| acc * x + j as f64 * c)
}

/// `N x M` matrix whose row `i` is `[1, x_i, x_i^2, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }
}

pub fn build_design_matrix(samples: &[f64], dict: PolynomialDictionary) -> Result<DesignMatrix> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("design matrix samples"));
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("non-finite sample {x}")));
    }
    let m = dict.len();
    let values = DMatrix::from_fn(samples.len(), m, |i, j| samples[i].powi(j as i32));
    Ok(DesignMatrix { values })
}

/// Drift and squared diffusion as monomial coefficient vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SdeModelRepr", into = "SdeModelRepr")]
pub struct SdeModel {
    drift: Vec<f64>,
    diff2: Vec<f64>,
}

impl SdeModel {
    pub fn new(drift: Vec<f64>, diff2: Vec<f64>) -> Result<Self> {
        if drift.is_empty() {
            return Err(Error::EmptyInput("drift coefficients"));
        }
        if diff2.is_empty() {
            return Err(Error::EmptyInput("squared-diffusion coefficients"));
        }
        if drift.len() > MAX_DEGREE + 1 || diff2.len() > MAX_DEGREE + 1 {
            return Err(Error::DegreeTooLarge(drift.len().max(diff2.len()) - 1));
        }
        if drift.iter().chain(&diff2).any(|c| !c.is_finite()) {
            return Err(Error::Domain("non-finite model coefficient".into()));
        }
        Ok(Self { drift, diff2 })
    }

    pub fn drift_coeffs(&self) -> &[f64] {
        &self.drift
    }

    pub fn diff2_coeffs(&self) -> &[f64] {
        &self.diff2
    }

    pub fn max_degree_drift(&self) -> usize {
        self.drift.len() - 1
    }

    pub fn max_degree_diff(&self) -> usize {
        self.diff2.len() - 1
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        horner(&self.drift, x)
    }

    /// `sigma^2(x)`.
    #[inline]
    pub fn diff2(&self, x: f64) -> f64 {
        horner(&self.diff2, x)
    }

    #[inline]
    pub fn diff2_derivative(&self, x: f64) -> f64 {
        horner_derivative(&self.diff2, x)
    }

    /// Fails with [`Error::NegativeDiffusion`] at the first point where `sigma^2 < 0`.
    pub fn check_diffusion_on(&self, points: &[f64]) -> Result<()> {
        for &x in points {
            let value = self.diff2(x);
            if value < 0.0 || !value.is_finite() {
                return Err(Error::NegativeDiffusion { x, value });
            }
        }
        Ok(())
    }

    /// Indices of nonzero drift coefficients.
    pub fn drift_support(&self) -> Vec<usize> {
        support(&self.drift)
    }

    pub fn diff2_support(&self) -> Vec<usize> {
        support(&self.diff2)
    }
}

fn support(coeffs: &[f64]) -> Vec<usize> {
    coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, _)| j).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SdeModelRepr {
    drift: Vec<f64>,
    diff2: Vec<f64>,
    #[serde(default)]
    max_degree_drift: Option<usize>,
    #[serde(default)]
    max_degree_diff: Option<usize>,
}

impl TryFrom<SdeModelRepr> for SdeModel {
    type Error = Error;

    fn try_from(r: SdeModelRepr) -> Result<Self> {
        let nd = r.max_degree_drift.unwrap_or(r.drift.len().saturating_sub(1));
        let ns = r.max_degree_diff.unwrap_or(r.diff2.len().saturating_sub(1));
        if r.drift.len() != nd + 1 || r.diff2.len() != ns + 1 {
            return Err(Error::Config(format!(
                "model degrees ({}, {}) do not match coefficient lengths ({}, {})",
                nd,
                ns,
                r.drift.len(),
                r.diff2.len()
            )));
        }
        SdeModel::new(r.drift, r.diff2)
    }
}

impl From<SdeModel> for SdeModelRepr {
    fn from(m: SdeModel) -> Self {
        Self {
            max_degree_drift: Some(m.max_degree_drift()),
            max_degree_diff: Some(m.max_degree_diff()),
            drift: m.drift,
            diff2: m.diff2,
        }
    }
}
