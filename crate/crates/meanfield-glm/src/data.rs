//! Observed data for a canonical GLM: design matrix, responses, family.
//!
//! The log-likelihood of a coefficient vector β is
//! `Σ_i (y_i·θ_i − b(θ_i))` with `θ = Xβ`; this is the quantity every
//! solver's objective bounds from below and the exponent that tilts the
//! prior into the posterior.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::Family;

/// A validated (X, y, family) triple.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    family: Family,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, family: Family) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Invalid(format!(
                "design matrix must be non-empty, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.nrows() != y.len() {
            return Err(Error::Invalid(format!(
                "design has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        for (idx, &v) in x.iter().enumerate() {
            if !v.is_finite() {
                // nalgebra iterates column-major
                let i = idx % x.nrows();
                let j = idx / x.nrows();
                return Err(Error::Invalid(format!("X[{i}][{j}] = {v} is not finite")));
            }
        }
        family.validate_responses(y.as_slice())?;
        Ok(Dataset { x, y, family })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Linear predictor `Xβ`.
    pub fn linear_predictor(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.x * beta
    }

    /// Log-likelihood `Σ_i (y_i θ_i − b(θ_i))` with `θ = Xβ`.
    ///
    /// Under the `b(0) = 0` normalization this is exactly 0 at β = 0 for
    /// every family, which anchors all evidence comparisons.
    pub fn log_likelihood(&self, beta: &DVector<f64>) -> f64 {
        let theta = self.linear_predictor(beta);
        self.log_likelihood_at_theta(&theta)
    }

    /// Same as [`log_likelihood`](Self::log_likelihood) but for a
    /// precomputed linear predictor (enumeration keeps θ incrementally).
    pub fn log_likelihood_at_theta(&self, theta: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n() {
            let t = theta[i];
            acc += self.y[i] * t - self.family.b(t);
        }
        acc
    }

    /// Gradient of the log-likelihood: `Xᵀ(y − b'(Xβ))`.
    pub fn log_likelihood_grad(&self, beta: &DVector<f64>) -> DVector<f64> {
        let theta = self.linear_predictor(beta);
        let resid = DVector::from_fn(self.n(), |i, _| self.y[i] - self.family.b1(theta[i]));
        self.x.transpose() * resid
    }

    /// Diagonal of the Gram matrix: `d_j = (XᵀX)_jj`, the per-coordinate
    /// quadratic scale used by the tilt family.
    pub fn gram_diag(&self) -> DVector<f64> {
        DVector::from_fn(self.p(), |j, _| self.x.column(j).norm_squared())
    }

    /// `Xᵀy`, the sufficient statistic entering every coordinate update.
    pub fn xty(&self) -> DVector<f64> {
        self.x.transpose() * &self.y
    }
}
