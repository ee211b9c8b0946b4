//! Canonical exponential-family response models.
//!
//! A family is determined by its log-partition function `b` under the
//! normalization `b(0) = 0`, so the likelihood of one observation is
//! `exp(y·θ − b(θ))` with natural parameter `θ = ⟨x, β⟩`. Three families are
//! supported: linear (Gaussian noise, `b(θ) = θ²/2`), logistic
//! (`b(θ) = log(1+e^θ) − log 2`), and binomial with a fixed trial count
//! (`trials ×` the logistic `b`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerically stable `log(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function `1/(1 + exp(-x))`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Response family of a canonical GLM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Linear,
    Logistic,
    Binomial { trials: u32 },
}

impl Family {
    /// Log-partition function, normalized so `b(0) = 0`.
    #[inline]
    pub fn b(&self, theta: f64) -> f64 {
        match self {
            Family::Linear => 0.5 * theta * theta,
            Family::Logistic => softplus(theta) - std::f64::consts::LN_2,
            Family::Binomial { trials } => {
                *trials as f64 * (softplus(theta) - std::f64::consts::LN_2)
            }
        }
    }

    /// First derivative `b'(θ)` (the conditional mean of the response).
    #[inline]
    pub fn b1(&self, theta: f64) -> f64 {
        match self {
            Family::Linear => theta,
            Family::Logistic => sigmoid(theta),
            Family::Binomial { trials } => *trials as f64 * sigmoid(theta),
        }
    }

    /// Second derivative `b''(θ)` (the conditional variance).
    #[inline]
    pub fn b2(&self, theta: f64) -> f64 {
        match self {
            Family::Linear => 1.0,
            Family::Logistic => {
                let e = (-theta.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            Family::Binomial { trials } => {
                let e = (-theta.abs()).exp();
                *trials as f64 * e / ((1.0 + e) * (1.0 + e))
            }
        }
    }

    /// `b''(0)`: 1 for linear, 1/4 for logistic, trials/4 for binomial.
    #[inline]
    pub fn b2_at_zero(&self) -> f64 {
        match self {
            Family::Linear => 1.0,
            Family::Logistic => 0.25,
            Family::Binomial { trials } => *trials as f64 * 0.25,
        }
    }

    /// Supremum of `b''` over the real line. For the supported families the
    /// supremum is attained at 0, so it coincides with `b2_at_zero`.
    #[inline]
    pub fn b2_sup(&self) -> f64 {
        self.b2_at_zero()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Logistic => "logistic",
            Family::Binomial { .. } => "binomial",
        }
    }

    /// Checks that a response vector lies in the family's domain: finite
    /// reals (linear), {0,1} (logistic), or integers in 0..=trials
    /// (binomial).
    pub fn validate_responses(&self, y: &[f64]) -> Result<()> {
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Invalid(format!("y[{i}] = {v} is not finite")));
            }
            match self {
                Family::Linear => {}
                Family::Logistic => {
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Invalid(format!(
                            "y[{i}] = {v} is not a binary response"
                        )));
                    }
                }
                Family::Binomial { trials } => {
                    if v.fract() != 0.0 || v < 0.0 || v > *trials as f64 {
                        return Err(Error::Invalid(format!(
                            "y[{i}] = {v} is not an integer count in 0..={trials}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
