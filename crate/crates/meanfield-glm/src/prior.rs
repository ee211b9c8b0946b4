//! Product priors over regression coefficients.
//!
//! The working prior is applied coordinate-wise: either a finitely supported
//! distribution on `[-1, 1]` or the standard Gaussian. The discrete case is
//! the domain of the tilt solver, the Gibbs sampler, and exact enumeration;
//! the Gaussian case is the domain of the Gaussian mean-field and
//! tangent-bound solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serializable prior choice, as it appears in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Discrete { support: Vec<f64>, probs: Vec<f64> },
    StandardGaussian,
}

impl PriorSpec {
    pub fn is_gaussian(&self) -> bool {
        matches!(self, PriorSpec::StandardGaussian)
    }

    /// Validates and returns the discrete prior, or a pairing error for the
    /// Gaussian case.
    pub fn discrete(&self) -> Result<DiscretePrior> {
        match self {
            PriorSpec::Discrete { support, probs } => {
                DiscretePrior::new(support.clone(), probs.clone())
            }
            PriorSpec::StandardGaussian => Err(Error::Pairing(
                "this operation requires a finitely supported prior, got standard_gaussian"
                    .to_string(),
            )),
        }
    }
}

/// A validated, finitely supported prior on `[-1, 1]`.
///
/// Support points are kept sorted ascending with their probabilities and log
/// probabilities; all atoms have strictly positive mass and the masses sum
/// to one within 1e-12.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePrior {
    support: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl DiscretePrior {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Invalid("prior support is empty".to_string()));
        }
        if support.len() != probs.len() {
            return Err(Error::Invalid(format!(
                "support has {} points but probs has {} entries",
                support.len(),
                probs.len()
            )));
        }
        for (i, &s) in support.iter().enumerate() {
            if !s.is_finite() || !(-1.0..=1.0).contains(&s) {
                return Err(Error::Invalid(format!(
                    "support[{i}] = {s} lies outside [-1, 1]"
                )));
            }
        }
        for (i, &q) in probs.iter().enumerate() {
            if !q.is_finite() || q <= 0.0 {
                return Err(Error::Invalid(format!(
                    "probs[{i}] = {q} is not strictly positive"
                )));
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "prior probabilities sum to {total}, not 1 (tolerance 1e-12)"
            )));
        }
        let mut pairs: Vec<(f64, f64)> = support.into_iter().zip(probs).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Invalid(format!(
                    "support point {} appears more than once",
                    w[0].0
                )));
            }
        }
        let (support, probs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let log_probs = probs.iter().map(|q| q.ln()).collect();
        Ok(DiscretePrior {
            support,
            probs,
            log_probs,
        })
    }

    /// The canonical three-point prior `{-1, 0, 1}` with masses
    /// `(p_edge, 1-2·p_edge, p_edge)`.
    pub fn three_point(p_edge: f64) -> Result<Self> {
        Self::new(
            vec![-1.0, 0.0, 1.0],
            vec![p_edge, 1.0 - 2.0 * p_edge, p_edge],
        )
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Number of support points.
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty supports
    }

    pub fn min_support(&self) -> f64 {
        self.support[0]
    }

    pub fn max_support(&self) -> f64 {
        *self.support.last().unwrap()
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(s, q)| s * q)
            .sum()
    }

    /// True when the support and masses are symmetric about zero.
    pub fn is_symmetric(&self) -> bool {
        let k = self.len();
        (0..k).all(|i| {
            (self.support[i] + self.support[k - 1 - i]).abs() < 1e-15
                && (self.probs[i] - self.probs[k - 1 - i]).abs() < 1e-15
        })
    }

    /// Right-continuous inverse CDF: the smallest support index whose
    /// cumulative prior mass reaches `u`.
    pub fn index_at(&self, u: f64) -> usize {
        let mut cum = 0.0;
        for (k, &q) in self.probs.iter().enumerate() {
            cum += q;
            if u <= cum {
                return k;
            }
        }
        self.len() - 1
    }
}
