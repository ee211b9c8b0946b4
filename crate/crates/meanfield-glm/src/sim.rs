//! Seeded simulation of coefficients and responses.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::Result;
use crate::family::{sigmoid, Family};
use crate::prior::PriorSpec;
use crate::rng::stream;

/// Draws a coefficient vector from the product prior (stream label "beta").
pub fn draw_coefficients(prior: &PriorSpec, p: usize, seed: u64) -> Result<DVector<f64>> {
    let mut rng = stream(seed, "beta");
    match prior {
        PriorSpec::Discrete { .. } => {
            let d = prior.discrete()?;
            Ok(DVector::from_fn(p, |_, _| {
                d.support()[d.index_at(rng.random::<f64>())]
            }))
        }
        PriorSpec::StandardGaussian => {
            Ok(DVector::from_fn(p, |_, _| rng.sample(StandardNormal)))
        }
    }
}

/// Draws responses from the family's data model at `θ = Xβ` (stream label
/// "response"): Gaussian with unit variance for linear, Bernoulli(sigmoid θ)
/// for logistic, Binomial(trials, sigmoid θ) for binomial.
pub fn draw_responses(x: &DMatrix<f64>, beta: &DVector<f64>, family: Family, seed: u64) -> DVector<f64> {
    let mut rng = stream(seed, "response");
    let theta = x * beta;
    DVector::from_fn(x.nrows(), |i, _| match family {
        Family::Linear => theta[i] + rng.sample::<f64, _>(StandardNormal),
        Family::Logistic => {
            if rng.random::<f64>() < sigmoid(theta[i]) {
                1.0
            } else {
                0.0
            }
        }
        Family::Binomial { trials } => {
            let b = Binomial::new(trials as u64, sigmoid(theta[i])).expect("valid probability");
            b.sample(&mut rng) as f64
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::DiscretePrior;

    #[test]
    fn coefficient_draws_hit_support_with_prior_frequencies() {
        let prior = PriorSpec::Discrete {
            support: vec![-1.0, 0.0, 1.0],
            probs: vec![0.2, 0.6, 0.2],
        };
        let beta = draw_coefficients(&prior, 20_000, 11).unwrap();
        let d = DiscretePrior::three_point(0.2).unwrap();
        for (k, &s) in d.support().iter().enumerate() {
            let freq = beta.iter().filter(|&&b| b == s).count() as f64 / beta.len() as f64;
            assert!(
                (freq - d.probs()[k]).abs() < 0.02,
                "support {s}: frequency {freq} vs mass {}",
                d.probs()[k]
            );
        }
    }

    #[test]
    fn responses_respect_family_domains_and_seeding() {
        let x = DMatrix::from_fn(50, 3, |i, j| ((i * 3 + j) as f64 * 0.61).sin() * 0.3);
        let beta = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        for fam in [Family::Linear, Family::Logistic, Family::Binomial { trials: 4 }] {
            let y1 = draw_responses(&x, &beta, fam, 5);
            let y2 = draw_responses(&x, &beta, fam, 5);
            assert_eq!(y1, y2);
            let y3 = draw_responses(&x, &beta, fam, 6);
            assert_ne!(y1, y3);
            fam.validate_responses(y1.as_slice()).unwrap();
        }
    }

    #[test]
    fn logistic_frequencies_track_the_link() {
        let x = DMatrix::from_element(40_000, 1, 1.0);
        let beta = DVector::from_vec(vec![0.8]);
        let y = draw_responses(&x, &beta, Family::Logistic, 3);
        let rate = y.sum() / y.len() as f64;
        assert!((rate - sigmoid(0.8)).abs() < 0.01);
    }
}
