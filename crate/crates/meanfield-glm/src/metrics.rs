//! Posterior-quality metrics: coefficient MSE, credible intervals built
//! from product-tilt quantiles, empirical coverage distributions,
//! plug-in classification error, and a coordinate-wise Wasserstein-1
//! surrogate.
//!
//! The Wasserstein surrogate averages exact one-dimensional W₁ distances
//! between empirical marginals. Marginal W₁ never exceeds the joint
//! transport cost, so the reported value is a LOWER BOUND on the joint
//! per-coordinate W₁ distance, and is labeled as such wherever it is
//! emitted.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::sigmoid;
use crate::num::StableSum;
use crate::prior::DiscretePrior;
use crate::tilt::{mean_to_natural, Tilt};

/// `(1/p)·‖u_hat − beta_star‖²`.
pub fn mse(u_hat: &DVector<f64>, beta_star: &DVector<f64>) -> Result<f64> {
    if u_hat.len() != beta_star.len() {
        return Err(Error::Invalid(format!(
            "estimate has length {}, truth has length {}",
            u_hat.len(),
            beta_star.len()
        )));
    }
    if u_hat.is_empty() {
        return Err(Error::Invalid("vectors must be non-empty".to_string()));
    }
    let mut acc = StableSum::new();
    for j in 0..u_hat.len() {
        let d = u_hat[j] - beta_star[j];
        acc.add(d * d);
    }
    Ok(acc.value() / u_hat.len() as f64)
}

/// Open interval `(lo, hi)`; `lo ≥ hi` is the empty interval.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CredibleInterval {
    pub lo: f64,
    pub hi: f64,
}

impl CredibleInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo).max(0.0)
    }
}

/// Per-coordinate intervals `(q^{α/2} − ε, q^{1−α/2} + ε)` where the
/// quantiles are those of the tilted prior with mean `u_star[j]` and
/// curvature weight `d[j]`.
pub fn credible_intervals(
    prior: &DiscretePrior,
    b2_zero: f64,
    u_star: &DVector<f64>,
    d: &DVector<f64>,
    alpha: f64,
    epsilon: f64,
) -> Result<Vec<CredibleInterval>> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Invalid(format!(
            "alpha must lie in (0, 1/2), got {alpha}"
        )));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Invalid(format!(
            "epsilon must be a positive real, got {epsilon}"
        )));
    }
    if u_star.len() != d.len() {
        return Err(Error::Invalid(format!(
            "means have length {}, weights have length {}",
            u_star.len(),
            d.len()
        )));
    }
    let mut out = Vec::with_capacity(u_star.len());
    for j in 0..u_star.len() {
        let tau = mean_to_natural(prior, b2_zero, u_star[j], d[j])?;
        let tilt = Tilt::new(prior, b2_zero, tau, d[j]);
        out.push(CredibleInterval {
            lo: tilt.quantile(alpha / 2.0)? - epsilon,
            hi: tilt.quantile(1.0 - alpha / 2.0)? + epsilon,
        });
    }
    Ok(out)
}

/// Distribution of per-draw coverage fractions.
#[derive(Clone, Debug, Serialize)]
pub struct CoverageSummary {
    pub mean: f64,
    pub min: f64,
    /// Fraction of draws whose coverage reaches `threshold`
    /// (typically `1 − α − ε`).
    pub exceed_fraction: f64,
    pub threshold: f64,
    pub per_draw: Vec<f64>,
}

/// For each posterior draw, the fraction of coordinates falling in their
/// interval; summarized by mean, min, and the fraction of draws at or
/// above `threshold`.
pub fn average_coverage(
    samples: &[DVector<f64>],
    intervals: &[CredibleInterval],
    threshold: f64,
) -> Result<CoverageSummary> {
    if samples.is_empty() {
        return Err(Error::Invalid("need at least one posterior draw".to_string()));
    }
    if !threshold.is_finite() {
        return Err(Error::Invalid(format!(
            "coverage threshold must be finite, got {threshold}"
        )));
    }
    let p = intervals.len();
    if p == 0 {
        return Err(Error::Invalid("need at least one interval".to_string()));
    }
    let mut per_draw = Vec::with_capacity(samples.len());
    for (s, draw) in samples.iter().enumerate() {
        if draw.len() != p {
            return Err(Error::Invalid(format!(
                "draw {s} has length {}, expected {p}",
                draw.len()
            )));
        }
        let hits = intervals
            .iter()
            .zip(draw.iter())
            .filter(|(iv, &x)| iv.contains(x))
            .count();
        per_draw.push(hits as f64 / p as f64);
    }
    let mut mean = StableSum::new();
    let mut min = f64::INFINITY;
    let mut exceed = 0usize;
    for &c in &per_draw {
        mean.add(c);
        min = min.min(c);
        if c >= threshold {
            exceed += 1;
        }
    }
    Ok(CoverageSummary {
        mean: mean.value() / per_draw.len() as f64,
        min,
        exceed_fraction: exceed as f64 / per_draw.len() as f64,
        threshold,
        per_draw,
    })
}

/// Leading-order excess classification error
/// `2·|φ(⟨u_star, x̃⟩) − f̃|` of the plug-in predictor built from the
/// coordinate-wise posterior means, against the true conditional
/// probability `f̃ ∈ [0,1]`. Always in `[0, 2]`, zero exactly when
/// calibrated. The approximation presumes the caller's scaling
/// `‖x̃‖_∞ = O(1/p)`, under which the predictor concentrates.
pub fn classification_error(
    x_tilde: &DVector<f64>,
    u_star: &DVector<f64>,
    f_tilde: f64,
) -> Result<f64> {
    if x_tilde.len() != u_star.len() {
        return Err(Error::Invalid(format!(
            "feature vector has length {}, means have length {}",
            x_tilde.len(),
            u_star.len()
        )));
    }
    if !(0.0..=1.0).contains(&f_tilde) {
        return Err(Error::Invalid(format!(
            "true conditional probability must lie in [0,1], got {f_tilde}"
        )));
    }
    Ok(2.0 * (sigmoid(x_tilde.dot(u_star)) - f_tilde).abs())
}

/// Exact W₁ between two one-dimensional empirical distributions, by
/// integrating the absolute CDF difference; sample counts may differ.
fn w1_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut last = f64::NAN;
    let mut acc = StableSum::new();
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if !last.is_nan() {
            acc.add((fa - fb).abs() * (t - last));
        }
        while i < a.len() && a[i] == t {
            fa += 1.0 / na;
            i += 1;
        }
        while j < b.len() && b[j] == t {
            fb += 1.0 / nb;
            j += 1;
        }
        last = t;
    }
    acc.value()
}

/// Average over coordinates of the exact 1-D W₁ distance between the two
/// empirical marginals. This is a LOWER BOUND for the joint
/// per-coordinate transport distance: marginal couplings are a relaxation
/// of joint ones.
pub fn coordwise_w1(a: &[DVector<f64>], b: &[DVector<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("sample sets must be non-empty".to_string()));
    }
    let p = a[0].len();
    if p == 0 {
        return Err(Error::Invalid("samples must have positive dimension".to_string()));
    }
    for (name, set) in [("first", a), ("second", b)] {
        for (s, draw) in set.iter().enumerate() {
            if draw.len() != p {
                return Err(Error::Invalid(format!(
                    "draw {s} of the {name} set has length {}, expected {p}",
                    draw.len()
                )));
            }
        }
    }
    let mut total = StableSum::new();
    for j in 0..p {
        let mut xs: Vec<f64> = a.iter().map(|d| d[j]).collect();
        let mut ys: Vec<f64> = b.iter().map(|d| d[j]).collect();
        xs.sort_by(|u, v| u.partial_cmp(v).expect("finite samples"));
        ys.sort_by(|u, v| u.partial_cmp(v).expect("finite samples"));
        total.add(w1_sorted(&xs, &ys));
    }
    Ok(total.value() / p as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::Family;
    use crate::rng::stream;
    use rand::Rng;

    fn three_point() -> DiscretePrior {
        DiscretePrior::three_point(0.2).unwrap()
    }

    #[test]
    fn mse_basics() {
        let truth = DVector::from_column_slice(&[1.0, 0.0, -1.0, 0.0]);
        assert_eq!(mse(&truth, &truth).unwrap(), 0.0);
        // zero estimate against ±1/0 truth gives the nonzero fraction
        let zero = DVector::zeros(4);
        assert_eq!(mse(&zero, &truth).unwrap(), 0.5);
        assert!(mse(&zero, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn untilted_symmetric_intervals_cover_the_hull() {
        let prior = three_point();
        let b2z = Family::Logistic.b2_at_zero();
        let u = DVector::zeros(3);
        let d = DVector::zeros(3);
        let ivs = credible_intervals(&prior, b2z, &u, &d, 0.1, 0.05).unwrap();
        for iv in &ivs {
            assert!((iv.lo - (-1.05)).abs() < 1e-12);
            assert!((iv.hi - 1.05).abs() < 1e-12);
        }
    }

    #[test]
    fn heavy_tilt_collapses_the_interval() {
        let prior = three_point();
        let b2z = Family::Logistic.b2_at_zero();
        let u = DVector::from_element(1, 1.0 - 1e-9);
        let d = DVector::zeros(1);
        let ivs = credible_intervals(&prior, b2z, &u, &d, 0.1, 0.05).unwrap();
        assert!((ivs[0].lo - (1.0 - 0.05)).abs() < 1e-9);
        assert!((ivs[0].hi - (1.0 + 0.05)).abs() < 1e-9);
    }

    #[test]
    fn intervals_widen_with_epsilon_and_reject_bad_parameters() {
        let prior = three_point();
        let b2z = Family::Logistic.b2_at_zero();
        let u = DVector::from_column_slice(&[0.3, -0.2]);
        let d = DVector::from_column_slice(&[0.5, 0.1]);
        let narrow = credible_intervals(&prior, b2z, &u, &d, 0.2, 0.01).unwrap();
        let wide = credible_intervals(&prior, b2z, &u, &d, 0.2, 0.2).unwrap();
        for (a, b) in narrow.iter().zip(&wide) {
            assert!(b.lo < a.lo && a.hi < b.hi);
            assert!(b.width() > a.width());
        }
        assert!(credible_intervals(&prior, b2z, &u, &d, 0.0, 0.1).is_err());
        assert!(credible_intervals(&prior, b2z, &u, &d, 0.5, 0.1).is_err());
        assert!(credible_intervals(&prior, b2z, &u, &d, 0.1, 0.0).is_err());
    }

    #[test]
    fn full_hull_intervals_give_unit_coverage_and_empty_give_zero() {
        let full = vec![CredibleInterval { lo: -1.1, hi: 1.1 }; 3];
        let empty = vec![CredibleInterval { lo: 0.5, hi: -0.5 }; 3];
        let draws: Vec<DVector<f64>> = vec![
            DVector::from_column_slice(&[1.0, -1.0, 0.0]),
            DVector::from_column_slice(&[0.0, 0.0, 1.0]),
        ];
        let cov = average_coverage(&draws, &full, 0.9).unwrap();
        assert_eq!(cov.mean, 1.0);
        assert_eq!(cov.min, 1.0);
        assert_eq!(cov.exceed_fraction, 1.0);
        let cov = average_coverage(&draws, &empty, 0.9).unwrap();
        assert_eq!(cov.mean, 0.0);
        assert_eq!(cov.exceed_fraction, 0.0);
        assert!(average_coverage(&[], &full, 0.9).is_err());
    }

    #[test]
    fn coverage_concentrates_for_draws_from_the_tilt_itself() {
        let prior = three_point();
        let b2z = Family::Logistic.b2_at_zero();
        let p = 200;
        let alpha = 0.1;
        let eps = 0.05;
        let u = DVector::from_element(p, 0.5);
        let d = DVector::zeros(p);
        let ivs = credible_intervals(&prior, b2z, &u, &d, alpha, eps).unwrap();
        // positive tilt pushes the lower atom below α/2, so the interval
        // drops −1 and coverage is non-trivial
        assert!(ivs[0].lo > -1.0);
        let tau = mean_to_natural(&prior, b2z, 0.5, 0.0).unwrap();
        let tilt = Tilt::new(&prior, b2z, tau, 0.0);
        let mut rng = stream(31, "response");
        let draws: Vec<DVector<f64>> = (0..400)
            .map(|_| DVector::from_fn(p, |_, _| tilt.sample_at(rng.random())))
            .collect();
        let threshold = 1.0 - alpha - eps;
        let cov = average_coverage(&draws, &ivs, threshold).unwrap();
        assert!(cov.mean >= 1.0 - alpha, "mean coverage {}", cov.mean);
        assert!(
            cov.exceed_fraction >= 0.95,
            "exceedance {}",
            cov.exceed_fraction
        );
    }

    #[test]
    fn coverage_is_invariant_under_joint_permutations() {
        let prior = three_point();
        let b2z = Family::Logistic.b2_at_zero();
        let u = DVector::from_column_slice(&[0.4, -0.3, 0.0, 0.6]);
        let d = DVector::from_column_slice(&[0.2, 0.1, 0.0, 0.4]);
        let ivs = credible_intervals(&prior, b2z, &u, &d, 0.2, 0.02).unwrap();
        let draws: Vec<DVector<f64>> = vec![
            DVector::from_column_slice(&[1.0, 0.0, -1.0, 1.0]),
            DVector::from_column_slice(&[0.0, -1.0, 0.0, 0.0]),
            DVector::from_column_slice(&[1.0, 1.0, 1.0, -1.0]),
        ];
        let perm = [2usize, 0, 3, 1];
        let ivs_p: Vec<CredibleInterval> = perm.iter().map(|&j| ivs[j]).collect();
        let draws_p: Vec<DVector<f64>> = draws
            .iter()
            .map(|dr| DVector::from_iterator(4, perm.iter().map(|&j| dr[j])))
            .collect();
        let a = average_coverage(&draws, &ivs, 0.75).unwrap();
        let b = average_coverage(&draws_p, &ivs_p, 0.75).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.min, b.min);
        assert_eq!(a.exceed_fraction, b.exceed_fraction);
        assert_eq!(a.per_draw, b.per_draw);
    }

    #[test]
    fn classification_error_trivial_cases() {
        let x = DVector::from_column_slice(&[0.01, -0.02, 0.03]);
        let u = DVector::from_column_slice(&[0.5, 0.1, -0.4]);
        let calibrated = sigmoid(x.dot(&u));
        assert_eq!(classification_error(&x, &u, calibrated).unwrap(), 0.0);
        // predicted probability 1/2 against a deterministic label
        let zero = DVector::zeros(3);
        assert!((classification_error(&zero, &u, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(classification_error(&x, &u, 1.5).is_err());
        assert!(classification_error(&x, &DVector::zeros(2), 0.5).is_err());
    }

    #[test]
    fn classification_error_matches_monte_carlo_when_nearly_degenerate() {
        // β ~ product tilt, x̃ aligned and O(1/p)-scaled, true label
        // almost surely 1: the randomized-prediction disagreement rate and
        // the formula both vanish and agree within 0.02
        let prior = three_point();
        let b2z = Family::Logistic.b2_at_zero();
        let p = 200;
        let u_mean = 0.6;
        let tau = mean_to_natural(&prior, b2z, u_mean, 0.0).unwrap();
        let tilt = Tilt::new(&prior, b2z, tau, 0.0);
        // ⟨x̃, E β⟩ = 7.5 · 0.6 = 4.5, so φ ≈ 0.989
        let x_tilde = DVector::from_element(p, 7.5 / p as f64);
        let u = DVector::from_element(p, u_mean);
        let f_tilde = 1.0;
        let formula = classification_error(&x_tilde, &u, f_tilde).unwrap();

        let mut rng = stream(32, "response");
        let mut disagree = StableSum::new();
        let n_mc = 20_000;
        for _ in 0..n_mc {
            let beta = DVector::from_fn(p, |_, _| tilt.sample_at(rng.random()));
            let prob = sigmoid(x_tilde.dot(&beta));
            let y_hat = rng.random::<f64>() < prob;
            let y_true = rng.random::<f64>() < f_tilde;
            disagree.add(if y_hat != y_true { 1.0 } else { 0.0 });
        }
        let mc = disagree.value() / n_mc as f64;
        assert!(
            (mc - formula).abs() < 0.02,
            "monte carlo {mc} vs formula {formula}"
        );
    }

    #[test]
    fn w1_of_identical_sets_is_zero_and_diracs_give_distance() {
        let a: Vec<DVector<f64>> = vec![
            DVector::from_column_slice(&[0.1, -0.5]),
            DVector::from_column_slice(&[0.9, 0.2]),
        ];
        assert_eq!(coordwise_w1(&a, &a).unwrap(), 0.0);
        let pa = vec![DVector::from_column_slice(&[0.3]); 4];
        let pb = vec![DVector::from_column_slice(&[-0.45]); 7];
        assert!((coordwise_w1(&pa, &pb).unwrap() - 0.75).abs() < 1e-14);
        assert!(coordwise_w1(&a, &[]).is_err());
    }

    #[test]
    fn w1_matches_an_assignment_oracle_on_three_points() {
        // equal masses: the optimal transport is the best of all 3!
        // assignments
        let xs = [0.0, 0.5, 1.0];
        let ys = [0.2, 0.2, 0.9];
        let a: Vec<DVector<f64>> = xs.iter().map(|&v| DVector::from_column_slice(&[v])).collect();
        let b: Vec<DVector<f64>> = ys.iter().map(|&v| DVector::from_column_slice(&[v])).collect();
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let oracle = perms
            .iter()
            .map(|perm| {
                xs.iter()
                    .zip(perm.iter())
                    .map(|(&x, &k)| (x - ys[k]).abs())
                    .sum::<f64>()
                    / 3.0
            })
            .fold(f64::INFINITY, f64::min);
        let val = coordwise_w1(&a, &b).unwrap();
        assert!((val - oracle).abs() < 1e-15, "{val} vs oracle {oracle}");
    }

    #[test]
    fn w1_handles_unequal_sample_counts_exactly() {
        // F_a puts 1/2 on {0, 1}; F_b puts 1/3 on {0, 1/2, 1}:
        // ∫|F_a − F_b| = |1/2 − 1/3|·1/2 + |1/2 − 2/3|·1/2 = 1/6
        let a = vec![
            DVector::from_column_slice(&[0.0]),
            DVector::from_column_slice(&[1.0]),
        ];
        let b = vec![
            DVector::from_column_slice(&[0.0]),
            DVector::from_column_slice(&[0.5]),
            DVector::from_column_slice(&[1.0]),
        ];
        assert!((coordwise_w1(&a, &b).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn w1_is_a_pseudometric_on_marginal_profiles() {
        let mut rng = stream(33, "response");
        for _ in 0..20 {
            let draw = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<DVector<f64>> {
                (0..6)
                    .map(|_| DVector::from_fn(3, |_, _| 2.0 * rng.random::<f64>() - 1.0))
                    .collect()
            };
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let c = draw(&mut rng);
            let ab = coordwise_w1(&a, &b).unwrap();
            let ba = coordwise_w1(&b, &a).unwrap();
            assert_eq!(ab, ba, "symmetry is not exact");
            let ac = coordwise_w1(&a, &c).unwrap();
            let cb = coordwise_w1(&c, &b).unwrap();
            assert!(ab <= ac + cb + 1e-12, "triangle violated: {ab} > {ac} + {cb}");
            assert!(ab >= 0.0);
        }
    }
}
