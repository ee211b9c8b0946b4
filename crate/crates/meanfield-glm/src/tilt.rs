//! Exponential tilts of a discrete prior.
//!
//! For a prior π on a finite support and a family curvature `b''(0)`, the
//! tilt with natural parameter γ₁ at quadratic scale γ₂ reweights each atom
//! x by `exp(γ₁·x − b''(0)·(γ₂/2)·x²)`, normalized by the log-partition
//! `c_π(γ₁, γ₂)`. These one-dimensional measures are the coordinate
//! marginals of the variational family for discrete priors: their means
//! parameterize the mean-field state, their KL to the prior has the closed
//! form `G(u, d) = u·h(u,d) − b''(0)(d/2)·E[X²] − c_π(h(u,d), d)`, and their
//! quantiles build credible intervals.
//!
//! `γ₁ ↦ mean` is strictly increasing (its derivative is the tilted
//! variance), so the mean parameterization is invertible on the open hull of
//! the support; [`mean_to_natural`] inverts it with a bracketed Newton
//! iteration.

use crate::error::{Error, Result};
use crate::num::logsumexp;
use crate::prior::DiscretePrior;

/// Means are clamped this far inside the closed support hull before
/// inversion; the tilted mean can only approach the extreme support points
/// asymptotically.
pub const MEAN_CLAMP: f64 = 1e-12;

/// Residual tolerance `|mean(γ₁) − u|` for the Newton inversion.
pub const INVERT_TOL: f64 = 1e-10;

/// Iteration cap for the Newton inversion.
pub const INVERT_MAX_ITER: usize = 200;

/// A normalized tilted measure with cached atom probabilities.
#[derive(Clone, Debug)]
pub struct Tilt<'a> {
    prior: &'a DiscretePrior,
    gamma1: f64,
    gamma2: f64,
    log_normalizer: f64,
    probs: Vec<f64>,
}

impl<'a> Tilt<'a> {
    pub fn new(prior: &'a DiscretePrior, b2_zero: f64, gamma1: f64, gamma2: f64) -> Self {
        let logw: Vec<f64> = prior
            .support()
            .iter()
            .zip(prior.log_probs())
            .map(|(&s, &lp)| lp + gamma1 * s - b2_zero * 0.5 * gamma2 * s * s)
            .collect();
        let log_normalizer = logsumexp(&logw);
        let probs = logw.iter().map(|w| (w - log_normalizer).exp()).collect();
        Tilt {
            prior,
            gamma1,
            gamma2,
            log_normalizer,
            probs,
        }
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    /// `c_π(γ₁, γ₂)`: log of the prior expectation of the tilt weights.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> &[f64] {
        self.prior.support()
    }

    /// Tilted mean; equals `∂c_π/∂γ₁`.
    pub fn mean(&self) -> f64 {
        self.expect(|s| s)
    }

    /// Tilted variance; equals `∂²c_π/∂γ₁²`.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect(|s| (s - m) * (s - m))
    }

    pub fn second_moment(&self) -> f64 {
        self.expect(|s| s * s)
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.support()
            .iter()
            .zip(&self.probs)
            .map(|(&s, &q)| q * f(s))
            .sum()
    }

    /// Covariance of a tabulated function of the atom with the atom itself:
    /// `Cov(f(X), X)` where `f` is given by its values on the support.
    pub fn cov_table(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.probs.len());
        let mut ef = 0.0;
        let mut es = 0.0;
        let mut efs = 0.0;
        for ((&s, &q), &fv) in self.support().iter().zip(&self.probs).zip(f) {
            ef += q * fv;
            es += q * s;
            efs += q * fv * s;
        }
        efs - ef * es
    }

    /// `Cov(X², X)` under the tilt.
    pub fn cov_square_linear(&self) -> f64 {
        let table: Vec<f64> = self.support().iter().map(|&s| s * s).collect();
        self.cov_table(&table)
    }

    /// Right-continuous inverse CDF at `level ∈ [0, 1]`.
    pub fn quantile(&self, level: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&level) {
            return Err(Error::Invalid(format!(
                "quantile level {level} outside [0, 1]"
            )));
        }
        Ok(self.support()[self.index_at(level)])
    }

    /// Smallest support index whose cumulative tilted mass reaches `u`;
    /// used both for quantiles and for inverse-CDF sampling from base
    /// uniforms.
    pub fn index_at(&self, u: f64) -> usize {
        let mut cum = 0.0;
        for (k, &q) in self.probs.iter().enumerate() {
            cum += q;
            if u <= cum {
                return k;
            }
        }
        self.probs.len() - 1
    }

    pub fn sample_at(&self, u: f64) -> f64 {
        self.support()[self.index_at(u)]
    }
}

/// Tilted mean as a function of the natural parameter: `ċ_π(γ₁; d)`.
pub fn natural_to_mean(prior: &DiscretePrior, b2_zero: f64, gamma1: f64, d: f64) -> f64 {
    Tilt::new(prior, b2_zero, gamma1, d).mean()
}

/// Inverts the mean map: finds `h(u, d)` with `ċ_π(h; d) = u`.
///
/// `u` is clamped into `[min support + 1e-12, max support − 1e-12]` first.
/// Newton steps are safeguarded by a sign-change bracket (expanded by
/// doubling from `[-1, 1]`) and fall back to bisection whenever a step
/// leaves the bracket, so the iteration cannot diverge.
pub fn mean_to_natural(prior: &DiscretePrior, b2_zero: f64, u: f64, d: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::Invalid(format!("target mean {u} is not finite")));
    }
    if prior.len() == 1 {
        return Err(Error::Numerical(
            "mean map is not invertible for a single-atom prior".to_string(),
        ));
    }
    let u = u.clamp(prior.min_support() + MEAN_CLAMP, prior.max_support() - MEAN_CLAMP);

    let resid = |g: f64| natural_to_mean(prior, b2_zero, g, d) - u;

    // bracket a sign change
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut r_lo = resid(lo);
    let mut r_hi = resid(hi);
    let mut expand = 0;
    while r_lo > 0.0 && expand < 80 {
        lo *= 2.0;
        r_lo = resid(lo);
        expand += 1;
    }
    while r_hi < 0.0 && expand < 160 {
        hi *= 2.0;
        r_hi = resid(hi);
        expand += 1;
    }
    if r_lo > 0.0 || r_hi < 0.0 {
        return Err(Error::Numerical(format!(
            "could not bracket the natural parameter for mean {u}"
        )));
    }

    let mut g = 0.5 * (lo + hi);
    for _ in 0..INVERT_MAX_ITER {
        let t = Tilt::new(prior, b2_zero, g, d);
        let r = t.mean() - u;
        if r.abs() <= INVERT_TOL {
            return Ok(g);
        }
        if r > 0.0 {
            hi = g;
        } else {
            lo = g;
        }
        let var = t.variance();
        let newton = g - r / var;
        g = if var > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Numerical(format!(
        "natural-parameter inversion did not reach |residual| <= {INVERT_TOL} in {INVERT_MAX_ITER} iterations (mean {u}, scale {d})"
    )))
}

/// KL divergence of the tilt with mean `u` (at quadratic scale `d`) from the
/// prior, in the mean parameterization:
/// `G(u, d) = u·h − b''(0)(d/2)·E[X²] − c_π(h, d)` with `h = h(u, d)`.
pub fn kl_mean_form(prior: &DiscretePrior, b2_zero: f64, u: f64, d: f64) -> Result<f64> {
    let h = mean_to_natural(prior, b2_zero, u, d)?;
    let t = Tilt::new(prior, b2_zero, h, d);
    Ok(u * h - b2_zero * 0.5 * d * t.second_moment() - t.log_normalizer())
}

/// Partial derivative `∂G/∂u = h(u,d) − b''(0)(d/2)·Cov(X, X²)/Var(X)`
/// under the tilt at `h(u, d)`.
pub fn kl_mean_form_grad(prior: &DiscretePrior, b2_zero: f64, u: f64, d: f64) -> Result<f64> {
    let h = mean_to_natural(prior, b2_zero, u, d)?;
    let t = Tilt::new(prior, b2_zero, h, d);
    let var = t.variance();
    if var < 1e-14 {
        return Err(Error::Numerical(format!(
            "degenerate tilt (variance {var:.3e}) at mean {u}"
        )));
    }
    Ok(h - b2_zero * 0.5 * d * t.cov_square_linear() / var)
}

/// KL divergence of a product of tilts from the product prior:
/// `Σ_j G(u_j, d_j)`.
pub fn product_kl(prior: &DiscretePrior, b2_zero: f64, u: &[f64], d: &[f64]) -> Result<f64> {
    if u.len() != d.len() {
        return Err(Error::Invalid(format!(
            "mean vector has {} coordinates but scale vector has {}",
            u.len(),
            d.len()
        )));
    }
    let mut total = 0.0;
    for (&uj, &dj) in u.iter().zip(d) {
        total += kl_mean_form(prior, b2_zero, uj, dj)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn canonical() -> DiscretePrior {
        DiscretePrior::three_point(0.2).unwrap()
    }

    /// Independent oracle: tilted probabilities by direct normalized sums.
    fn direct_probs(prior: &DiscretePrior, b2z: f64, g1: f64, g2: f64) -> Vec<f64> {
        let w: Vec<f64> = prior
            .support()
            .iter()
            .zip(prior.probs())
            .map(|(&s, &q)| q * (g1 * s - b2z * 0.5 * g2 * s * s).exp())
            .collect();
        let z: f64 = w.iter().sum();
        w.iter().map(|v| v / z).collect()
    }

    #[test]
    fn zero_tilt_is_the_prior() {
        let p = canonical();
        let t = Tilt::new(&p, 0.25, 0.0, 0.0);
        assert!(t.log_normalizer().abs() < 1e-14);
        for (a, b) in t.probs().iter().zip(p.probs()) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
        assert_relative_eq!(t.mean(), 0.0, epsilon = 1e-16);
    }

    #[test]
    fn probabilities_match_the_direct_sum() {
        let p = canonical();
        for &(g1, g2) in &[(0.7, 0.0), (-1.3, 2.0), (4.0, -1.0), (0.0, 5.0)] {
            let t = Tilt::new(&p, 0.25, g1, g2);
            let direct = direct_probs(&p, 0.25, g1, g2);
            for (a, b) in t.probs().iter().zip(&direct) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
            let sum: f64 = t.probs().iter().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    /// Frozen values for the log-normalizer on the canonical prior, checked
    /// against the 3-term sum: c(γ₁=1, γ₂=0) = log(0.2e^{-1}+0.6+0.2e).
    #[test]
    fn log_normalizer_frozen_values() {
        let p = canonical();
        let direct_pos = (0.2 * (-1.0f64).exp() + 0.6 + 0.2 * 1.0f64.exp()).ln();
        let t = Tilt::new(&p, 0.25, 1.0, 0.0);
        assert_relative_eq!(t.log_normalizer(), direct_pos, epsilon = 1e-14);
        assert_relative_eq!(t.log_normalizer(), 0.19657963715008203, epsilon = 1e-12);

        // with curvature: γ₁ = 0, γ₂ = 2, b''(0) = 1/4 downweights ±1 by e^{-1/4}
        let t2 = Tilt::new(&p, 0.25, 0.0, 2.0);
        let direct = (0.4 * (-0.25f64).exp() + 0.6).ln();
        assert_relative_eq!(t2.log_normalizer(), direct, epsilon = 1e-14);
    }

    #[test]
    fn mean_is_derivative_of_log_normalizer() {
        let p = canonical();
        let h = 1e-6;
        for &(g1, g2) in &[(0.4, 1.0), (-2.0, 0.5), (1.5, -0.7)] {
            let t = Tilt::new(&p, 0.25, g1, g2);
            let fd = (Tilt::new(&p, 0.25, g1 + h, g2).log_normalizer()
                - Tilt::new(&p, 0.25, g1 - h, g2).log_normalizer())
                / (2.0 * h);
            assert_relative_eq!(t.mean(), fd, epsilon = 1e-8);
            let fd2 = (Tilt::new(&p, 0.25, g1 + h, g2).mean()
                - Tilt::new(&p, 0.25, g1 - h, g2).mean())
                / (2.0 * h);
            assert_relative_eq!(t.variance(), fd2, epsilon = 1e-7);
        }
    }

    #[test]
    fn mean_map_round_trips() {
        let p = canonical();
        for &d in &[0.0, 0.5, 3.0] {
            for &u in &[-0.95, -0.4, 0.0, 0.2, 0.77, 0.999999] {
                let g = mean_to_natural(&p, 0.25, u, d).unwrap();
                assert!((natural_to_mean(&p, 0.25, g, d) - u).abs() <= INVERT_TOL * 1.01);
            }
        }
    }

    /// Frozen regression value for the inversion on the canonical prior:
    /// h(0.3, 0) solves 0.2(e^γ − e^{−γ}) = 0.3(0.2e^{−γ} + 0.6 + 0.2e^γ).
    #[test]
    fn mean_to_natural_frozen_value() {
        let p = canonical();
        let g = mean_to_natural(&p, 0.25, 0.3, 0.0).unwrap();
        assert_relative_eq!(g, 0.7653024832768203, epsilon = 1e-9);
        // independent bisection oracle
        let mut lo = 0.0;
        let mut hi = 4.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if natural_to_mean(&p, 0.25, mid, 0.0) < 0.3 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(g, 0.5 * (lo + hi), epsilon = 1e-9);
    }

    #[test]
    fn out_of_hull_means_are_clamped() {
        let p = canonical();
        let g = mean_to_natural(&p, 0.25, 2.0, 0.0).unwrap();
        let m = natural_to_mean(&p, 0.25, g, 0.0);
        assert!((m - (1.0 - MEAN_CLAMP)).abs() < 1e-10);
    }

    #[test]
    fn kl_is_nonnegative_zero_only_at_prior_mean() {
        let p = canonical();
        assert_relative_eq!(kl_mean_form(&p, 0.25, 0.0, 0.0).unwrap(), 0.0, epsilon = 1e-12);
        for &u in &[-0.8, -0.1, 0.35, 0.9] {
            let g = kl_mean_form(&p, 0.25, u, 0.0).unwrap();
            if u != 0.0 {
                assert!(g > 0.0, "G({u}, 0) = {g} should be positive");
            }
        }
        // with d > 0 the zero of G moves: G(mean of the d-tilt, d) = 0? No —
        // G(u,d) is the KL of the (h(u,d), d)-tilt from the *prior*, which
        // is zero only if that tilt IS the prior; with d > 0 the quadratic
        // reweighting makes every tilt differ from the prior, so G > 0.
        let m = Tilt::new(&p, 0.25, 0.0, 2.0).mean();
        assert!(kl_mean_form(&p, 0.25, m, 2.0).unwrap() > 0.0);
    }

    #[test]
    fn kl_matches_direct_kl_of_the_tilted_pmf() {
        let p = canonical();
        for &(u, d) in &[(0.3, 0.0), (-0.55, 1.2), (0.1, 4.0)] {
            let h = mean_to_natural(&p, 0.25, u, d).unwrap();
            let t = Tilt::new(&p, 0.25, h, d);
            let direct: f64 = t
                .probs()
                .iter()
                .zip(p.probs())
                .filter(|(&q, _)| q > 0.0)
                .map(|(&q, &pr)| q * (q / pr).ln())
                .sum();
            assert_relative_eq!(
                kl_mean_form(&p, 0.25, u, d).unwrap(),
                direct,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let p = canonical();
        let h = 1e-6;
        for &(u, d) in &[(0.3, 0.0), (-0.5, 1.0), (0.05, 2.5)] {
            let fd = (kl_mean_form(&p, 0.25, u + h, d).unwrap()
                - kl_mean_form(&p, 0.25, u - h, d).unwrap())
                / (2.0 * h);
            assert_relative_eq!(
                kl_mean_form_grad(&p, 0.25, u, d).unwrap(),
                fd,
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn kl_blows_up_toward_the_hull_boundary() {
        let p = canonical();
        let near = kl_mean_form(&p, 0.25, 0.999, 0.0).unwrap();
        let nearer = kl_mean_form(&p, 0.25, 0.9999, 0.0).unwrap();
        let nearest = kl_mean_form(&p, 0.25, 0.999999, 0.0).unwrap();
        assert!(near < nearer && nearer < nearest);
        assert!(nearest > kl_mean_form(&p, 0.25, 0.5, 0.0).unwrap());
    }

    #[test]
    fn product_kl_sums_coordinates() {
        let p = canonical();
        let u = [0.2, -0.4, 0.0];
        let d = [0.5, 0.5, 2.0];
        let total = product_kl(&p, 0.25, &u, &d).unwrap();
        let manual: f64 = u
            .iter()
            .zip(&d)
            .map(|(&uj, &dj)| kl_mean_form(&p, 0.25, uj, dj).unwrap())
            .sum();
        assert_relative_eq!(total, manual, epsilon = 1e-14);
        assert!(product_kl(&p, 0.25, &u, &d[..2]).is_err());
    }

    #[test]
    fn quantiles_walk_the_cdf_right_continuously() {
        let p = canonical();
        let t = Tilt::new(&p, 0.25, 0.0, 0.0); // prior itself: cum masses 0.2, 0.8, 1.0
        assert_eq!(t.quantile(0.05).unwrap(), -1.0);
        assert_eq!(t.quantile(0.19).unwrap(), -1.0);
        assert_eq!(t.quantile(0.21).unwrap(), 0.0);
        assert_eq!(t.quantile(0.79).unwrap(), 0.0);
        assert_eq!(t.quantile(0.95).unwrap(), 1.0);
        assert_eq!(t.quantile(1.0).unwrap(), 1.0);
        assert!(t.quantile(-0.1).is_err());
        assert!(t.quantile(1.1).is_err());
    }

    #[test]
    fn covariance_table_matches_direct_computation() {
        let p = canonical();
        let t = Tilt::new(&p, 0.25, 0.9, 1.5);
        let f = [2.0, -1.0, 0.5];
        let q = t.probs();
        let s = t.support();
        let ef: f64 = (0..3).map(|k| q[k] * f[k]).sum();
        let es: f64 = (0..3).map(|k| q[k] * s[k]).sum();
        let efs: f64 = (0..3).map(|k| q[k] * f[k] * s[k]).sum();
        assert_relative_eq!(t.cov_table(&f), efs - ef * es, epsilon = 1e-14);
        assert_relative_eq!(
            t.cov_square_linear(),
            t.cov_table(&[1.0, 0.0, 1.0]),
            epsilon = 1e-14
        );
    }
}
