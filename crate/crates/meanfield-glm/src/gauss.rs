//! Diagonal-Gaussian mean-field variational inference for the
//! standard-Gaussian prior.
//!
//! The objective over `Q = ⊗ N(u_i, v_i)` is
//!
//! ```text
//! M(u, v) = Σ_k y_k⟨x_k, u⟩ − Σ_k E_Q b(⟨x_k, σ⟩)
//!         + ½ Σ_i log v_i − Σ_i (v_i + u_i²)/2 + p/2,
//! ```
//!
//! the expected log-likelihood minus `KL(Q‖N(0, I))`. The intractable
//! `E_Q b` term is estimated by Monte Carlo with common random numbers: a
//! fixed matrix of standard-normal base draws `z` (derived from the seed,
//! one counter-based stream per sample index) is mapped through
//! `σ = u + √v ⊙ z`. Freezing `z` makes the estimate a smooth deterministic
//! function of `(u, v)`, so it can be handed to a bound-constrained
//! quasi-Newton optimizer and differentiated exactly.
//!
//! [`grad_gauss_mc`] is that exact pathwise derivative of the CRN
//! estimate — it matches finite differences of [`elbo_gauss_mc`] at the
//! same seed to near machine precision. [`grad_gauss_score`] is the
//! classical score-function (log-derivative) estimator of the same
//! gradient; it is unbiased for the exact gradient but noisier, and is kept
//! for comparison.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::num::{mc_mean_se, StableSum};
use crate::optim::{minimize_bounded, BoundedOptions};
use crate::prior::PriorSpec;
use crate::rng::stream_indexed;

/// Variance floor for the variational state.
pub const V_MIN: f64 = 1e-6;

/// Default Monte Carlo sample count while optimizing.
pub const FIT_SAMPLES: usize = 2000;

/// Default Monte Carlo sample count for reported objective values.
pub const REPORT_SAMPLES: usize = 100_000;

/// Samples are processed in fixed-size column blocks so memory stays flat
/// and parallel scheduling cannot change the result.
const BLOCK: usize = 512;

/// Mean and variance of one product-Gaussian variational state.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussState {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl GaussState {
    pub fn new(u: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        let s = GaussState { u, v };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.len() != self.v.len() {
            return Err(Error::Invalid(format!(
                "mean has {} coordinates but variance has {}",
                self.u.len(),
                self.v.len()
            )));
        }
        for (i, (&ui, &vi)) in self.u.iter().zip(self.v.iter()).enumerate() {
            if !ui.is_finite() || !vi.is_finite() {
                return Err(Error::Invalid(format!(
                    "non-finite variational parameter at coordinate {i}"
                )));
            }
            if vi < V_MIN {
                return Err(Error::Invalid(format!(
                    "variance {vi} at coordinate {i} is below the floor {V_MIN}"
                )));
            }
        }
        Ok(())
    }
}

/// Monte Carlo settings shared by the estimator and the fit.
#[derive(Clone, Copy, Debug)]
pub struct MCConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl MCConfig {
    pub fn new(n_samples: usize, seed: u64, antithetic: bool) -> Result<Self> {
        if n_samples < 2 {
            return Err(Error::Invalid(format!(
                "Monte Carlo needs at least 2 samples, got {n_samples}"
            )));
        }
        if antithetic && n_samples % 2 != 0 {
            return Err(Error::Invalid(format!(
                "antithetic pairing needs an even sample count, got {n_samples}"
            )));
        }
        Ok(MCConfig {
            n_samples,
            seed,
            antithetic,
        })
    }

    /// Defaults used while optimizing.
    pub fn fitting(seed: u64) -> Self {
        MCConfig {
            n_samples: FIT_SAMPLES,
            seed,
            antithetic: true,
        }
    }

    /// Defaults used for final reported values.
    pub fn reporting(seed: u64) -> Self {
        MCConfig {
            n_samples: REPORT_SAMPLES,
            seed,
            antithetic: true,
        }
    }

    /// Re-checks the invariants (useful after field-wise construction).
    pub fn check(&self) -> Result<()> {
        Self::new(self.n_samples, self.seed, self.antithetic).map(|_| ())
    }
}

fn require_gaussian(prior: &PriorSpec) -> Result<()> {
    if !prior.is_gaussian() {
        return Err(Error::Pairing(
            "the Gaussian mean-field solver requires the standard-gaussian prior".to_string(),
        ));
    }
    Ok(())
}

/// Base draw for sample `s`: antithetic pairs mirror the first half.
fn base_draw(seed: u64, s: usize, half: usize, antithetic: bool, p: usize) -> DVector<f64> {
    let (idx, flip) = if antithetic && s >= half {
        (s - half, -1.0)
    } else {
        (s, 1.0)
    };
    let mut rng = stream_indexed(seed, "gauss_z", &[idx as u64]);
    DVector::from_iterator(
        p,
        (0..p).map(|_| flip * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)),
    )
}

struct McParts {
    /// Per-sample values of `Σ_k b(⟨x_k, σ_s⟩)`, in sample order.
    per_sample: Vec<f64>,
    /// `Σ_s Xᵀ b'(Θ_s)` (unnormalized gradient of the likelihood term in u).
    gu_sum: DVector<f64>,
    /// `Σ_s (Xᵀ b'(Θ_s)) ⊙ z_s` (for the variance derivative).
    gv_sum: DVector<f64>,
}

/// One pass over the CRN sample set: the expected-`b` term and, if asked,
/// the pathwise gradient accumulators. Samples are processed in fixed
/// blocks, in parallel, and reduced in block order.
fn mc_parts(data: &Dataset, state: &GaussState, cfg: &MCConfig, want_grad: bool) -> McParts {
    let p = data.p();
    let x = data.x();
    let family = data.family();
    let s_total = cfg.n_samples;
    let half = s_total / 2;
    let sqrt_v = state.v.map(f64::sqrt);

    let n_blocks = s_total.div_ceil(BLOCK);
    let blocks: Vec<(Vec<f64>, DVector<f64>, DVector<f64>)> = (0..n_blocks)
        .into_par_iter()
        .map(|blk| {
            let lo = blk * BLOCK;
            let hi = (lo + BLOCK).min(s_total);
            let width = hi - lo;
            let mut z = DMatrix::<f64>::zeros(p, width);
            for (c, s) in (lo..hi).enumerate() {
                z.set_column(c, &base_draw(cfg.seed, s, half, cfg.antithetic, p));
            }
            let mut sigma = DMatrix::<f64>::zeros(p, width);
            for c in 0..width {
                for i in 0..p {
                    sigma[(i, c)] = state.u[i] + sqrt_v[i] * z[(i, c)];
                }
            }
            let mut theta = x * &sigma;
            let mut per_sample = Vec::with_capacity(width);
            for c in 0..width {
                let mut acc = StableSum::new();
                for r in 0..theta.nrows() {
                    acc.add(family.b(theta[(r, c)]));
                }
                per_sample.push(acc.value());
            }
            let (mut gu, mut gv) = (DVector::zeros(p), DVector::zeros(p));
            if want_grad {
                theta.apply(|t| *t = family.b1(*t));
                let g = x.transpose() * &theta;
                for c in 0..width {
                    for i in 0..p {
                        gu[i] += g[(i, c)];
                        gv[i] += g[(i, c)] * z[(i, c)];
                    }
                }
            }
            (per_sample, gu, gv)
        })
        .collect();

    let mut per_sample = Vec::with_capacity(s_total);
    let mut gu_sum = DVector::zeros(p);
    let mut gv_sum = DVector::zeros(p);
    for (ps, gu, gv) in blocks {
        per_sample.extend(ps);
        gu_sum += gu;
        gv_sum += gv;
    }
    McParts {
        per_sample,
        gu_sum,
        gv_sum,
    }
}

fn kl_part(state: &GaussState) -> f64 {
    let p = state.u.len() as f64;
    let mut acc = StableSum::new();
    for (&ui, &vi) in state.u.iter().zip(state.v.iter()) {
        acc.add(0.5 * vi.ln() - 0.5 * (vi + ui * ui));
    }
    acc.value() + 0.5 * p
}

/// CRN Monte Carlo estimate of `M(u, v)`, with the standard error of its
/// sampled term.
pub fn elbo_gauss_mc_with_se(
    data: &Dataset,
    prior: &PriorSpec,
    state: &GaussState,
    cfg: &MCConfig,
) -> Result<(f64, f64)> {
    require_gaussian(prior)?;
    state.validate()?;
    cfg.check()?;
    if state.u.len() != data.p() {
        return Err(Error::Invalid(format!(
            "state has {} coordinates but the design has {}",
            state.u.len(),
            data.p()
        )));
    }
    let parts = mc_parts(data, state, cfg, false);
    let (like_mean, se) = mc_mean_se(&parts.per_sample, cfg.antithetic);
    let linear: f64 = data.xty().dot(&state.u);
    Ok((linear - like_mean + kl_part(state), se))
}

/// CRN Monte Carlo estimate of `M(u, v)`.
pub fn elbo_gauss_mc(
    data: &Dataset,
    prior: &PriorSpec,
    state: &GaussState,
    cfg: &MCConfig,
) -> Result<f64> {
    elbo_gauss_mc_with_se(data, prior, state, cfg).map(|(m, _)| m)
}

/// Exact pathwise gradient of the CRN estimate: differentiates
/// `σ_s = u + √v ⊙ z_s` through the sampled term, so it agrees with finite
/// differences of [`elbo_gauss_mc`] at the same seed.
///
/// ```text
/// ∂M/∂u_i = Σ_k y_k x_ki − mean_s [Xᵀ b'(Xσ_s)]_i − u_i
/// ∂M/∂v_i = −mean_s [Xᵀ b'(Xσ_s)]_i z_si / (2√v_i) + 1/(2v_i) − ½
/// ```
pub fn grad_gauss_mc(
    data: &Dataset,
    prior: &PriorSpec,
    state: &GaussState,
    cfg: &MCConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    require_gaussian(prior)?;
    state.validate()?;
    cfg.check()?;
    let p = data.p();
    if state.u.len() != p {
        return Err(Error::Invalid(format!(
            "state has {} coordinates but the design has {}",
            state.u.len(),
            p
        )));
    }
    let parts = mc_parts(data, state, cfg, true);
    let s = cfg.n_samples as f64;
    let xty = data.xty();
    let mut gu = DVector::zeros(p);
    let mut gv = DVector::zeros(p);
    for i in 0..p {
        gu[i] = xty[i] - parts.gu_sum[i] / s - state.u[i];
        gv[i] = -parts.gv_sum[i] / s / (2.0 * state.v[i].sqrt()) + 0.5 / state.v[i] - 0.5;
    }
    Ok((gu, gv))
}

/// Score-function (log-derivative) estimator of the same gradient:
///
/// ```text
/// ∂M/∂u_i ≈ Σ_k y_k x_ki − mean_s [B_s (σ_si − u_i)/v_i] − u_i
/// ∂M/∂v_i ≈ −mean_s [B_s (−1/(2v_i) + (σ_si − u_i)²/(2v_i²))] + 1/(2v_i) − ½
/// ```
///
/// with `B_s = Σ_k b(⟨x_k, σ_s⟩)`. Unbiased for the exact gradient but with
/// much higher variance than the pathwise estimate; kept as an independent
/// cross-check.
pub fn grad_gauss_score(
    data: &Dataset,
    prior: &PriorSpec,
    state: &GaussState,
    cfg: &MCConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    require_gaussian(prior)?;
    state.validate()?;
    cfg.check()?;
    let p = data.p();
    if state.u.len() != p {
        return Err(Error::Invalid(format!(
            "state has {} coordinates but the design has {}",
            state.u.len(),
            p
        )));
    }
    let parts = mc_parts(data, state, cfg, false);
    let half = cfg.n_samples / 2;
    let sqrt_v = state.v.map(f64::sqrt);
    let mut su = vec![StableSum::new(); p];
    let mut sv = vec![StableSum::new(); p];
    for (s, &bs) in parts.per_sample.iter().enumerate() {
        let z = base_draw(cfg.seed, s, half, cfg.antithetic, p);
        for i in 0..p {
            // σ_si − u_i = √v_i z_si
            let dev = sqrt_v[i] * z[i];
            su[i].add(bs * dev / state.v[i]);
            sv[i].add(bs * (-0.5 / state.v[i] + dev * dev / (2.0 * state.v[i] * state.v[i])));
        }
    }
    let s = cfg.n_samples as f64;
    let xty = data.xty();
    let mut gu = DVector::zeros(p);
    let mut gv = DVector::zeros(p);
    for i in 0..p {
        gu[i] = xty[i] - su[i].value() / s - state.u[i];
        gv[i] = -sv[i].value() / s + 0.5 / state.v[i] - 0.5;
    }
    Ok((gu, gv))
}

/// Options for [`fit_gauss`].
#[derive(Clone, Copy, Debug)]
pub struct GaussFitOptions {
    pub v_min: f64,
    pub max_iter: usize,
    /// Threshold on the projected-gradient ∞-norm; `None` selects the
    /// default `1e-3·√p`, scaled so the target loosens with dimension
    /// rather than demanding sub-MC-noise precision.
    pub tol: Option<f64>,
}

impl Default for GaussFitOptions {
    fn default() -> Self {
        GaussFitOptions {
            v_min: V_MIN,
            max_iter: 300,
            tol: None,
        }
    }
}

/// A fitted Gaussian mean-field state.
#[derive(Clone, Debug)]
pub struct GaussFit {
    pub state: GaussState,
    /// Final objective value at the fitting sample count.
    pub elbo: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted optimizer step.
    pub trace: Vec<f64>,
}

/// Maximizes the CRN Monte Carlo objective over `(u, v)` with `v ≥ v_min`
/// by projected quasi-Newton from `u = 0, v = 1`.
pub fn fit_gauss(
    data: &Dataset,
    prior: &PriorSpec,
    cfg: &MCConfig,
    opt: &GaussFitOptions,
) -> Result<GaussFit> {
    require_gaussian(prior)?;
    cfg.check()?;
    if opt.v_min <= 0.0 {
        return Err(Error::Invalid(format!(
            "the variance floor must be positive, got {}",
            opt.v_min
        )));
    }
    let p = data.p();
    let tol = opt.tol.unwrap_or(1e-3 * (p as f64).sqrt());
    let xty = data.xty();

    let fg = |xs: &[f64], grad: &mut [f64]| -> f64 {
        let state = GaussState {
            u: DVector::from_column_slice(&xs[..p]),
            v: DVector::from_column_slice(&xs[p..]),
        };
        let parts = mc_parts(data, &state, cfg, true);
        let s = cfg.n_samples as f64;
        let mut like = StableSum::new();
        for &b in &parts.per_sample {
            like.add(b);
        }
        let m = xty.dot(&state.u) - like.value() / s + kl_part(&state);
        for i in 0..p {
            grad[i] = -(xty[i] - parts.gu_sum[i] / s - state.u[i]);
            grad[p + i] = -(-parts.gv_sum[i] / s / (2.0 * state.v[i].sqrt())
                + 0.5 / state.v[i]
                - 0.5);
        }
        -m
    };

    let mut x0 = vec![0.0; 2 * p];
    x0[p..].fill(1.0);
    let mut lower = vec![f64::NEG_INFINITY; 2 * p];
    lower[p..].fill(opt.v_min);
    let res = minimize_bounded(
        fg,
        &x0,
        &lower,
        &BoundedOptions {
            max_iter: opt.max_iter,
            tol,
            memory: 10,
        },
    )?;

    let state = GaussState {
        u: DVector::from_column_slice(&res.x[..p]),
        v: DVector::from_column_slice(&res.x[p..]),
    };
    Ok(GaussFit {
        state,
        elbo: -res.value,
        iterations: res.iterations,
        converged: res.converged,
        trace: res.trace.iter().map(|&f| -f).collect(),
    })
}
