//! Coordinatewise fixed-point solver for discrete product priors.
//!
//! The variational family is the product of exponentially tilted priors
//! `Q_u = ⊗_j π_(h(u_j, d_j), d_j)` with `d_j = (XᵀX)_jj`. Stationarity of
//! the evidence lower bound in the mean parameters is equivalent to the
//! coupled system
//!
//! ```text
//! v_j = Σ_i y_i x_ij − Cov(f_j(σ_j), σ_j)/c̈_π + b''(0)(d_j/2)·Cov(σ_j², σ_j)/c̈_π
//! u_j = ċ_π(v_j, d_j)
//! ```
//!
//! where all moments are under the coordinate tilt at `(v_j, d_j)` and
//!
//! ```text
//! f_j(s) = E[ Σ_i ( b(⟨x_i, σ⟩)|σ_j = s − b(⟨x_i, σ⟩)|σ_j = 0 ) ]
//! ```
//!
//! averages over the remaining coordinates `σ_{−j} ~ ∏_{k≠j} tilt_k`. The
//! solver iterates this map Jacobi style (every coordinate reads the
//! previous iterate) with damping in the natural parameters.
//!
//! `f_j` is the only intractable piece and is estimated by Monte Carlo with
//! common random numbers twice over: the same `σ_{−j}` draws are reused
//! across all support points `s` (so the differences telescope), and the
//! base uniforms are fixed per (coordinate, sample) across iterations, so
//! the damped iteration is a deterministic map and convergence of
//! `‖u^{t+1} − u^t‖∞` is meaningful.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gauss::MCConfig;
use crate::num::{mc_mean_se, StableSum};
use crate::oracle::{configuration_count, product_elbo_exact, ENUM_CAP};
use crate::prior::DiscretePrior;
use crate::rng::stream_indexed;
use crate::tilt::{mean_to_natural, natural_to_mean, product_kl, Tilt};

/// Default Monte Carlo samples per `f_j` evaluation while iterating.
pub const FIT_SAMPLES: usize = 200;

/// Default Monte Carlo samples for reported quantities (final objective
/// values, stationarity residuals).
pub const REPORT_SAMPLES: usize = 10_000;

/// A coordinate tilt with variance below this is too concentrated for the
/// covariance ratios in the update to be meaningful.
pub const DEGENERATE_VARIANCE: f64 = 1e-14;

/// Sample blocks for the objective estimator; fixed so parallel scheduling
/// cannot change results.
const BLOCK: usize = 256;

/// Iterate of the fixed-point scheme: coordinate means `u`, natural
/// parameters `v` (coupled by `u_j = ċ_π(v_j, d_j)`), and the fixed design
/// scales `d_j = (XᵀX)_jj`.
#[derive(Clone, Debug, PartialEq)]
pub struct TiltState {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub d: DVector<f64>,
}

impl TiltState {
    /// The scheme's standard starting point `u⁰ = 0` (clamped into the
    /// support hull when 0 is outside it).
    pub fn initial(data: &Dataset, prior: &DiscretePrior) -> Result<Self> {
        Self::from_means(data, prior, &DVector::zeros(data.p()))
    }

    /// State with the given coordinate means; `v` is obtained by inverting
    /// the mean map and `u` re-evaluated from it so the pair is coupled
    /// exactly.
    pub fn from_means(data: &Dataset, prior: &DiscretePrior, u0: &DVector<f64>) -> Result<Self> {
        let p = data.p();
        if u0.len() != p {
            return Err(Error::Invalid(format!(
                "initial mean vector has {} coordinates but the design has {p}",
                u0.len()
            )));
        }
        let d = data.gram_diag();
        let b2z = data.family().b2_at_zero();
        let mut v = DVector::zeros(p);
        let mut u = DVector::zeros(p);
        for j in 0..p {
            v[j] = mean_to_natural(prior, b2z, u0[j], d[j])?;
            u[j] = natural_to_mean(prior, b2z, v[j], d[j]);
        }
        Ok(TiltState { u, v, d })
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        let p = data.p();
        if self.u.len() != p || self.v.len() != p || self.d.len() != p {
            return Err(Error::Invalid(format!(
                "state dimensions ({}, {}, {}) do not match the design dimension {p}",
                self.u.len(),
                self.v.len(),
                self.d.len()
            )));
        }
        for j in 0..p {
            if !self.u[j].is_finite() || !self.v[j].is_finite() {
                return Err(Error::Invalid(format!(
                    "non-finite state at coordinate {j}"
                )));
            }
            if !(self.d[j] >= 0.0) {
                return Err(Error::Invalid(format!(
                    "negative design scale d[{j}] = {}",
                    self.d[j]
                )));
            }
        }
        Ok(())
    }
}

/// Options for [`fit_tilt`].
#[derive(Clone, Copy, Debug)]
pub struct TiltOptions {
    /// Step fraction in `(0, 1]` applied to the natural-parameter update.
    pub damping: f64,
    pub max_iter: usize,
    /// Convergence threshold on `‖u^{t+1} − u^t‖∞`.
    pub tol_u: f64,
}

impl Default for TiltOptions {
    fn default() -> Self {
        TiltOptions {
            damping: 0.5,
            max_iter: 500,
            tol_u: 1e-5,
        }
    }
}

/// One recorded iterate of [`fit_tilt`].
#[derive(Clone, Debug)]
pub struct TiltIterate {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub elbo: f64,
}

/// Result of [`fit_tilt`]: on non-convergence, `state` is the best iterate
/// by objective value rather than the last one.
#[derive(Clone, Debug)]
pub struct TiltFit {
    pub state: TiltState,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TiltIterate>,
}

fn coordinate_tilts<'a>(
    prior: &'a DiscretePrior,
    b2z: f64,
    state: &TiltState,
) -> Vec<Tilt<'a>> {
    state
        .v
        .iter()
        .zip(state.d.iter())
        .map(|(&vj, &dj)| Tilt::new(prior, b2z, vj, dj))
        .collect()
}

/// Draw `σ` with `σ_j = 0` from the product of coordinate tilts, using the
/// fixed base-uniform stream for `(j, sample)`. The stream yields `p`
/// uniforms per sample (the `j`-th is discarded) so coordinates keep their
/// positions; antithetic samples reuse the paired stream with `U → 1 − U`.
fn sigma_without_j(
    tilts: &[Tilt],
    j: usize,
    seed: u64,
    s: usize,
    half: usize,
    antithetic: bool,
) -> DVector<f64> {
    let (idx, flip) = if antithetic && s >= half {
        (s - half, true)
    } else {
        (s, false)
    };
    let mut rng = stream_indexed(seed, "tilt_fj", &[j as u64, idx as u64]);
    let p = tilts.len();
    let mut sigma = DVector::zeros(p);
    for (k, slot) in sigma.iter_mut().enumerate() {
        let mut u: f64 = rng.random();
        if flip {
            u = 1.0 - u;
        }
        if k != j {
            *slot = tilts[k].sample_at(u);
        }
    }
    sigma
}

/// Monte Carlo estimate of `f_j` on the prior support: for each support
/// point `s`, the average over draws of `σ_{−j}` of
/// `Σ_i b(⟨x_i, σ⟩)|σ_j=s − Σ_i b(⟨x_i, σ⟩)|σ_j=0`. The same draws serve
/// every support point.
pub fn f_j_estimate(
    data: &Dataset,
    prior: &DiscretePrior,
    state: &TiltState,
    j: usize,
    cfg: &MCConfig,
) -> Result<Vec<f64>> {
    state.check(data)?;
    cfg.check()?;
    let p = data.p();
    if j >= p {
        return Err(Error::Invalid(format!(
            "coordinate index {j} out of range for dimension {p}"
        )));
    }
    let family = data.family();
    let b2z = family.b2_at_zero();
    let tilts = coordinate_tilts(prior, b2z, state);
    let support = prior.support();
    let x = data.x();
    let col = x.column(j);
    let half = cfg.n_samples / 2;

    let mut acc = vec![StableSum::new(); support.len()];
    for s in 0..cfg.n_samples {
        let sigma = sigma_without_j(&tilts, j, cfg.seed, s, half, cfg.antithetic);
        let theta0 = x * &sigma;
        let mut base = StableSum::new();
        for i in 0..data.n() {
            base.add(family.b(theta0[i]));
        }
        let base = base.value();
        for (a, &sv) in support.iter().enumerate() {
            let mut shifted = StableSum::new();
            for i in 0..data.n() {
                shifted.add(family.b(theta0[i] + col[i] * sv));
            }
            acc[a].add(shifted.value() - base);
        }
    }
    Ok(acc
        .iter()
        .map(|a| a.value() / cfg.n_samples as f64)
        .collect())
}

/// Undamped right-hand side of the natural-parameter update at the current
/// state, all coordinates Jacobi style.
fn raw_v(
    data: &Dataset,
    prior: &DiscretePrior,
    state: &TiltState,
    cfg: &MCConfig,
) -> Result<DVector<f64>> {
    let b2z = data.family().b2_at_zero();
    let xty = data.xty();
    let vals: Result<Vec<f64>> = (0..data.p())
        .into_par_iter()
        .map(|j| {
            let tilt = Tilt::new(prior, b2z, state.v[j], state.d[j]);
            let var = tilt.variance();
            if var < DEGENERATE_VARIANCE {
                return Err(Error::Numerical(format!(
                    "degenerate tilt at coordinate {j}: variance {var:.3e} is below {DEGENERATE_VARIANCE:.0e}"
                )));
            }
            let f = f_j_estimate(data, prior, state, j, cfg)?;
            let cov_f = tilt.cov_table(&f);
            let cov_sq = tilt.cov_square_linear();
            Ok(xty[j] - cov_f / var + b2z * 0.5 * state.d[j] * cov_sq / var)
        })
        .collect();
    vals.map(DVector::from_vec)
}

/// One damped Jacobi sweep: `v ← (1−damping)·v + damping·v_raw`, then
/// `u ← ċ_π(v, d)` coordinate-wise, so the returned state is exactly
/// mean/natural coupled.
pub fn tilt_update(
    data: &Dataset,
    prior: &DiscretePrior,
    state: &TiltState,
    cfg: &MCConfig,
    damping: f64,
) -> Result<TiltState> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::Invalid(format!(
            "damping must lie in (0, 1], got {damping}"
        )));
    }
    state.check(data)?;
    let raw = raw_v(data, prior, state, cfg)?;
    let b2z = data.family().b2_at_zero();
    let v_new = &state.v * (1.0 - damping) + raw * damping;
    let mut u_new = DVector::zeros(v_new.len());
    for j in 0..v_new.len() {
        u_new[j] = natural_to_mean(prior, b2z, v_new[j], state.d[j]);
    }
    Ok(TiltState {
        u: u_new,
        v: v_new,
        d: state.d.clone(),
    })
}

/// `‖v − v_raw(u)‖∞`, the undamped fixed-point residual; zero (up to MC
/// noise in `f_j`) exactly at a stationary point.
pub fn stationarity_residual(
    data: &Dataset,
    prior: &DiscretePrior,
    state: &TiltState,
    cfg: &MCConfig,
) -> Result<f64> {
    state.check(data)?;
    let raw = raw_v(data, prior, state, cfg)?;
    Ok((&state.v - raw).amax())
}

/// Evidence lower bound of the tilted product at means `u`:
/// `Σ_i y_i ⟨x_i, u⟩ − E_Q[Σ_i b(θ_i)] − KL(Q_u‖π_p)`, with the linear term
/// and the KL exact in the tilted moments. `E_Q[Σ b]` is enumerated exactly
/// when the configuration count allows it and estimated by Monte Carlo
/// otherwise; the second return value is the standard error (0 when exact).
pub fn elbo_tilt_with_se(
    data: &Dataset,
    prior: &DiscretePrior,
    u: &DVector<f64>,
    d: &DVector<f64>,
    cfg: &MCConfig,
) -> Result<(f64, f64)> {
    if u.len() != data.p() || d.len() != data.p() {
        return Err(Error::Invalid(format!(
            "mean/scale dimensions ({}, {}) do not match the design dimension {}",
            u.len(),
            d.len(),
            data.p()
        )));
    }
    if configuration_count(prior.len(), data.p(), ENUM_CAP).is_ok() {
        let b2z = data.family().b2_at_zero();
        let mut rows = Vec::with_capacity(data.p());
        for j in 0..data.p() {
            let v = mean_to_natural(prior, b2z, u[j], d[j])?;
            rows.push(Tilt::new(prior, b2z, v, d[j]).probs().to_vec());
        }
        Ok((product_elbo_exact(data, prior, &rows)?, 0.0))
    } else {
        elbo_tilt_mc(data, prior, u, d, cfg)
    }
}

/// [`elbo_tilt_with_se`] without the standard error.
pub fn elbo_tilt(
    data: &Dataset,
    prior: &DiscretePrior,
    u: &DVector<f64>,
    d: &DVector<f64>,
    cfg: &MCConfig,
) -> Result<f64> {
    elbo_tilt_with_se(data, prior, u, d, cfg).map(|(e, _)| e)
}

/// Monte Carlo form of the bound regardless of problem size; exact linear
/// and KL terms, sampled `E_Q[Σ b]` with its standard error.
pub fn elbo_tilt_mc(
    data: &Dataset,
    prior: &DiscretePrior,
    u: &DVector<f64>,
    d: &DVector<f64>,
    cfg: &MCConfig,
) -> Result<(f64, f64)> {
    cfg.check()?;
    let p = data.p();
    if u.len() != p || d.len() != p {
        return Err(Error::Invalid(format!(
            "mean/scale dimensions ({}, {}) do not match the design dimension {p}",
            u.len(),
            d.len()
        )));
    }
    let family = data.family();
    let b2z = family.b2_at_zero();
    let mut tilts = Vec::with_capacity(p);
    for j in 0..p {
        let v = mean_to_natural(prior, b2z, u[j], d[j])?;
        tilts.push(Tilt::new(prior, b2z, v, d[j]));
    }
    let kl = product_kl(
        prior,
        b2z,
        u.as_slice(),
        d.as_slice(),
    )?;
    let linear = data.xty().dot(u);

    let s_total = cfg.n_samples;
    let half = s_total / 2;
    let x = data.x();
    let n_blocks = s_total.div_ceil(BLOCK);
    let blocks: Vec<Vec<f64>> = (0..n_blocks)
        .into_par_iter()
        .map(|blk| {
            let lo = blk * BLOCK;
            let hi = (lo + BLOCK).min(s_total);
            let mut vals = Vec::with_capacity(hi - lo);
            for s in lo..hi {
                let (idx, flip) = if cfg.antithetic && s >= half {
                    (s - half, true)
                } else {
                    (s, false)
                };
                let mut rng = stream_indexed(cfg.seed, "tilt_mc", &[idx as u64]);
                let mut sigma = DVector::zeros(p);
                for k in 0..p {
                    let mut uu: f64 = rng.random();
                    if flip {
                        uu = 1.0 - uu;
                    }
                    sigma[k] = tilts[k].sample_at(uu);
                }
                let theta = x * &sigma;
                let mut b_sum = StableSum::new();
                for i in 0..data.n() {
                    b_sum.add(family.b(theta[i]));
                }
                vals.push(b_sum.value());
            }
            vals
        })
        .collect();
    let per_sample: Vec<f64> = blocks.into_iter().flatten().collect();
    let (e_b, se) = mc_mean_se(&per_sample, cfg.antithetic);
    Ok((linear - e_b - kl, se))
}

/// Iterates [`tilt_update`] from `u⁰ = 0` until `‖Δu‖∞ < tol_u` or the
/// iteration budget runs out.
pub fn fit_tilt(
    data: &Dataset,
    prior: &DiscretePrior,
    cfg: &MCConfig,
    opt: &TiltOptions,
) -> Result<TiltFit> {
    fit_tilt_from(data, prior, &DVector::zeros(data.p()), cfg, opt)
}

/// [`fit_tilt`] from an arbitrary starting mean vector.
pub fn fit_tilt_from(
    data: &Dataset,
    prior: &DiscretePrior,
    u0: &DVector<f64>,
    cfg: &MCConfig,
    opt: &TiltOptions,
) -> Result<TiltFit> {
    if !(opt.damping > 0.0 && opt.damping <= 1.0) {
        return Err(Error::Invalid(format!(
            "damping must lie in (0, 1], got {}",
            opt.damping
        )));
    }
    if opt.tol_u <= 0.0 || opt.max_iter == 0 {
        return Err(Error::Invalid(format!(
            "need tol_u > 0 and max_iter >= 1, got {} and {}",
            opt.tol_u, opt.max_iter
        )));
    }
    let mut state = TiltState::from_means(data, prior, u0)?;
    let entry = |st: &TiltState| -> Result<TiltIterate> {
        let (elbo, _) = elbo_tilt_with_se(data, prior, &st.u, &st.d, cfg)?;
        Ok(TiltIterate {
            u: st.u.clone(),
            v: st.v.clone(),
            elbo,
        })
    };
    let mut trace = vec![entry(&state)?];
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=opt.max_iter {
        let next = tilt_update(data, prior, &state, cfg, opt.damping)?;
        let du = (&next.u - &state.u).amax();
        state = next;
        iterations = t;
        trace.push(entry(&state)?);
        if du < opt.tol_u {
            converged = true;
            break;
        }
    }
    if !converged {
        let best = trace
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.elbo.partial_cmp(&b.1.elbo).expect("objective is finite"))
            .map(|(i, _)| i)
            .expect("trace is never empty");
        state = TiltState {
            u: trace[best].u.clone(),
            v: trace[best].v.clone(),
            d: state.d.clone(),
        };
    }
    Ok(TiltFit {
        state,
        converged,
        iterations,
        trace,
    })
}

/// Outcome of the multi-start separation probe.
#[derive(Clone, Debug)]
pub struct WellSeparation {
    /// `max_{a,b} ‖u_a − u_b‖²/p` over the fitted endpoints.
    pub max_pairwise: f64,
    /// True when `max_pairwise < 0.01`, reported as "no multi-modality
    /// detected". An empirical surrogate only — it cannot prove the
    /// optimizer is well separated.
    pub no_multimodality: bool,
    pub endpoints: Vec<DVector<f64>>,
}

/// Reruns the fit from `n_inits` random starting means, uniform over the
/// support hull, and reports the largest pairwise squared distance per
/// coordinate among the endpoints.
pub fn well_separation_probe(
    data: &Dataset,
    prior: &DiscretePrior,
    cfg: &MCConfig,
    opt: &TiltOptions,
    n_inits: usize,
    seed: u64,
) -> Result<WellSeparation> {
    if n_inits < 2 {
        return Err(Error::Invalid(format!(
            "the separation probe needs at least 2 starts, got {n_inits}"
        )));
    }
    let p = data.p();
    let (lo, hi) = (prior.min_support(), prior.max_support());
    let mut endpoints = Vec::with_capacity(n_inits);
    for r in 0..n_inits {
        let mut rng = stream_indexed(seed, "tilt_init", &[r as u64]);
        let u0 = DVector::from_iterator(p, (0..p).map(|_| lo + (hi - lo) * rng.random::<f64>()));
        endpoints.push(fit_tilt_from(data, prior, &u0, cfg, opt)?.state.u);
    }
    let mut max_pairwise: f64 = 0.0;
    for a in 0..n_inits {
        for b in a + 1..n_inits {
            let diff = (&endpoints[a] - &endpoints[b]).norm_squared() / p as f64;
            max_pairwise = max_pairwise.max(diff);
        }
    }
    Ok(WellSeparation {
        max_pairwise,
        no_multimodality: max_pairwise < 0.01,
        endpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::Family;
    use crate::oracle::enumerate_logz;
    use nalgebra::DMatrix;

    fn dataset(rows: &[&[f64]], y: &[f64], family: Family) -> Dataset {
        let n = rows.len();
        let p = rows[0].len();
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Dataset::new(x, DVector::from_column_slice(y), family).unwrap()
    }

    fn three_point() -> DiscretePrior {
        DiscretePrior::three_point(0.2).unwrap()
    }

    fn small_logistic() -> Dataset {
        dataset(
            &[
                &[0.9, 0.1, -0.3],
                &[0.2, 0.8, 0.4],
                &[0.7, -0.3, 0.5],
                &[-0.5, 0.6, 0.2],
                &[0.4, 0.4, -0.6],
                &[-0.2, -0.7, 0.3],
            ],
            &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            Family::Logistic,
        )
    }

    #[test]
    fn zero_design_fj_vanishes() {
        let data = dataset(&[&[0.0, 0.0], &[0.0, 0.0]], &[1.0, 0.0], Family::Logistic);
        let prior = three_point();
        let state = TiltState::initial(&data, &prior).unwrap();
        let cfg = MCConfig::new(50, 1, true).unwrap();
        for j in 0..2 {
            let f = f_j_estimate(&data, &prior, &state, j, &cfg).unwrap();
            assert!(f.iter().all(|&v| v == 0.0), "f_{j} = {f:?}");
        }
    }

    #[test]
    fn linear_family_fj_is_quadratic_at_the_symmetric_state() {
        // at u = 0 over a symmetric prior the tilt is the prior itself and
        // antithetic draws mirror exactly, so the linear term of
        // f_j(s) = s·Σ_i x_ij⟨x_i, σ_{0,j}⟩ + s²·d_j/2 averages away and
        // the MC estimate equals the analytic value
        let data = dataset(
            &[&[0.8, -0.4], &[0.3, 0.6], &[-0.5, 0.2]],
            &[0.7, -0.2, 0.4],
            Family::Linear,
        );
        let prior = three_point();
        let state = TiltState::initial(&data, &prior).unwrap();
        let cfg = MCConfig::new(200, 3, true).unwrap();
        for j in 0..2 {
            let f = f_j_estimate(&data, &prior, &state, j, &cfg).unwrap();
            for (a, &s) in prior.support().iter().enumerate() {
                let expect = 0.5 * s * s * state.d[j];
                assert!(
                    (f[a] - expect).abs() < 1e-10,
                    "f_{j}({s}) = {} vs {expect}",
                    f[a]
                );
            }
        }
    }

    #[test]
    fn linear_family_fj_matches_the_closed_form_statistically() {
        let data = dataset(
            &[&[0.8, -0.4], &[0.3, 0.6], &[-0.5, 0.2]],
            &[0.7, -0.2, 0.4],
            Family::Linear,
        );
        let prior = three_point();
        let u0 = DVector::from_column_slice(&[0.3, -0.2]);
        let state = TiltState::from_means(&data, &prior, &u0).unwrap();
        let b2z = data.family().b2_at_zero();
        let j = 0;

        // analytic: f_j(s) = s·Σ_i x_ij·E⟨x_i, σ_{0,j}⟩ + s²·d_j/2 with the
        // expectation under the product tilt at the current means
        let means: Vec<f64> = (0..2)
            .map(|k| natural_to_mean(&prior, b2z, state.v[k], state.d[k]))
            .collect();
        let mut lin = 0.0;
        for i in 0..data.n() {
            let mut dot = 0.0;
            for k in 0..2 {
                if k != j {
                    dot += data.x()[(i, k)] * means[k];
                }
            }
            lin += data.x()[(i, j)] * dot;
        }

        let reps = 8;
        let k_support = prior.len();
        let mut estimates = Vec::new();
        for r in 0..reps {
            let cfg = MCConfig::new(4000, 50 + r as u64, true).unwrap();
            estimates.push(f_j_estimate(&data, &prior, &state, j, &cfg).unwrap());
        }
        for a in 0..k_support {
            let s = prior.support()[a];
            let expect = s * lin + 0.5 * s * s * state.d[j];
            let mean: f64 = estimates.iter().map(|f| f[a]).sum::<f64>() / reps as f64;
            let sd = (estimates
                .iter()
                .map(|f| (f[a] - mean).powi(2))
                .sum::<f64>()
                / (reps - 1) as f64)
                .sqrt();
            let tol = 4.0 * sd / (reps as f64).sqrt() + 1e-9;
            assert!(
                (mean - expect).abs() < tol,
                "support {s}: mc mean {mean} vs analytic {expect} (tol {tol})"
            );
        }
    }

    #[test]
    fn fj_matches_exact_conditional_enumeration() {
        let data = small_logistic();
        let prior = three_point();
        let u0 = DVector::from_column_slice(&[0.2, -0.1, 0.3]);
        let state = TiltState::from_means(&data, &prior, &u0).unwrap();
        let b2z = data.family().b2_at_zero();
        let j = 1;
        let tilts: Vec<Tilt> = (0..3)
            .map(|k| Tilt::new(&prior, b2z, state.v[k], state.d[k]))
            .collect();

        // exact f_j by enumerating the two free coordinates
        let support = prior.support();
        let mut exact = vec![0.0; support.len()];
        for (a0, &s0) in support.iter().enumerate() {
            for (a2, &s2) in support.iter().enumerate() {
                let w = tilts[0].probs()[a0] * tilts[2].probs()[a2];
                for (a, &sj) in support.iter().enumerate() {
                    let mut delta = 0.0;
                    for i in 0..data.n() {
                        let base = data.x()[(i, 0)] * s0 + data.x()[(i, 2)] * s2;
                        delta += data.family().b(base + data.x()[(i, 1)] * sj)
                            - data.family().b(base);
                    }
                    exact[a] += w * delta;
                }
            }
        }

        let reps = 8;
        let mut estimates = Vec::new();
        for r in 0..reps {
            let cfg = MCConfig::new(4000, 90 + r as u64, true).unwrap();
            estimates.push(f_j_estimate(&data, &prior, &state, j, &cfg).unwrap());
        }
        for a in 0..support.len() {
            let mean: f64 = estimates.iter().map(|f| f[a]).sum::<f64>() / reps as f64;
            let sd = (estimates
                .iter()
                .map(|f| (f[a] - mean).powi(2))
                .sum::<f64>()
                / (reps - 1) as f64)
                .sqrt();
            let tol = 4.0 * sd / (reps as f64).sqrt() + 1e-9;
            assert!(
                (mean - exact[a]).abs() < tol,
                "support index {a}: mc mean {mean} vs exact {} (tol {tol})",
                exact[a]
            );
        }
    }

    #[test]
    fn zero_design_symmetric_prior_fixed_point_in_one_step() {
        let data = dataset(&[&[0.0, 0.0], &[0.0, 0.0]], &[1.0, 0.0], Family::Logistic);
        let prior = three_point();
        let cfg = MCConfig::new(50, 4, true).unwrap();
        let state = TiltState::initial(&data, &prior).unwrap();
        assert!(state.u.amax() < 1e-14 && state.v.amax() < 1e-12);
        let next = tilt_update(&data, &prior, &state, &cfg, 0.5).unwrap();
        assert!(next.u.amax() < 1e-14, "u = {:?}", next.u);
        assert!(next.v.amax() < 1e-12, "v = {:?}", next.v);
        let fit = fit_tilt(&data, &prior, &cfg, &TiltOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 1);
        assert!(fit.state.u.amax() < 1e-14);
    }

    #[test]
    fn diagonal_linear_design_with_orthogonal_responses_keeps_zero() {
        // X has no off-diagonal entries and Σ_i y_i x_ij = 0, so the even
        // quadratic f_j has zero covariance with σ_j under the symmetric
        // tilt and the update fixes u = 0
        let data = dataset(&[&[0.8, 0.0], &[0.0, 1.3]], &[0.0, 0.0], Family::Linear);
        let prior = three_point();
        let cfg = MCConfig::new(100, 5, true).unwrap();
        let state = TiltState::initial(&data, &prior).unwrap();
        let next = tilt_update(&data, &prior, &state, &cfg, 1.0).unwrap();
        assert!(next.u.amax() < 1e-12, "u = {:?}", next.u);
    }

    #[test]
    fn updates_keep_means_and_naturals_coupled() {
        let data = small_logistic();
        let prior = three_point();
        let cfg = MCConfig::new(200, 6, true).unwrap();
        let b2z = data.family().b2_at_zero();
        let mut state = TiltState::initial(&data, &prior).unwrap();
        for _ in 0..3 {
            state = tilt_update(&data, &prior, &state, &cfg, 0.5).unwrap();
            for j in 0..data.p() {
                let back = natural_to_mean(&prior, b2z, state.v[j], state.d[j]);
                assert!(
                    (back - state.u[j]).abs() < 1e-8,
                    "coordinate {j}: ċ(v) = {back} vs u = {}",
                    state.u[j]
                );
            }
        }
    }

    #[test]
    fn concentrated_tilt_is_reported_as_degenerate() {
        let data = small_logistic();
        let prior = three_point();
        let cfg = MCConfig::new(50, 7, true).unwrap();
        let mut state = TiltState::initial(&data, &prior).unwrap();
        let b2z = data.family().b2_at_zero();
        state.v[1] = 45.0; // tilt mass collapses onto one atom
        state.u[1] = natural_to_mean(&prior, b2z, state.v[1], state.d[1]);
        let err = tilt_update(&data, &prior, &state, &cfg, 0.5).unwrap_err();
        match err {
            Error::Numerical(msg) => assert!(msg.contains("coordinate 1"), "{msg}"),
            other => panic!("expected a numerical error, got {other:?}"),
        }
    }

    #[test]
    fn elbo_at_zero_design_and_prior_mean_is_zero() {
        let data = dataset(&[&[0.0], &[0.0]], &[1.0, 0.0], Family::Logistic);
        let prior = three_point();
        let u = DVector::from_column_slice(&[prior.mean()]);
        let d = DVector::from_column_slice(&[0.0]);
        let cfg = MCConfig::new(100, 8, true).unwrap();
        let (elbo, se) = elbo_tilt_with_se(&data, &prior, &u, &d, &cfg).unwrap();
        assert!(elbo.abs() < 1e-13, "elbo = {elbo}");
        assert_eq!(se, 0.0);
    }

    #[test]
    fn mc_bound_agrees_with_exact_enumeration() {
        let data = small_logistic();
        let prior = three_point();
        let u = DVector::from_column_slice(&[0.25, -0.15, 0.05]);
        let d = data.gram_diag();
        let cfg = MCConfig::new(20_000, 9, true).unwrap();
        let (exact, se0) = elbo_tilt_with_se(&data, &prior, &u, &d, &cfg).unwrap();
        assert_eq!(se0, 0.0);
        let (mc, se) = elbo_tilt_mc(&data, &prior, &u, &d, &cfg).unwrap();
        assert!(se > 0.0);
        assert!(
            (mc - exact).abs() <= 3.0 * se,
            "mc {mc} vs exact {exact} (se {se})"
        );
    }

    #[test]
    fn bound_never_exceeds_the_exact_evidence() {
        let data = small_logistic();
        let prior = three_point();
        let logz = enumerate_logz(&data, &prior).unwrap();
        let d = data.gram_diag();
        let cfg = MCConfig::new(100, 10, true).unwrap();
        for u in [
            DVector::from_column_slice(&[0.0, 0.0, 0.0]),
            DVector::from_column_slice(&[0.4, -0.3, 0.2]),
            DVector::from_column_slice(&[-0.8, 0.7, -0.5]),
            DVector::from_column_slice(&[0.95, 0.95, -0.95]),
        ] {
            let (elbo, _) = elbo_tilt_with_se(&data, &prior, &u, &d, &cfg).unwrap();
            assert!(
                elbo <= logz + 1e-9,
                "elbo {elbo} exceeded log Z {logz} at u = {u:?}"
            );
        }
    }

    #[test]
    fn fit_converges_and_sits_at_a_stationary_point() {
        let data = small_logistic();
        let prior = three_point();
        let cfg = MCConfig::new(500, 11, true).unwrap();
        let fit = fit_tilt(&data, &prior, &cfg, &TiltOptions::default()).unwrap();
        assert!(fit.converged, "no convergence in {} iterations", fit.iterations);

        let report = MCConfig::new(REPORT_SAMPLES, 11, true).unwrap();
        let at_fit = stationarity_residual(&data, &prior, &fit.state, &report).unwrap();
        assert!(at_fit < 1e-2, "residual at the fit = {at_fit}");

        let wild = TiltState::from_means(
            &data,
            &prior,
            &DVector::from_column_slice(&[0.9, -0.9, 0.9]),
        )
        .unwrap();
        let away = stationarity_residual(&data, &prior, &wild, &report).unwrap();
        assert!(
            away > at_fit,
            "residual away from the fit ({away}) is not larger than at it ({at_fit})"
        );

        // the fitted bound is still a lower bound on the evidence
        let logz = enumerate_logz(&data, &prior).unwrap();
        let (elbo, _) = elbo_tilt_with_se(&data, &prior, &fit.state.u, &fit.state.d, &cfg).unwrap();
        assert!(elbo <= logz + 1e-9);
    }

    #[test]
    fn identical_inputs_reproduce_the_iterate_sequence() {
        let data = small_logistic();
        let prior = three_point();
        let cfg = MCConfig::new(200, 12, true).unwrap();
        let opt = TiltOptions {
            max_iter: 5,
            tol_u: 1e-12,
            ..Default::default()
        };
        let a = fit_tilt(&data, &prior, &cfg, &opt).unwrap();
        let b = fit_tilt(&data, &prior, &cfg, &opt).unwrap();
        assert_eq!(a.trace.len(), b.trace.len());
        for (ta, tb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ta.u, tb.u);
            assert_eq!(ta.v, tb.v);
        }
        let other = MCConfig::new(200, 13, true).unwrap();
        let c = fit_tilt(&data, &prior, &other, &opt).unwrap();
        assert_ne!(a.trace.last().unwrap().u, c.trace.last().unwrap().u);
    }

    #[test]
    fn negating_the_design_negates_the_fit() {
        let data = small_logistic();
        let neg = dataset(
            &[
                &[-0.9, -0.1, 0.3],
                &[-0.2, -0.8, -0.4],
                &[-0.7, 0.3, -0.5],
                &[0.5, -0.6, -0.2],
                &[-0.4, -0.4, 0.6],
                &[0.2, 0.7, -0.3],
            ],
            &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            Family::Logistic,
        );
        let prior = three_point();
        let cfg = MCConfig::new(1000, 14, true).unwrap();
        let opt = TiltOptions::default();
        let a = fit_tilt(&data, &prior, &cfg, &opt).unwrap();
        let b = fit_tilt(&neg, &prior, &cfg, &opt).unwrap();
        assert!(a.converged && b.converged);
        let drift = (&a.state.u + &b.state.u).amax();
        assert!(drift < 1e-6, "u + u' = {drift}");
    }

    #[test]
    fn converged_means_match_the_dense_grid_argmax() {
        let data = dataset(
            &[
                &[0.9, 0.1],
                &[0.2, 0.8],
                &[0.7, -0.3],
                &[-0.5, 0.6],
                &[0.4, 0.4],
                &[-0.2, -0.7],
            ],
            &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            Family::Logistic,
        );
        let prior = three_point();
        let cfg = MCConfig::new(2000, 15, true).unwrap();
        let opt = TiltOptions {
            tol_u: 1e-6,
            ..Default::default()
        };
        let fit = fit_tilt(&data, &prior, &cfg, &opt).unwrap();
        assert!(fit.converged);

        let d = data.gram_diag();
        let grid_cfg = MCConfig::new(10, 0, true).unwrap(); // exact path, samples unused
        let mut best = f64::NEG_INFINITY;
        let mut arg = DVector::zeros(2);
        let steps = 181;
        for a in 0..steps {
            for b in 0..steps {
                let u = DVector::from_column_slice(&[
                    -0.9 + a as f64 * 0.01,
                    -0.9 + b as f64 * 0.01,
                ]);
                let (e, _) = elbo_tilt_with_se(&data, &prior, &u, &d, &grid_cfg).unwrap();
                if e > best {
                    best = e;
                    arg = u;
                }
            }
        }
        let gap = (&fit.state.u - &arg).amax();
        assert!(
            gap <= 0.02,
            "fit {:?} vs grid argmax {:?} (gap {gap})",
            fit.state.u,
            arg
        );
    }

    #[test]
    fn separation_probe_sees_one_basin_on_a_small_instance() {
        let data = small_logistic();
        let prior = three_point();
        let cfg = MCConfig::new(300, 16, true).unwrap();
        let opt = TiltOptions::default();
        let probe = well_separation_probe(&data, &prior, &cfg, &opt, 4, 99).unwrap();
        assert!(
            probe.no_multimodality,
            "max pairwise separation {}",
            probe.max_pairwise
        );
        assert_eq!(probe.endpoints.len(), 4);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let data = small_logistic();
        let prior = three_point();
        let cfg = MCConfig::new(50, 17, true).unwrap();
        let state = TiltState::initial(&data, &prior).unwrap();
        assert!(f_j_estimate(&data, &prior, &state, 3, &cfg).is_err());
        assert!(tilt_update(&data, &prior, &state, &cfg, 0.0).is_err());
        assert!(tilt_update(&data, &prior, &state, &cfg, 1.5).is_err());
        let opt = TiltOptions {
            tol_u: 0.0,
            ..Default::default()
        };
        assert!(fit_tilt(&data, &prior, &cfg, &opt).is_err());
        let mismatched = DVector::zeros(2);
        assert!(TiltState::from_means(&data, &prior, &mismatched).is_err());
        assert!(well_separation_probe(&data, &prior, &cfg, &TiltOptions::default(), 1, 0).is_err());
    }
}
