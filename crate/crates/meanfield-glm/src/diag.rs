//! Numeric diagnostics for a design matrix and model: operator norms, tail
//! functionals, and the off-diagonal curvature coupling matrix.
//!
//! The central object is `A_β = XᵀD_βX − diag(XᵀD_βX)` with
//! `D_β = diag(b''(⟨x_i, β⟩))`: the off-diagonal part of the Hessian of the
//! negative log-likelihood. Its squared Frobenius norm (equivalently
//! `Tr(A_β²)`) measures how far the likelihood is from coordinate-wise
//! separable, which is what mean-field quality hinges on. All quantities
//! here are measured scalars on a concrete matrix, not asymptotic
//! statements.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::num::StableSum;
use crate::rng::{stream, stream_indexed};

/// Relative tolerance on successive power-iteration estimates.
pub const OPNORM_TOL: f64 = 1e-8;
pub const OPNORM_MAX_ITER: usize = 1000;

/// Above this many doubles of dense intermediates, the Frobenius norm of
/// the coupling matrix is computed by streaming over columns instead.
pub const DENSE_ENTRY_CAP: usize = 8_000_000;

fn curvature_weights(data: &Dataset, beta: &DVector<f64>) -> Result<DVector<f64>> {
    if beta.len() != data.p() {
        return Err(Error::Invalid(format!(
            "coefficient vector has length {}, expected {}",
            beta.len(),
            data.p()
        )));
    }
    let mut theta = data.linear_predictor(beta);
    theta.apply(|t| *t = data.family().b2(*t));
    Ok(theta)
}

/// Off-diagonal curvature coupling `A_β = XᵀD_βX − diag(XᵀD_βX)` with
/// `D_β(i,i) = b''(⟨x_i, β⟩)`. The result is exactly symmetric with an
/// exactly zero diagonal.
pub fn hessian_offdiag(data: &Dataset, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = curvature_weights(data, beta)?;
    let (n, p) = (data.n(), data.p());
    // scale rows by sqrt(d) so the Gram product is bitwise symmetric
    let mut w = data.x().clone();
    for i in 0..n {
        let s = d[i].sqrt();
        for j in 0..p {
            w[(i, j)] *= s;
        }
    }
    let mut a = DMatrix::zeros(p, p);
    a.gemm_tr(1.0, &w, &w, 0.0);
    for j in 0..p {
        a[(j, j)] = 0.0;
    }
    Ok(a)
}

/// `‖A_β‖_F²` via the dense coupling matrix.
pub fn hessian_offdiag_frob_sq_dense(data: &Dataset, beta: &DVector<f64>) -> Result<f64> {
    let a = hessian_offdiag(data, beta)?;
    let mut acc = StableSum::new();
    for v in a.iter() {
        acc.add(v * v);
    }
    Ok(acc.value())
}

/// `‖A_β‖_F²` without materializing any p×p or n×p intermediate: one
/// weighted Gram column at a time.
pub fn hessian_offdiag_frob_sq_streaming(data: &Dataset, beta: &DVector<f64>) -> Result<f64> {
    let d = curvature_weights(data, beta)?;
    let x = data.x();
    let p = data.p();
    let per_col: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|j| {
            let wj = DVector::from_fn(data.n(), |i, _| d[i] * x[(i, j)]);
            let g = x.tr_mul(&wj);
            let mut acc = StableSum::new();
            for i in 0..p {
                if i != j {
                    acc.add(g[i] * g[i]);
                }
            }
            acc.value()
        })
        .collect();
    let mut total = StableSum::new();
    for v in per_col {
        total.add(v);
    }
    Ok(total.value())
}

/// `‖A_β‖_F² = Tr(A_β²)`, choosing the dense or streaming path by memory
/// footprint.
pub fn hessian_offdiag_frob_sq(data: &Dataset, beta: &DVector<f64>) -> Result<f64> {
    let (n, p) = (data.n(), data.p());
    if n * p + p * p <= DENSE_ENTRY_CAP {
        hessian_offdiag_frob_sq_dense(data, beta)
    } else {
        hessian_offdiag_frob_sq_streaming(data, beta)
    }
}

/// Largest absolute eigenvalue estimate from power iteration.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct OpNorm {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Power iteration for `‖M‖_op` of a symmetric matrix. Each step applies
/// `M` twice (iterating on `M²`), so a dominant negative or ± paired
/// eigenvalue cannot stall convergence; the estimate is
/// `√(vᵀM²v) = ‖Mv‖`. Non-convergence is flagged, with the last estimate
/// kept.
pub fn opnorm(m: &DMatrix<f64>) -> Result<OpNorm> {
    if m.nrows() != m.ncols() {
        return Err(Error::Invalid(format!(
            "operator norm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let p = m.nrows();
    if p == 0 {
        return Ok(OpNorm {
            value: 0.0,
            converged: true,
            iterations: 0,
        });
    }
    let mut rng = stream(0, "opnorm");
    let mut v = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    v /= v.norm();
    let mut prev = f64::INFINITY;
    let mut value = 0.0;
    for it in 1..=OPNORM_MAX_ITER {
        let u = m * &v;
        value = u.norm();
        if value == 0.0 {
            return Ok(OpNorm {
                value: 0.0,
                converged: true,
                iterations: it,
            });
        }
        let w = m * &u;
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(OpNorm {
                value,
                converged: true,
                iterations: it,
            });
        }
        v = w / wn;
        if (value - prev).abs() <= OPNORM_TOL * value.max(1.0) {
            return Ok(OpNorm {
                value,
                converged: true,
                iterations: it,
            });
        }
        prev = value;
    }
    Ok(OpNorm {
        value,
        converged: false,
        iterations: OPNORM_MAX_ITER,
    })
}

fn sorted_row_norms_sq(data: &Dataset) -> Vec<f64> {
    let x = data.x();
    let mut norms: Vec<f64> = (0..data.n())
        .map(|i| {
            let mut acc = StableSum::new();
            for j in 0..data.p() {
                acc.add(x[(i, j)] * x[(i, j)]);
            }
            acc.value()
        })
        .collect();
    norms.sort_by(|a, b| b.partial_cmp(a).expect("row norms are finite"));
    norms
}

fn top_row_count(data: &Dataset, c: f64) -> Result<usize> {
    if !c.is_finite() || c < 0.0 {
        return Err(Error::Invalid(format!(
            "subset fraction must be a non-negative real, got {c}"
        )));
    }
    Ok(((c * data.p() as f64).floor() as usize).min(data.n()))
}

/// `(1/p) · max_{|S| ≤ Cp} Σ_{i∈S} ‖x_i‖²`: the top `⌊Cp⌋` squared row
/// norms, averaged by `p`. Saturates at all rows when `Cp ≥ n`.
pub fn frob_tail(data: &Dataset, c: f64) -> Result<f64> {
    let k = top_row_count(data, c)?;
    let norms = sorted_row_norms_sq(data);
    let mut acc = StableSum::new();
    for &v in norms.iter().take(k) {
        acc.add(v);
    }
    Ok(acc.value() / data.p() as f64)
}

/// `Σ_{ij} x_ij² · 1{|x_ij| > δ}`; non-increasing in `δ`.
pub fn entry_tail(data: &Dataset, delta: f64) -> f64 {
    let mut acc = StableSum::new();
    for v in data.x().iter() {
        if v.abs() > delta {
            acc.add(v * v);
        }
    }
    acc.value()
}

/// `‖Xᵀ(y − b'(0)·1)‖² / p`: size of the score at the origin.
pub fn score_norm(data: &Dataset) -> f64 {
    let centered = data.y().map(|yi| yi - data.family().b1(0.0));
    let g = data.x().tr_mul(&centered);
    g.norm_squared() / data.p() as f64
}

/// Number of rows with `|⟨x_i, β⟩| > eps`: how many observations sit
/// outside the small-predictor regime at `β`.
pub fn large_predictor_count(data: &Dataset, beta: &DVector<f64>, eps: f64) -> Result<usize> {
    if beta.len() != data.p() {
        return Err(Error::Invalid(format!(
            "coefficient vector has length {}, expected {}",
            beta.len(),
            data.p()
        )));
    }
    let theta = data.linear_predictor(beta);
    Ok(theta.iter().filter(|t| t.abs() > eps).count())
}

/// Upper bound on `max_{|S| ≤ Cp} ‖Σ_{i∈S} x_i x_iᵀ‖_op` by the sum of the
/// top `⌊Cp⌋` squared row norms. This is an UPPER BOUND, not the exact
/// combinatorial supremum.
pub fn subset_gram_bound(data: &Dataset, c: f64) -> Result<f64> {
    Ok(frob_tail(data, c)? * data.p() as f64)
}

/// Operator norm of the Gram matrix of the `⌊Cp⌋` rows with largest norm —
/// a greedy lower evaluation to set against [`subset_gram_bound`].
pub fn greedy_subset_gram_opnorm(data: &Dataset, c: f64) -> Result<OpNorm> {
    let k = top_row_count(data, c)?;
    let x = data.x();
    let mut order: Vec<usize> = (0..data.n()).collect();
    let norms: Vec<f64> = (0..data.n())
        .map(|i| x.row(i).norm_squared())
        .collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite"));
    let p = data.p();
    let mut gram = DMatrix::zeros(p, p);
    for &i in order.iter().take(k) {
        let row = x.row(i).transpose();
        gram.ger(1.0, &row, &row, 1.0);
    }
    opnorm(&gram)
}

/// Flat bundle of the measured diagnostics for one dataset.
#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsReport {
    pub opnorm_xtx: f64,
    pub opnorm_converged: bool,
    pub entry_tail: f64,
    pub entry_tail_delta: f64,
    pub frob_tail: f64,
    pub frob_tail_c: f64,
    pub score_norm: f64,
    pub coupling_frob_sq_at_zero: f64,
    pub coupling_frob_sq_corner_pos: f64,
    pub coupling_frob_sq_corner_neg: f64,
    pub coupling_frob_sq_probe_mean: f64,
    pub coupling_frob_sq_probe_max: f64,
    pub large_predictor_count: f64,
    pub subset_gram_bound_upper: f64,
    pub subset_gram_greedy_opnorm: f64,
}

/// Evaluates every diagnostic: the coupling norm `‖A_β‖_F²` is probed at
/// `β = 0`, both all-ones corners, and `n_probes` uniform draws from
/// `[−1,1]^p`; the row count with large predictors is taken at the `+1`
/// corner with threshold `delta`.
pub fn diagnostics_report(
    data: &Dataset,
    delta: f64,
    c: f64,
    n_probes: usize,
    seed: u64,
) -> Result<DiagnosticsReport> {
    if n_probes == 0 {
        return Err(Error::Invalid("need at least one probe draw".to_string()));
    }
    let p = data.p();
    let gram = data.x().tr_mul(data.x());
    let op = opnorm(&gram)?;

    let zero = DVector::zeros(p);
    let ones = DVector::from_element(p, 1.0);
    let at_zero = hessian_offdiag_frob_sq(data, &zero)?;
    let corner_pos = hessian_offdiag_frob_sq(data, &ones)?;
    let corner_neg = hessian_offdiag_frob_sq(data, &(-&ones))?;
    let mut probe_mean = StableSum::new();
    let mut probe_max: f64 = 0.0;
    for r in 0..n_probes {
        let mut rng = stream_indexed(seed, "diag_probe", &[r as u64]);
        let beta = DVector::from_fn(p, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let v = hessian_offdiag_frob_sq(data, &beta)?;
        probe_mean.add(v);
        probe_max = probe_max.max(v);
    }

    Ok(DiagnosticsReport {
        opnorm_xtx: op.value,
        opnorm_converged: op.converged,
        entry_tail: entry_tail(data, delta),
        entry_tail_delta: delta,
        frob_tail: frob_tail(data, c)?,
        frob_tail_c: c,
        score_norm: score_norm(data),
        coupling_frob_sq_at_zero: at_zero,
        coupling_frob_sq_corner_pos: corner_pos,
        coupling_frob_sq_corner_neg: corner_neg,
        coupling_frob_sq_probe_mean: probe_mean.value() / n_probes as f64,
        coupling_frob_sq_probe_max: probe_max,
        large_predictor_count: large_predictor_count(data, &ones, delta)? as f64,
        subset_gram_bound_upper: subset_gram_bound(data, c)?,
        subset_gram_greedy_opnorm: greedy_subset_gram_opnorm(data, c)?.value,
    })
}
