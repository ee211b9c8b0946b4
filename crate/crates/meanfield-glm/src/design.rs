//! Synthetic design-matrix generators.
//!
//! Two families are provided: a structured block design whose first `2p`
//! rows are deterministic averaging contrasts with the remainder filled by
//! independent `N(0, I_p/n)` rows, and a fully Gaussian design with rows
//! drawn iid from `N(0, Σ_p/n)`. Both are deterministic given a seed.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::stream;

/// Row covariance `Σ_p` for [`make_gaussian_design`], before the `1/n`
/// scaling.
#[derive(Clone, Debug)]
pub enum DesignCov {
    /// `Σ_p = scale · I_p`.
    Scale(f64),
    /// Explicit symmetric positive-semidefinite `Σ_p`.
    Matrix(DMatrix<f64>),
}

/// Block design: rows `0..p` equal `(1/p)·1`, rows `p..2p` equal the split
/// contrast `((1/p)·1_{p/2}, −(1/p)·1_{p/2})`, and rows `2p..n` are iid
/// `N(0, I_p/n)`.
pub fn make_block_design(n: usize, p: usize, seed: u64) -> Result<DMatrix<f64>> {
    if p == 0 || p % 2 != 0 {
        return Err(Error::Invalid(format!(
            "block design needs a positive even dimension, got p = {p}"
        )));
    }
    if n < 2 * p {
        return Err(Error::Invalid(format!(
            "block design needs n >= 2p, got n = {n}, p = {p}"
        )));
    }
    let mut x = DMatrix::zeros(n, p);
    let scale = 1.0 / p as f64;
    for i in 0..p {
        for j in 0..p {
            x[(i, j)] = scale;
        }
    }
    for i in p..2 * p {
        for j in 0..p {
            x[(i, j)] = if j < p / 2 { scale } else { -scale };
        }
    }
    let sd = (1.0 / n as f64).sqrt();
    let mut rng = stream(seed, "design");
    for i in 2 * p..n {
        for j in 0..p {
            x[(i, j)] = sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(x)
}

/// Rows drawn iid from `N(0, Σ_p/n)`. The covariance is factored through a
/// symmetric eigendecomposition, so singular (rank-deficient) `Σ_p` is
/// accepted; eigenvalues below `−1e-10·‖Σ_p‖` are rejected as non-PSD.
pub fn make_gaussian_design(
    n: usize,
    p: usize,
    cov: &DesignCov,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::Invalid("dimension must be positive".to_string()));
    }
    let factor = match cov {
        DesignCov::Scale(s) => {
            if !s.is_finite() || *s < 0.0 {
                return Err(Error::Invalid(format!(
                    "covariance scale must be non-negative, got {s}"
                )));
            }
            DMatrix::from_diagonal_element(p, p, s.sqrt())
        }
        DesignCov::Matrix(sigma) => {
            if sigma.nrows() != p || sigma.ncols() != p {
                return Err(Error::Invalid(format!(
                    "covariance is {}x{}, expected {p}x{p}",
                    sigma.nrows(),
                    sigma.ncols()
                )));
            }
            let asym = (sigma - sigma.transpose()).amax();
            if asym > 1e-10 {
                return Err(Error::Invalid(format!(
                    "covariance is asymmetric by {asym:.3e}"
                )));
            }
            let eig = sigma.clone().symmetric_eigen();
            let scale = eig.eigenvalues.amax().max(1.0);
            if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
                return Err(Error::Invalid(
                    "covariance is not positive semidefinite".to_string(),
                ));
            }
            let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
            &eig.eigenvectors * sqrt
        }
    };
    let inv_sqrt_n = (1.0 / n as f64).sqrt();
    let mut rng = stream(seed, "design");
    let mut x = DMatrix::zeros(n, p);
    let mut z = nalgebra::DVector::zeros(p);
    for i in 0..n {
        for j in 0..p {
            z[j] = rng.sample::<f64, _>(StandardNormal);
        }
        let row = &factor * &z;
        for j in 0..p {
            x[(i, j)] = inv_sqrt_n * row[j];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_design_has_the_stated_rows() {
        let p = 6;
        let n = 20;
        let x = make_block_design(n, p, 7).unwrap();
        let scale = 1.0 / p as f64;
        for j in 0..p {
            assert_eq!(x[(0, j)], scale);
            assert_eq!(x[(p - 1, j)], scale);
            let expected = if j < p / 2 { scale } else { -scale };
            assert_eq!(x[(p, j)], expected);
            assert_eq!(x[(2 * p - 1, j)], expected);
        }
        let inner: f64 = (0..p).map(|j| x[(0, j)] * x[(p, j)]).sum();
        assert!(inner.abs() < 1e-15, "contrast blocks are not orthogonal");
        // random rows have entry variance 1/n
        let sd = (1.0 / n as f64).sqrt();
        for i in 2 * p..n {
            for j in 0..p {
                assert!(x[(i, j)].abs() < 8.0 * sd);
            }
        }
    }

    #[test]
    fn block_design_rejects_bad_shapes() {
        assert!(make_block_design(10, 3, 0).is_err());
        assert!(make_block_design(7, 4, 0).is_err());
        assert!(make_block_design(8, 0, 0).is_err());
    }

    #[test]
    fn block_design_is_deterministic() {
        let a = make_block_design(30, 4, 11).unwrap();
        let b = make_block_design(30, 4, 11).unwrap();
        let c = make_block_design(30, 4, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_design_matches_the_target_covariance() {
        let p = 3;
        let n = 100_000;
        let sigma = DMatrix::from_row_slice(
            p,
            p,
            &[2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 1.5],
        );
        let x = make_gaussian_design(n, p, &DesignCov::Matrix(sigma.clone()), 3).unwrap();
        let emp = x.transpose() * &x; // sums of x_i x_i^T ≈ n · Σ/n = Σ
        let diff = (&emp - &sigma).norm();
        assert!(
            diff < 0.02 * sigma.norm(),
            "empirical covariance off by {:.3}%",
            100.0 * diff / sigma.norm()
        );
    }

    #[test]
    fn scaled_gaussian_design_has_entry_variance_scale_over_n() {
        let n = 50_000;
        let x = make_gaussian_design(n, 2, &DesignCov::Scale(0.01), 4).unwrap();
        let var = x.iter().map(|v| v * v).sum::<f64>() / (2 * n) as f64;
        let target = 0.01 / n as f64;
        assert!((var - target).abs() < 0.05 * target, "{var} vs {target}");
    }

    #[test]
    fn gaussian_design_is_deterministic_and_validates_covariance() {
        let a = make_gaussian_design(10, 2, &DesignCov::Scale(1.0), 5).unwrap();
        let b = make_gaussian_design(10, 2, &DesignCov::Scale(1.0), 5).unwrap();
        assert_eq!(a, b);

        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(make_gaussian_design(10, 2, &DesignCov::Matrix(indefinite), 0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        assert!(make_gaussian_design(10, 2, &DesignCov::Matrix(asym), 0).is_err());
        assert!(make_gaussian_design(10, 2, &DesignCov::Scale(-1.0), 0).is_err());

        // singular but PSD covariance is accepted
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let x = make_gaussian_design(1000, 2, &DesignCov::Matrix(singular), 6).unwrap();
        for i in 0..1000 {
            assert!((x[(i, 0)] - x[(i, 1)]).abs() < 1e-12);
        }
    }
}
