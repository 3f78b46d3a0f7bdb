//! Fréchet distance between Gaussian fits:
//! `d^2 = |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})`, with the matrix
//! square root taken through the symmetrized product
//! `S1^{1/2} S2 S1^{1/2}`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::linalg::{jacobi_eigh, sqrt_psd, symmetrize};

/// Tolerated negative-eigenvalue slack before a covariance is rejected.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub n_samples: usize,
}

/// Fit mean and (unbiased) covariance to `[n, d]` feature rows.
pub fn gaussian_stats(features: &Array2<f64>) -> Result<GaussianStats> {
    let (n, d) = (features.nrows(), features.ncols());
    if n < 2 {
        return Err(Error::Metric(format!(
            "need at least 2 samples to fit a Gaussian, got {n}"
        )));
    }
    let mean = features.sum_axis(ndarray::Axis(0)) / n as f64;
    let mut centered = features.clone();
    for mut row in centered.rows_mut() {
        row -= &mean;
    }
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let _ = d;
    Ok(GaussianStats {
        mean,
        cov: symmetrize(&cov),
        n_samples: n,
    })
}

fn check_psd(cov: &Array2<f64>, side: &str) -> Result<()> {
    let (vals, _) = jacobi_eigh(cov);
    let min = vals[0];
    if min < -PSD_TOLERANCE {
        return Err(Error::Metric(format!(
            "{side} covariance is not PSD (min eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

/// Squared Fréchet distance between two Gaussians.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.mean.len();
    if b.mean.len() != d || a.cov.nrows() != d || b.cov.nrows() != d {
        return Err(Error::Metric(format!(
            "dimension mismatch: {d} vs {}",
            b.mean.len()
        )));
    }
    check_psd(&a.cov, "first")?;
    check_psd(&b.cov, "second")?;

    let diff = &a.mean - &b.mean;
    let mean_term: f64 = diff.iter().map(|x| x * x).sum();

    let s1_root = sqrt_psd(&a.cov);
    let inner = symmetrize(&s1_root.dot(&b.cov).dot(&s1_root));
    let (vals, _) = jacobi_eigh(&inner);
    let tr_sqrt: f64 = vals.iter().map(|&v| v.max(0.0).sqrt()).sum();

    let tr1: f64 = (0..d).map(|i| a.cov[[i, i]]).sum();
    let tr2: f64 = (0..d).map(|i| b.cov[[i, i]]).sum();
    Ok((mean_term + tr1 + tr2 - 2.0 * tr_sqrt).max(0.0))
}
