//! Gaussian feature statistics, the PSD matrix square root, Frechet distance,
//! and classification accuracy.

mod extractor;

pub use extractor::{FeatureExtractor, IdentityExtractor, RandomProjectionExtractor};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean and unbiased covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
    /// Ridge `lambda` added to the diagonal when `n` is below the feature dimension.
    pub shrinkage: f64,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Sample mean and unbiased covariance, symmetrized as `(S + S^T) / 2`.
///
/// When there are fewer samples than dimensions the covariance is singular,
/// so `1e-6 * mean(diag)` is added to the diagonal and recorded.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::EmptyInput(format!("gaussian stats need at least 2 vectors, got {n}")));
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(Error::DimensionMismatch(format!("feature of length {} among length {d}", bad.len())));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let mut sigma = (&cov + cov.transpose()) * 0.5;
    let mut shrinkage = 0.0;
    if n < d {
        shrinkage = 1e-6 * sigma.diagonal().mean();
        for i in 0..d {
            sigma[(i, i)] += shrinkage;
        }
    }
    Ok(GaussianStats { mu, sigma, n, shrinkage })
}

fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a symmetric PSD matrix with round-off negatives clamped to zero.
///
/// Eigenvalues below `-eps` (with `eps = 1e-6 * max |eigenvalue|`) are rejected.
fn psd_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", a.nrows(), a.ncols())));
    }
    let scale = a.amax().max(1.0);
    let asym = max_asymmetry(a);
    if asym > 1e-8 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (a + a.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let tolerance = 1e-6 * eig.eigenvalues.amax();
    for v in eig.eigenvalues.iter_mut() {
        if *v < -tolerance {
            return Err(Error::Indefinite {
                eigenvalue: *v,
                tolerance,
            });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(eig)
}

/// Symmetric square root `S` with `S * S = a`, via eigendecomposition.
pub fn sqrtm_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(a)?;
    let roots = eig.eigenvalues.map(f64::sqrt);
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Frechet distance with the values needed for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub value: f64,
    /// Raw negative value that was clamped to zero, if any.
    pub clamped_from: Option<f64>,
}

/// `|mu_x - mu_g|^2 + tr(S_x + S_g - 2 sqrt(S_x S_g))`, with the cross term
/// taken as `tr sqrt(sqrt(S_x) S_g sqrt(S_x))`, which has the same trace and
/// stays symmetric PSD.
pub fn fid_report(x: &GaussianStats, g: &GaussianStats) -> Result<FidReport> {
    if x.dim() != g.dim() || x.sigma.nrows() != g.sigma.nrows() {
        return Err(Error::DimensionMismatch(format!("feature dims {} vs {}", x.dim(), g.dim())));
    }
    let mean_term = (&x.mu - &g.mu).norm_squared();
    let root_x = sqrtm_psd(&x.sigma)?;
    let inner = &root_x * &g.sigma * &root_x;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = psd_eigen(&inner)?.eigenvalues.iter().map(|v| v.sqrt()).sum::<f64>();
    let raw = mean_term + x.sigma.trace() + g.sigma.trace() - 2.0 * cross;
    if raw < 0.0 {
        log::debug!("fid round-off: clamped {raw:e} to 0");
        return Ok(FidReport {
            value: 0.0,
            clamped_from: Some(raw),
        });
    }
    Ok(FidReport {
        value: raw,
        clamped_from: None,
    })
}

pub fn fid(x: &GaussianStats, g: &GaussianStats) -> Result<f64> {
    fid_report(x, g).map(|r| r.value)
}

/// Fraction of positions where prediction equals label.
pub fn accuracy(predictions: &[u32], labels: &[u32]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("accuracy over zero predictions".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Structured record of one FID evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub extractor: String,
    pub n_real: usize,
    pub n_generated: usize,
    pub shrinkage_real: f64,
    pub shrinkage_generated: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamped_from: Option<f64>,
}

/// FID between two image sets under `extractor`, as a full report.
pub fn fid_between(
    extractor: &dyn FeatureExtractor,
    real: &[crate::nn::Tensor],
    generated: &[crate::nn::Tensor],
) -> Result<MetricReport> {
    let fr: Vec<Vec<f64>> = real.iter().map(|t| extractor.extract(t)).collect();
    let fg: Vec<Vec<f64>> = generated.iter().map(|t| extractor.extract(t)).collect();
    let sr = gaussian_stats(&fr)?;
    let sg = gaussian_stats(&fg)?;
    let rep = fid_report(&sr, &sg)?;
    Ok(MetricReport {
        metric: "fid".into(),
        value: rep.value,
        extractor: extractor.descriptor(),
        n_real: real.len(),
        n_generated: generated.len(),
        shrinkage_real: sr.shrinkage,
        shrinkage_generated: sg.shrinkage,
        clamped_from: rep.clamped_from,
    })
}
