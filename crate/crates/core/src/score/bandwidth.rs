use nalgebra::DMatrix;

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a sample covariance is singular.
const SINGULAR_EIGENVALUE: f64 = 1e-12;

/// Silverman plug-in bandwidth `ε = n^{−1/(d+6)} (σ₁⋯σ_d)^{1/d}`, where `σᵢ`
/// are the eigenvalues of the sample covariance.
///
/// `ε` is a variance: the blob kernel is `exp(−|z|²/2ε)`.
pub fn silverman_bandwidth(e: &ParticleEnsemble) -> Result<f64> {
    let d = e.dim() as f64;
    let n = e.len() as f64;
    let cov = e.moments().covariance();
    let eig = cov.symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
    if !(max > 0.0) || eig.iter().any(|l| *l <= SINGULAR_EIGENVALUE * max) {
        return Err(Error::SingularCovariance);
    }
    let mean_log = eig.iter().map(|l| l.ln()).sum::<f64>() / d;
    Ok(n.powf(-1.0 / (d + 6.0)) * mean_log.exp())
}

/// Scott's rule matrix bandwidth `H = n^{−1/(d+4)} Σ`, with `Σ` the sample
/// covariance, used as the kernel covariance of the density reconstruction.
pub fn scott_bandwidth_matrix(e: &ParticleEnsemble) -> Result<DMatrix<f64>> {
    let d = e.dim() as f64;
    let n = e.len() as f64;
    let cov = e.moments().covariance();
    if cov.clone().cholesky().is_none() {
        return Err(Error::SingularCovariance);
    }
    Ok(cov * n.powf(-1.0 / (d + 4.0)))
}
