//! Score-matching objectives.
//!
//! The implicit loss `(1/n) Σ |s(Xᵢ)|² + 2∇·s(Xᵢ)` equals the mean-squared
//! score error up to an `s`-independent constant. The denoising loss replaces
//! the divergence by the antithetic estimator
//! `α⁻¹ (s(x + αZ) − s(x − αZ)) · Z`, which needs forward passes only.

use super::mlp::Mlp;
use super::{check_points, ScoreModel};
use crate::error::Result;
use crate::sampling::SimRng;

/// Points per block of the fused loss/gradient passes.
const LOSS_CHUNK: usize = 256;

/// Denoising loss of `m` on `points` with one noise row per point, together
/// with its exact gradient with respect to the network parameters.
///
/// The three evaluations `s(X)`, `s(X + αZ)` and `s(X − αZ)` go through one
/// stacked forward/backward pass per block of points.
pub fn denoising_loss_and_grad(m: &Mlp, points: &[f64], alpha: f64, noise: &[f64]) -> (f64, Vec<f64>) {
    let d = m.input_dim();
    let n = points.len() / d;
    assert_eq!(noise.len(), points.len());
    let inv_n = 1.0 / n as f64;
    let zs = inv_n / alpha;
    let mut grad = vec![0.0; m.param_count()];
    let mut loss = 0.0;
    for (x, z) in points.chunks(LOSS_CHUNK * d).zip(noise.chunks(LOSS_CHUNK * d)) {
        let len = x.len();
        let mut stacked = Vec::with_capacity(3 * len);
        stacked.extend_from_slice(x);
        stacked.extend(x.iter().zip(z).map(|(x, z)| x + alpha * z));
        stacked.extend(x.iter().zip(z).map(|(x, z)| x - alpha * z));
        let (out, cache) = m.forward_cached(&stacked);
        let (center, rest) = out.split_at(len);
        let (plus, minus) = rest.split_at(len);
        let sq: f64 = center.iter().map(|v| v * v).sum();
        let div: f64 = plus
            .iter()
            .zip(minus)
            .zip(z)
            .map(|((p, q), z)| (p - q) * z)
            .sum();
        loss += sq + div / alpha;

        let mut grad_out = Vec::with_capacity(3 * len);
        grad_out.extend(center.iter().map(|v| 2.0 * v * inv_n));
        grad_out.extend(z.iter().map(|z| z * zs));
        grad_out.extend(z.iter().map(|z| -z * zs));
        m.backward_accumulate(&cache, &grad_out, &mut grad);
    }
    (loss * inv_n, grad)
}

/// Denoising loss of any score model with fresh standard-normal noise.
pub fn denoising_loss(s: &dyn ScoreModel, points: &[f64], alpha: f64, rng: &mut SimRng) -> Result<f64> {
    let d = s.dim();
    let n = check_points(points, d)?;
    let mut noise = vec![0.0; points.len()];
    rng.fill_standard_normal(&mut noise);
    let center = s.eval_batch(points)?;
    let plus: Vec<f64> = points.iter().zip(&noise).map(|(x, z)| x + alpha * z).collect();
    let minus: Vec<f64> = points.iter().zip(&noise).map(|(x, z)| x - alpha * z).collect();
    let sp = s.eval_batch(&plus)?;
    let sm = s.eval_batch(&minus)?;
    let mut total = 0.0;
    for i in 0..n {
        let r = i * d..(i + 1) * d;
        let sq: f64 = center[r.clone()].iter().map(|v| v * v).sum();
        let div: f64 = sp[r.clone()]
            .iter()
            .zip(&sm[r.clone()])
            .zip(&noise[r])
            .map(|((p, q), z)| (p - q) * z)
            .sum();
        total += sq + div / alpha;
    }
    Ok(total / n as f64)
}

/// Single-draw antithetic divergence estimate `(2α)⁻¹ (s(x+αZ) − s(x−αZ))·Z`.
pub fn denoising_divergence_estimate(s: &dyn ScoreModel, x: &[f64], alpha: f64, z: &[f64]) -> Result<f64> {
    let plus: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + alpha * b).collect();
    let minus: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - alpha * b).collect();
    let sp = s.eval(&plus)?;
    let sm = s.eval(&minus)?;
    Ok(sp
        .iter()
        .zip(&sm)
        .zip(z)
        .map(|((p, q), zk)| (p - q) * zk)
        .sum::<f64>()
        / (2.0 * alpha))
}

/// Implicit score-matching loss with exact divergence.
pub fn implicit_loss(s: &dyn ScoreModel, points: &[f64]) -> Result<f64> {
    let n = check_points(points, s.dim())?;
    let values = s.eval_batch(points)?;
    let div = s.divergence_batch(points)?;
    let sq: f64 = values.iter().map(|v| v * v).sum();
    let dv: f64 = div.iter().sum();
    Ok((sq + 2.0 * dv) / n as f64)
}

/// `(1/n) Σ |s(Xᵢ) − targetᵢ|²` and its parameter gradient.
pub fn mse_loss_and_grad(m: &Mlp, points: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let d = m.input_dim();
    let inv_n = 1.0 / (points.len() / d) as f64;
    let mut grad = vec![0.0; m.param_count()];
    let mut loss = 0.0;
    for (x, t) in points.chunks(3 * LOSS_CHUNK * d).zip(targets.chunks(3 * LOSS_CHUNK * d)) {
        let (out, cache) = m.forward_cached(x);
        let resid: Vec<f64> = out.iter().zip(t).map(|(o, t)| o - t).collect();
        loss += resid.iter().map(|r| r * r).sum::<f64>();
        let grad_out: Vec<f64> = resid.iter().map(|r| 2.0 * r * inv_n).collect();
        m.backward_accumulate(&cache, &grad_out, &mut grad);
    }
    (loss * inv_n, grad)
}
