//! Kernel ("blob") score.
//!
//! With the Gaussian mollifier `φ_ε(z) = (2πε)^{−d/2} exp(−|z|²/2ε)` and the
//! regularized density `ρ = φ_ε ∗ u_n`, the blob score is the gradient of the
//! first variation of `∫ u log(φ_ε ∗ u)`:
//!
//! ```text
//! s(x) = ∇ρ(x)/ρ(x) + (1/n) Σ_k ∇φ_ε(x − X_k) / ρ(X_k)
//! ```
//!
//! The normalization of `φ_ε` cancels in both terms, so everything below works
//! with `W(z) = exp(−|z|²/2ε)` and the unnormalized sums
//! `r_k = Σ_m W(X_k − X_m)`, giving
//! `s(x) = −(1/ε) Σ_k W(x − X_k)(x − X_k) (1/R(x) + 1/r_k)`.

use rayon::prelude::*;
use wide::f64x8;

use super::{check_points, ScoreModel};
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::simd::{exp_x8, load, tree_sum};

const LANES: usize = 8;
const PAR_CHUNK: usize = 16;

/// Blob score over a fixed ensemble and bandwidth.
#[derive(Debug, Clone)]
pub struct BlobScore {
    d: usize,
    n: usize,
    eps: f64,
    /// Particle columns zero-padded to `np` rows (`columns[k * np + j]`).
    columns: Vec<f64>,
    np: usize,
    /// 1 for real particles, 0 for padding.
    mask: Vec<f64>,
    /// `1 / r_k`, zero on padding.
    inv_r: Vec<f64>,
}

/// Kernel sums at one query point.
struct Sums {
    total: f64,
    /// `Σ W z`
    first: Vec<f64>,
    /// `Σ W z / r_k`
    second: Vec<f64>,
    /// `Σ W (d − |z|²/ε)` and the same divided by `r_k`.
    lap_first: f64,
    lap_second: f64,
}

impl BlobScore {
    pub fn new(e: &ParticleEnsemble, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::Domain(format!("blob bandwidth must be positive, got {eps}")));
        }
        let d = e.dim();
        let n = e.len();
        let np = n.div_ceil(LANES) * LANES;
        let mut columns = vec![0.0; np * d];
        for (j, x) in e.particles().enumerate() {
            for (k, &v) in x.iter().enumerate() {
                columns[k * np + j] = v;
            }
        }
        let mut mask = vec![0.0; np];
        mask[..n].fill(1.0);
        let mut me = Self {
            d,
            n,
            eps,
            columns,
            np,
            mask,
            inv_r: vec![0.0; np],
        };
        let r: Vec<f64> = e
            .as_slice()
            .par_chunks(d * PAR_CHUNK)
            .flat_map_iter(|chunk| {
                chunk
                    .chunks_exact(d)
                    .map(|x| me.kernel_sum(x))
                    .collect::<Vec<_>>()
            })
            .collect();
        // r_k ≥ 1 from the self term, so no division by zero here.
        for (ir, v) in me.inv_r.iter_mut().zip(&r) {
            *ir = 1.0 / v;
        }
        Ok(me)
    }

    pub fn bandwidth(&self) -> f64 {
        self.eps
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Squared distances from `x` to the eight particles starting at `b`.
    #[inline(always)]
    fn dist2<const D: usize>(&self, xv: &[f64x8; D], b: usize) -> f64x8 {
        let mut r2 = f64x8::ZERO;
        for k in 0..D {
            let z = xv[k] - load(&self.columns, k * self.np + b);
            r2 = z.mul_add(z, r2);
        }
        r2
    }

    fn kernel_sum(&self, x: &[f64]) -> f64 {
        macro_rules! dims {
            ($($d:literal),*) => {
                match self.d {
                    $($d => self.kernel_sum_fixed::<$d>(x),)*
                    _ => self.sums(x, false).total,
                }
            };
        }
        dims!(1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12)
    }

    fn kernel_sum_fixed<const D: usize>(&self, x: &[f64]) -> f64 {
        let xv: [f64x8; D] = std::array::from_fn(|k| f64x8::splat(x[k]));
        let scale = f64x8::splat(-0.5 / self.eps);
        let mut total = f64x8::ZERO;
        for b in (0..self.np).step_by(LANES) {
            let w = exp_x8(self.dist2(&xv, b) * scale);
            total = w.mul_add(load(&self.mask, b), total);
        }
        tree_sum(total)
    }

    fn sums(&self, x: &[f64], with_laplacian: bool) -> Sums {
        macro_rules! dims {
            ($($d:literal),*) => {
                match self.d {
                    $($d => self.sums_fixed::<$d>(x, with_laplacian),)*
                    _ => self.sums_dyn(x, with_laplacian),
                }
            };
        }
        dims!(1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12)
    }

    fn sums_fixed<const D: usize>(&self, x: &[f64], with_laplacian: bool) -> Sums {
        let np = self.np;
        let xv: [f64x8; D] = std::array::from_fn(|k| f64x8::splat(x[k]));
        let scale = f64x8::splat(-0.5 / self.eps);
        let inv_eps = f64x8::splat(1.0 / self.eps);
        let df = f64x8::splat(D as f64);
        let mut total = f64x8::ZERO;
        let mut first = [f64x8::ZERO; D];
        let mut second = [f64x8::ZERO; D];
        let mut lap_first = f64x8::ZERO;
        let mut lap_second = f64x8::ZERO;
        for b in (0..np).step_by(LANES) {
            let r2 = self.dist2(&xv, b);
            let w = exp_x8(r2 * scale) * load(&self.mask, b);
            let wr = w * load(&self.inv_r, b);
            total += w;
            for k in 0..D {
                let z = xv[k] - load(&self.columns, k * np + b);
                first[k] = w.mul_add(z, first[k]);
                second[k] = wr.mul_add(z, second[k]);
            }
            if with_laplacian {
                let q = df - r2 * inv_eps;
                lap_first = w.mul_add(q, lap_first);
                lap_second = wr.mul_add(q, lap_second);
            }
        }
        Sums {
            total: tree_sum(total),
            first: first.iter().map(|v| tree_sum(*v)).collect(),
            second: second.iter().map(|v| tree_sum(*v)).collect(),
            lap_first: tree_sum(lap_first),
            lap_second: tree_sum(lap_second),
        }
    }

    fn sums_dyn(&self, x: &[f64], with_laplacian: bool) -> Sums {
        let (d, np) = (self.d, self.np);
        let scale = f64x8::splat(-0.5 / self.eps);
        let inv_eps = f64x8::splat(1.0 / self.eps);
        let df = f64x8::splat(d as f64);
        let mut total = f64x8::ZERO;
        let mut first = vec![f64x8::ZERO; d];
        let mut second = vec![f64x8::ZERO; d];
        let mut lap_first = f64x8::ZERO;
        let mut lap_second = f64x8::ZERO;
        for b in (0..np).step_by(LANES) {
            let mut r2 = f64x8::ZERO;
            for (k, &xk) in x.iter().enumerate() {
                let z = f64x8::splat(xk) - load(&self.columns, k * np + b);
                r2 = z.mul_add(z, r2);
            }
            let w = exp_x8(r2 * scale) * load(&self.mask, b);
            let wr = w * load(&self.inv_r, b);
            total += w;
            for (k, &xk) in x.iter().enumerate() {
                let z = f64x8::splat(xk) - load(&self.columns, k * np + b);
                first[k] = w.mul_add(z, first[k]);
                second[k] = wr.mul_add(z, second[k]);
            }
            if with_laplacian {
                let q = df - r2 * inv_eps;
                lap_first = w.mul_add(q, lap_first);
                lap_second = wr.mul_add(q, lap_second);
            }
        }
        Sums {
            total: tree_sum(total),
            first: first.iter().map(|v| tree_sum(*v)).collect(),
            second: second.iter().map(|v| tree_sum(*v)).collect(),
            lap_first: tree_sum(lap_first),
            lap_second: tree_sum(lap_second),
        }
    }

    fn eval_point(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let s = self.sums(x, false);
        if !(s.total > 0.0) {
            return Err(Error::FarOutsideSupport(x.to_vec()));
        }
        let inv_eps = 1.0 / self.eps;
        let inv_total = 1.0 / s.total;
        for k in 0..self.d {
            out[k] = -inv_eps * (s.first[k] * inv_total + s.second[k]);
        }
        Ok(())
    }

    fn divergence_point(&self, x: &[f64]) -> Result<f64> {
        let s = self.sums(x, true);
        if !(s.total > 0.0) {
            return Err(Error::FarOutsideSupport(x.to_vec()));
        }
        let inv_eps = 1.0 / self.eps;
        let g2: f64 = s.first.iter().map(|v| v * v).sum();
        let first = s.lap_first / s.total + g2 * inv_eps / (s.total * s.total);
        Ok(-inv_eps * (first + s.lap_second))
    }
}

impl ScoreModel for BlobScore {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        let d = self.d;
        check_points(points, d)?;
        let mut out = vec![0.0; points.len()];
        out.par_chunks_mut(d * PAR_CHUNK)
            .zip(points.par_chunks(d * PAR_CHUNK))
            .try_for_each(|(o, p)| {
                for (oi, x) in o.chunks_exact_mut(d).zip(p.chunks_exact(d)) {
                    self.eval_point(x, oi)?;
                }
                Ok(())
            })?;
        Ok(out)
    }

    fn divergence_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        check_points(points, self.d)?;
        points
            .par_chunks(self.d)
            .map(|x| self.divergence_point(x))
            .collect()
    }
}

/// Blob score of ensemble `e` with bandwidth `eps` at the query `x`.
pub fn blob_score(e: &ParticleEnsemble, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
    BlobScore::new(e, eps)?.eval(x)
}

/// Blob score evaluated at every particle of `e`.
pub fn blob_scores_at_particles(e: &ParticleEnsemble, eps: f64) -> Result<Vec<f64>> {
    BlobScore::new(e, eps)?.eval_batch(e.as_slice())
}
