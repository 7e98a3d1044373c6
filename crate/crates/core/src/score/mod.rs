//! Score models: vector fields approximating `∇ log u`.
//!
//! Three families sit behind [`ScoreModel`]: closed-form scores of the
//! analytic references, the kernel ("blob") score built from a regularized
//! entropy, and a neural network trained by denoising score matching.

mod adam;
mod bandwidth;
mod blob;
mod checkpoint;
mod loss;
mod mlp;
mod train;

pub use adam::AdamState;
pub use bandwidth::{scott_bandwidth_matrix, silverman_bandwidth};
pub use blob::{blob_score, blob_scores_at_particles, BlobScore};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use loss::{
    denoising_divergence_estimate, denoising_loss, denoising_loss_and_grad, implicit_loss,
    mse_loss_and_grad,
};
pub use mlp::{mlp_eval, Activation, ForwardCache, Mlp};
pub use train::{initialize_score, train_step, InitOptions, InitReport, TrainMode, TrainReport};

use crate::analytic::{BkwSolution, GaussianSolution};
use crate::error::{Error, Result};

/// A vector field `s: ℝ^d → ℝ^d` with an exact divergence.
///
/// Batched methods take row-major `m × d` point arrays and return row-major
/// results; evaluation is deterministic given the model state.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;

    fn eval_batch(&self, points: &[f64]) -> Result<Vec<f64>>;

    fn divergence_batch(&self, points: &[f64]) -> Result<Vec<f64>>;

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_points(x, self.dim())?;
        self.eval_batch(x)
    }

    fn divergence(&self, x: &[f64]) -> Result<f64> {
        Ok(self.divergence_batch(x)?[0])
    }
}

pub(crate) fn check_points(points: &[f64], d: usize) -> Result<usize> {
    if points.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: points.len() % d,
        });
    }
    Ok(points.len() / d)
}

/// Score of one of the closed-form reference solutions.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticScore {
    Bkw(BkwSolution),
    Gaussian(GaussianSolution),
}

impl ScoreModel for AnalyticScore {
    fn dim(&self) -> usize {
        match self {
            AnalyticScore::Bkw(s) => s.dim(),
            AnalyticScore::Gaussian(g) => g.dim(),
        }
    }

    fn eval_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        check_points(points, d)?;
        let mut out = Vec::with_capacity(points.len());
        for x in points.chunks_exact(d) {
            match self {
                AnalyticScore::Bkw(s) => out.extend(s.score(x)?),
                AnalyticScore::Gaussian(g) => out.extend(g.score(x)),
            }
        }
        Ok(out)
    }

    fn divergence_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        check_points(points, d)?;
        points
            .chunks_exact(d)
            .map(|x| match self {
                AnalyticScore::Bkw(s) => s.score_divergence(x),
                AnalyticScore::Gaussian(g) => Ok(g.score_divergence()),
            })
            .collect()
    }
}

/// The affine field `s(x) = M x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineScore {
    d: usize,
    /// Row-major `d × d`.
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl AffineScore {
    pub fn new(d: usize, matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if matrix.len() != d * d || offset.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: offset.len(),
            });
        }
        Ok(Self { d, matrix, offset })
    }

    /// `s(x) = a x + c`.
    pub fn scalar(a: f64, offset: Vec<f64>) -> Self {
        let d = offset.len();
        let mut matrix = vec![0.0; d * d];
        for k in 0..d {
            matrix[k * d + k] = a;
        }
        Self { d, matrix, offset }
    }
}

impl ScoreModel for AffineScore {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        let d = self.d;
        check_points(points, d)?;
        let mut out = Vec::with_capacity(points.len());
        for x in points.chunks_exact(d) {
            for (row, c) in self.matrix.chunks_exact(d).zip(&self.offset) {
                out.push(row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c);
            }
        }
        Ok(out)
    }

    fn divergence_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        let n = check_points(points, self.d)?;
        let trace: f64 = (0..self.d).map(|k| self.matrix[k * self.d + k]).sum();
        Ok(vec![trace; n])
    }
}

/// Scores evaluated once at every particle, the form consumed by the
/// pairwise velocity kernel.
pub fn eval_at_particles(
    s: &dyn ScoreModel,
    e: &crate::ensemble::ParticleEnsemble,
) -> Result<Vec<f64>> {
    if s.dim() != e.dim() {
        return Err(Error::DimensionMismatch {
            expected: e.dim(),
            got: s.dim(),
        });
    }
    s.eval_batch(e.as_slice())
}
