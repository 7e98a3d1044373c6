//! Accuracy metrics for particle solutions: moment and score errors, kernel
//! density reconstruction, weighted score loss and the `A ∗ u` bounds.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wide::f64x8;

use crate::analytic::{spectral_norm, MaxwellianCoefficients};
use crate::ensemble::{MomentState, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::kernel::CollisionKernel;
use crate::score::{eval_at_particles, scott_bandwidth_matrix, ScoreModel};
use crate::simd::{exp_x8, load, tree_sum};

pub use crate::dynamics::entropy_rate;

const LANES: usize = 8;
const QUERY_CHUNK: usize = 64;

/// Named per-step metric, doubling as the CSV column name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cov11,
    CovErrSqFrobenius,
    ScoreErrNormalized,
    L2DensityErr,
    EntropyRate,
    MomentumDrift,
    EnergyDrift,
    WeightedLoss,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Cov11,
        Metric::CovErrSqFrobenius,
        Metric::ScoreErrNormalized,
        Metric::L2DensityErr,
        Metric::EntropyRate,
        Metric::MomentumDrift,
        Metric::EnergyDrift,
        Metric::WeightedLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cov11 => "cov11",
            Metric::CovErrSqFrobenius => "cov_err_sq_frobenius",
            Metric::ScoreErrNormalized => "score_err_normalized",
            Metric::L2DensityErr => "l2_density_err",
            Metric::EntropyRate => "entropy_rate",
            Metric::MomentumDrift => "momentum_drift",
            Metric::EnergyDrift => "energy_drift",
            Metric::WeightedLoss => "weighted_loss",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Metric values at one time, in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub time: f64,
    pub values: Vec<(Metric, f64)>,
}

impl MetricRecord {
    pub fn new(time: f64) -> Self {
        Self {
            time,
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, m: Metric, v: f64) {
        self.values.push((m, v));
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == m).map(|(_, v)| *v)
    }

    pub fn all_finite(&self) -> bool {
        self.time.is_finite() && self.values.iter().all(|(_, v)| v.is_finite())
    }
}

/// `Σᵢⱼ |Σᵢⱼ − Σ*ᵢⱼ|²`, the squared Frobenius distance between the ensemble
/// second moment `E[x ⊗ x]` and `sigma_ref`.
pub fn covariance_frobenius_error(e: &ParticleEnsemble, sigma_ref: &DMatrix<f64>) -> Result<f64> {
    let d = e.dim();
    if sigma_ref.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: sigma_ref.nrows(),
        });
    }
    Ok((e.moments().second_moment - sigma_ref).norm_squared())
}

/// `Σᵢ |s*(Xᵢ) − s(Xᵢ)|² / Σᵢ |s*(Xᵢ)|²`.
pub fn normalized_score_error(
    s: &dyn ScoreModel,
    truth: &dyn ScoreModel,
    e: &ParticleEnsemble,
) -> Result<f64> {
    let got = eval_at_particles(s, e)?;
    let want = eval_at_particles(truth, e)?;
    normalized_score_error_from_values(&got, &want)
}

/// [`normalized_score_error`] on precomputed score rows.
pub fn normalized_score_error_from_values(got: &[f64], want: &[f64]) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in got.iter().zip(want) {
        num += (b - a) * (b - a);
        den += b * b;
    }
    if den == 0.0 {
        return Err(Error::Domain("true score vanishes at every particle".into()));
    }
    Ok(num / den)
}

/// Relative drift `|V(t) − V(0)| / √(2E(0))` of the mean velocity.
pub fn momentum_drift(initial: &MomentState, current: &MomentState) -> f64 {
    (&current.momentum - &initial.momentum).norm() / initial.energy_times_two.sqrt()
}

/// Relative drift `|2E(t) − 2E(0)| / 2E(0)` of the kinetic energy.
pub fn energy_drift(initial: &MomentState, current: &MomentState) -> f64 {
    (current.energy_times_two - initial.energy_times_two).abs() / initial.energy_times_two
}

/// Gaussian kernel density estimate with Scott matrix bandwidth
/// `H = n^{−1/(d+4)} Σ̂` as the kernel covariance.
#[derive(Debug, Clone)]
pub struct Kde {
    d: usize,
    n: usize,
    np: usize,
    /// Lower Cholesky factor of `H`.
    chol: DMatrix<f64>,
    /// Whitened particles `L⁻¹ Xₖ`, zero-padded columns (`w[k * np + j]`).
    whitened: Vec<f64>,
    mask: Vec<f64>,
    /// `(2π)^{−d/2} det(H)^{−1/2} / n`.
    norm: f64,
}

impl Kde {
    pub fn new(e: &ParticleEnsemble) -> Result<Self> {
        let h = scott_bandwidth_matrix(e)?;
        let chol = h.cholesky().ok_or(Error::SingularCovariance)?.l();
        let (d, n) = (e.dim(), e.len());
        let np = n.div_ceil(LANES) * LANES;
        let mut whitened = vec![0.0; d * np];
        for (j, x) in e.particles().enumerate() {
            let w = whiten(&chol, x);
            for k in 0..d {
                whitened[k * np + j] = w[k];
            }
        }
        let mut mask = vec![0.0; np];
        mask[..n].fill(1.0);
        let log_det: f64 = (0..d).map(|k| chol[(k, k)].ln()).sum();
        let norm = (-0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - log_det).exp() / n as f64;
        Ok(Self {
            d,
            n,
            np,
            chol,
            whitened,
            mask,
            norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Kernel covariance `H`.
    pub fn bandwidth(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.d, "kde: dimension mismatch");
        let q = whiten(&self.chol, x);
        let mut acc = f64x8::ZERO;
        let half = f64x8::splat(-0.5);
        for b in (0..self.np).step_by(LANES) {
            let mut r2 = f64x8::ZERO;
            for (k, &qk) in q.iter().enumerate() {
                let z = f64x8::splat(qk) - load(&self.whitened, k * self.np + b);
                r2 = z.mul_add(z, r2);
            }
            acc = exp_x8(r2 * half).mul_add(load(&self.mask, b), acc);
        }
        self.norm * tree_sum(acc)
    }

    /// Densities at row-major query points, evaluated in parallel.
    pub fn density_batch(&self, points: &[f64]) -> Vec<f64> {
        points
            .par_chunks(self.d * QUERY_CHUNK)
            .flat_map_iter(|c| c.chunks_exact(self.d).map(|x| self.density(x)).collect::<Vec<_>>())
            .collect()
    }
}

fn whiten(chol: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut v = DVector::from_column_slice(x);
    chol.solve_lower_triangular_mut(&mut v);
    v.as_slice().to_vec()
}

/// Free-function form of [`Kde::density`].
pub fn kde_density(e: &ParticleEnsemble, x: &[f64]) -> Result<f64> {
    Ok(Kde::new(e)?.density(x))
}

/// Axis-aligned quadrature box.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DensityBox {
    /// `[V − wσ_max, V + wσ_max]` on every axis, with `σ_max²` the largest
    /// covariance eigenvalue.
    pub fn around(m: &MomentState, widths: f64) -> Self {
        let sigma = spectral_norm(&m.covariance()).sqrt();
        Self {
            lo: m.momentum.iter().map(|v| v - widths * sigma).collect(),
            hi: m.momentum.iter().map(|v| v + widths * sigma).collect(),
        }
    }

    /// Default box, five standard deviations each way.
    pub fn standard(m: &MomentState) -> Self {
        Self::around(m, 5.0)
    }
}

pub const DEFAULT_GRID_POINTS: usize = 64;

/// Midpoint-rule `L²` distance between the KDE of `e` and `truth` over the
/// box, with `grid` cells per axis. Supported for `d ≤ 3`.
pub fn l2_density_error(
    e: &ParticleEnsemble,
    truth: &(dyn Fn(&[f64]) -> f64 + Sync),
    bounds: &DensityBox,
    grid: usize,
) -> Result<f64> {
    let d = e.dim();
    if d > 3 {
        return Err(Error::Unsupported(format!(
            "grid quadrature of the density error in d={d} (only d ≤ 3)"
        )));
    }
    if bounds.lo.len() != d || bounds.hi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bounds.lo.len(),
        });
    }
    if grid == 0 {
        return Err(Error::Domain("quadrature grid needs at least one point".into()));
    }
    let kde = Kde::new(e)?;
    let h: Vec<f64> = (0..d).map(|k| (bounds.hi[k] - bounds.lo[k]) / grid as f64).collect();
    let total = grid.pow(d as u32);
    let mut points = Vec::with_capacity(total * d);
    for idx in 0..total {
        let mut rem = idx;
        for k in 0..d {
            points.push(bounds.lo[k] + (rem % grid) as f64 * h[k] + 0.5 * h[k]);
            rem /= grid;
        }
    }
    let approx = kde.density_batch(&points);
    let exact: Vec<f64> = points.par_chunks(d).map(truth).collect();
    let sq: f64 = approx.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq * h.iter().product::<f64>()).sqrt())
}

/// `(1/n) Σᵢ δᵢᵀ (A ∗ u)(Xᵢ) δᵢ` with `δᵢ = s*(Xᵢ) − s(Xᵢ)`.
pub fn weighted_score_loss(
    s: &dyn ScoreModel,
    truth: &dyn ScoreModel,
    c: &MaxwellianCoefficients,
    e: &ParticleEnsemble,
) -> Result<f64> {
    let got = eval_at_particles(s, e)?;
    let want = eval_at_particles(truth, e)?;
    Ok(weighted_score_loss_from_values(&got, &want, c, e))
}

/// [`weighted_score_loss`] on precomputed score rows.
pub fn weighted_score_loss_from_values(
    got: &[f64],
    want: &[f64],
    c: &MaxwellianCoefficients,
    e: &ParticleEnsemble,
) -> f64 {
    let d = e.dim();
    let total: f64 = e
        .particles()
        .zip(got.chunks_exact(d).zip(want.chunks_exact(d)))
        .map(|(x, (g, w))| {
            let delta = DVector::from_iterator(d, w.iter().zip(g).map(|(a, b)| a - b));
            (delta.transpose() * c.convolution(x) * &delta)[(0, 0)]
        })
        .sum();
    total / e.len() as f64
}

/// Outcome of the `A ∗ u` sandwich check at one probe point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCheck {
    pub lower: f64,
    pub upper: f64,
    /// Extreme eigenvalues of the closed-form `A ∗ u`.
    pub analytic: (f64, f64),
    /// Extreme eigenvalues of `(1/n) Σⱼ A(x − Xⱼ)`.
    pub empirical: (f64, f64),
    pub pass: bool,
}

/// Relative slack for rounding in the sandwich comparisons.
const BOUND_SLACK: f64 = 1e-10;

/// Checks `lower·I ⪯ A ∗ u(x)` and `‖A ∗ u(x)‖₂ ≤ upper(x)` at each probe
/// (row-major), for both the closed form with coefficients `c` and the
/// direct average over the ensemble with the Maxwellian kernel.
pub fn lemma3_bound_check(
    e: &ParticleEnsemble,
    c: &MaxwellianCoefficients,
    probes: &[f64],
) -> Result<Vec<ProbeCheck>> {
    let d = e.dim();
    if c.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: c.dim(),
        });
    }
    let kernel = CollisionKernel::maxwellian(d, c.b_const);
    let lower = c.lower_bound();
    let inv_n = 1.0 / e.len() as f64;
    Ok(probes
        .chunks_exact(d)
        .map(|x| {
            let upper = c.upper_bound(x);
            let analytic = extreme_eigenvalues(&c.convolution(x));
            let mut sum = DMatrix::zeros(d, d);
            let mut z = vec![0.0; d];
            for xj in e.particles() {
                for k in 0..d {
                    z[k] = x[k] - xj[k];
                }
                sum += kernel.eval(&z);
            }
            let empirical = extreme_eigenvalues(&(sum * inv_n));
            let tol = BOUND_SLACK * upper.abs().max(1.0);
            let within = |(lo, hi): (f64, f64)| lo >= lower - tol && hi <= upper + tol;
            ProbeCheck {
                lower,
                upper,
                analytic,
                empirical,
                pass: within(analytic) && within(empirical),
            }
        })
        .collect())
}

fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    (eig.min(), eig.max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::GaussianSolution;
    use crate::dynamics::velocity_from_scores;
    use crate::sampling::{sample_gaussian, SimRng};
    use crate::score::{AffineScore, AnalyticScore};

    fn gaussian_ensemble(n: usize, var: Vec<f64>, seed: u64) -> ParticleEnsemble {
        let sol = GaussianSolution::new(vec![0.0; var.len()], var).unwrap();
        sample_gaussian(&mut SimRng::new(seed), n, &sol).unwrap()
    }

    #[test]
    fn covariance_error_values() {
        let e = gaussian_ensemble(50, vec![1.0, 2.0, 0.5], 1);
        let own = e.moments().second_moment;
        assert_eq!(covariance_frobenius_error(&e, &own).unwrap(), 0.0);
        let rows = vec![
            vec![2f64.sqrt(), 0.0, 0.0],
            vec![-(2f64.sqrt()), 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, -1.0],
        ];
        // second moment is diag(2, 1, 1) / 3, compare with diag(1, 1, 1) / 3
        let e = ParticleEnsemble::from_rows(&rows).unwrap();
        let err = covariance_frobenius_error(&e, &(DMatrix::identity(3, 3) / 3.0)).unwrap();
        assert!((err - 1.0 / 9.0).abs() < 1e-15);
        assert!(covariance_frobenius_error(&e, &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn normalized_score_error_values() {
        let e = gaussian_ensemble(40, vec![1.0, 1.0], 2);
        let truth = AnalyticScore::Gaussian(GaussianSolution::standard(2));
        let zero = AffineScore::scalar(0.0, vec![0.0; 2]);
        let double = AffineScore::scalar(-2.0, vec![0.0; 2]);
        assert_eq!(normalized_score_error(&truth, &truth, &e).unwrap(), 0.0);
        assert!((normalized_score_error(&zero, &truth, &e).unwrap() - 1.0).abs() < 1e-15);
        assert!((normalized_score_error(&double, &truth, &e).unwrap() - 1.0).abs() < 1e-15);
        assert!(normalized_score_error(&truth, &zero, &e).is_err());
    }

    #[test]
    fn kde_rejects_singular_covariance() {
        let e = ParticleEnsemble::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(kde_density(&e, &[0.0, 0.0]), Err(Error::SingularCovariance)));
        let line = ParticleEnsemble::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(Kde::new(&line).is_err());
    }

    #[test]
    fn kde_matches_direct_sum() {
        let e = gaussian_ensemble(37, vec![1.0, 0.3, 2.0], 3);
        let kde = Kde::new(&e).unwrap();
        let h = kde.bandwidth();
        let hinv = h.clone().try_inverse().unwrap();
        let c = (2.0 * std::f64::consts::PI).powf(-1.5) / h.determinant().sqrt() / 37.0;
        for x in [[0.0, 0.0, 0.0], [0.5, -1.0, 2.0]] {
            let want: f64 = e
                .particles()
                .map(|p| {
                    let z = DVector::from_iterator(3, x.iter().zip(p).map(|(a, b)| a - b));
                    c * (-0.5 * (z.transpose() * &hinv * &z)[(0, 0)]).exp()
                })
                .sum();
            assert!((kde.density(&x) / want - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn kde_integrates_to_one() {
        let e = gaussian_ensemble(200, vec![1.0, 0.5], 4);
        let bounds = DensityBox::around(&e.moments(), 9.0);
        let kde = Kde::new(&e).unwrap();
        let g = 200;
        let h: Vec<f64> = (0..2).map(|k| (bounds.hi[k] - bounds.lo[k]) / g as f64).collect();
        let mut pts = Vec::new();
        for i in 0..g {
            for j in 0..g {
                pts.push(bounds.lo[0] + (i as f64 + 0.5) * h[0]);
                pts.push(bounds.lo[1] + (j as f64 + 0.5) * h[1]);
            }
        }
        let integral: f64 = kde.density_batch(&pts).iter().sum::<f64>() * h[0] * h[1];
        assert!((integral - 1.0).abs() < 1e-6, "{integral}");
    }

    #[test]
    fn kde_bias_matches_convolution_at_origin() {
        // E[kde(0)] = N(0; 0, I + hI), h = n^{-1/7}
        let e = gaussian_ensemble(10_000, vec![1.0; 3], 5);
        let got = kde_density(&e, &[0.0; 3]).unwrap();
        assert!((got / 0.044_454_203_570_928_70 - 1.0).abs() < 0.06, "{got}");
    }

    #[test]
    fn l2_error_vanishes_against_own_kde() {
        let e = gaussian_ensemble(100, vec![1.0, 2.0, 0.5], 6);
        let kde = Kde::new(&e).unwrap();
        let b = DensityBox::standard(&e.moments());
        let err = l2_density_error(&e, &|x| kde.density(x), &b, 16).unwrap();
        assert_eq!(err, 0.0);
        let e4 = gaussian_ensemble(100, vec![1.0; 4], 6);
        assert!(matches!(
            l2_density_error(&e4, &|_| 0.0, &DensityBox::standard(&e4.moments()), 4),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn l2_error_is_quadrature_converged() {
        let e = gaussian_ensemble(500, vec![1.0, 1.0, 1.0], 7);
        let truth = GaussianSolution::standard(3);
        let b = DensityBox::standard(&truth.moments());
        let coarse = l2_density_error(&e, &|x| truth.density(x), &b, 32).unwrap();
        let fine = l2_density_error(&e, &|x| truth.density(x), &b, 64).unwrap();
        assert!((coarse / fine - 1.0).abs() < 0.01, "{coarse} {fine}");
    }

    #[test]
    fn entropy_rate_of_two_particles() {
        let e = ParticleEnsemble::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let s = [0.0, 0.0, 0.0, 1.0];
        let k = CollisionKernel::maxwellian(2, 1.0);
        let v = velocity_from_scores(&e, &k, &s).unwrap();
        assert!((entropy_rate(&s, &v) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn weighted_loss_respects_sandwich() {
        let e = gaussian_ensemble(300, vec![1.5, 1.0, 0.5], 8);
        let c = MaxwellianCoefficients::from_moments(&e.moments());
        let truth = AnalyticScore::Gaussian(GaussianSolution::new(vec![0.0; 3], vec![1.5, 1.0, 0.5]).unwrap());
        let approx = AffineScore::scalar(-0.8, vec![0.1, 0.0, -0.2]);
        assert_eq!(weighted_score_loss(&truth, &truth, &c, &e).unwrap(), 0.0);
        let got = eval_at_particles(&approx, &e).unwrap();
        let want = eval_at_particles(&truth, &e).unwrap();
        let loss = weighted_score_loss_from_values(&got, &want, &c, &e);
        let (mut mse, mut upper) = (0.0, 0.0);
        for (i, x) in e.particles().enumerate() {
            let sq: f64 = (0..3).map(|k| (want[3 * i + k] - got[3 * i + k]).powi(2)).sum();
            mse += sq / 300.0;
            upper += c.upper_bound(x) * sq / 300.0;
        }
        assert!(loss >= c.lower_bound() * mse && loss <= upper, "{loss} {mse} {upper}");
    }

    #[test]
    fn bound_check_on_standard_moments() {
        let rows: Vec<Vec<f64>> = (0..3)
            .flat_map(|k| {
                [1.0, -1.0].map(|s| {
                    let mut r = vec![0.0; 3];
                    r[k] = s * 3f64.sqrt();
                    r
                })
            })
            .collect();
        let e = ParticleEnsemble::from_rows(&rows).unwrap();
        let c = MaxwellianCoefficients::from_moments(&e.moments());
        let report = lemma3_bound_check(&e, &c, &[0.0; 3]).unwrap();
        assert!(report[0].pass);
        assert!((report[0].lower - 2.0).abs() < 1e-12);
        assert!((report[0].upper - 3.0).abs() < 1e-12);
        assert!((report[0].analytic.0 - 2.0).abs() < 1e-12);
        assert!((report[0].empirical.1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bound_check_degenerate_moments_pass_vacuously() {
        let e = ParticleEnsemble::from_rows(&[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]).unwrap();
        let c = MaxwellianCoefficients::from_moments(&e.moments());
        let report = lemma3_bound_check(&e, &c, &[0.3, 2.0, -1.0, 0.0, 0.0, 5.0]).unwrap();
        assert!(c.lower_bound().abs() < 1e-12);
        assert!(report.iter().all(|p| p.pass));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(Metric::from_name(m.name()), Some(m));
        }
        let mut r = MetricRecord::new(0.5);
        r.push(Metric::Cov11, 1.0);
        assert_eq!(r.get(Metric::Cov11), Some(1.0));
        assert_eq!(r.get(Metric::EnergyDrift), None);
        assert!(r.all_finite());
    }

    #[test]
    fn drifts_are_zero_for_identical_states() {
        let m = gaussian_ensemble(20, vec![1.0; 2], 9).moments();
        assert_eq!(momentum_drift(&m, &m), 0.0);
        assert_eq!(energy_drift(&m, &m), 0.0);
    }
}
