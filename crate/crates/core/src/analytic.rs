//! Closed-form reference solutions and the Maxwellian-molecule coefficients.
//!
//! Two analytic references are available: the isotropic BKW solution of the
//! Maxwellian Landau equation and (anisotropic) Gaussians, whose second moment
//! relaxes exponentially to the isotropic equilibrium. For `γ = 0` the
//! collision operator is a Fokker-Planck operator whose drift and diffusion
//! depend on the distribution only through its first two moments; those
//! coefficients live in [`MaxwellianCoefficients`].
//!
//! Times passed to [`second_moment_evolution`] are in units where the kernel
//! constant is one; scale by `B` to use another kernel constant.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::MomentState;
use crate::error::{Error, Result};

/// Kernel constant used for the BKW benchmark.
pub const BKW_KERNEL_CONSTANT: f64 = 1.0 / 24.0;
/// Default BKW starting time, just above the singular time for `d = 3`.
pub const BKW_DEFAULT_T0: f64 = 5.5;

/// The BKW solution `u(x) = (2πK)^{-d/2} exp(-|x|²/2K) (P + Q|x|²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BkwSolution {
    d: usize,
    b_const: f64,
    t: f64,
    k: f64,
    p: f64,
    q: f64,
}

impl BkwSolution {
    /// Evaluate the coefficients at time `t`; `t = ∞` gives the standard normal.
    ///
    /// Fails with [`Error::PreSingularTime`] unless `P(t) > 0`.
    pub fn new(d: usize, b_const: f64, t: f64) -> Result<Self> {
        if d == 0 || !(b_const > 0.0) || t.is_nan() {
            return Err(Error::Domain(format!(
                "invalid BKW parameters d={d}, B={b_const}, t={t}"
            )));
        }
        let df = d as f64;
        let k = -(-2.0 * b_const * (df - 1.0) * t).exp_m1();
        let p = ((df + 2.0) * k - df) / (2.0 * k);
        let q = (1.0 - k) / (2.0 * k * k);
        if !(p > 0.0) {
            return Err(Error::PreSingularTime { t, p });
        }
        Ok(Self {
            d,
            b_const,
            t,
            k,
            p,
            q,
        })
    }

    /// Time at which `P` vanishes and the score is singular.
    pub fn singular_time(d: usize, b_const: f64) -> f64 {
        let df = d as f64;
        (df / 2.0 + 1.0).ln() / (2.0 * b_const * (df - 1.0))
    }

    /// The same solution advanced to time `t`.
    pub fn at(&self, t: f64) -> Result<Self> {
        Self::new(self.d, self.b_const, t)
    }

    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn time(&self) -> f64 {
        self.t
    }
    pub fn b_const(&self) -> f64 {
        self.b_const
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (2.0 * PI * self.k).powf(-0.5 * self.d as f64)
            * (-r2 / (2.0 * self.k)).exp()
            * (self.p + self.q * r2)
    }

    /// Radial profile `g(|x|²)` with `score(x) = g(|x|²) x`.
    fn radial(&self, r2: f64) -> Result<f64> {
        let poly = self.p + self.q * r2;
        if !(poly > 0.0) {
            return Err(Error::Domain(format!(
                "BKW score singular: P + Q|x|^2 = {poly}"
            )));
        }
        Ok(-1.0 / self.k + 2.0 * self.q / poly)
    }

    /// `∇ log u(x) = -x/K + 2Qx / (P + Q|x|²)`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let g = self.radial(r2)?;
        Ok(x.iter().map(|v| g * v).collect())
    }

    /// `∇ · ∇ log u(x)`.
    pub fn score_divergence(&self, x: &[f64]) -> Result<f64> {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let g = self.radial(r2)?;
        let poly = self.p + self.q * r2;
        let dg = -2.0 * self.q * self.q / (poly * poly);
        Ok(self.d as f64 * g + 2.0 * r2 * dg)
    }

    /// Diagonal entry of the second moment, `KP + (d+2)QK²` (equal to one).
    pub fn second_moment_diagonal(&self) -> f64 {
        self.k * self.p + (self.d as f64 + 2.0) * self.q * self.k * self.k
    }

    pub fn second_moment(&self) -> DMatrix<f64> {
        DMatrix::identity(self.d, self.d) * self.second_moment_diagonal()
    }

    pub fn moments(&self) -> MomentState {
        let second_moment = self.second_moment();
        MomentState {
            mass: 1.0,
            momentum: DVector::zeros(self.d),
            energy_times_two: second_moment.trace(),
            second_moment,
        }
    }
}

/// Density of `BkwSolution` at `x`.
pub fn bkw_density(sol: &BkwSolution, x: &[f64]) -> f64 {
    sol.density(x)
}

/// Score of `BkwSolution` at `x`.
pub fn bkw_score(sol: &BkwSolution, x: &[f64]) -> Result<Vec<f64>> {
    sol.score(x)
}

/// A Gaussian `N(V, diag(σ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSolution {
    mean: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianSolution {
    pub fn new(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() || mean.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: variances.len(),
            });
        }
        if variances.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Domain(format!(
                "Gaussian variances must be positive, got {variances:?}"
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Domain("Gaussian mean must be finite".into()));
        }
        Ok(Self { mean, variances })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            variances: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let mut quad = 0.0;
        let mut log_det = 0.0;
        for ((xi, m), s) in x.iter().zip(&self.mean).zip(&self.variances) {
            quad += (xi - m) * (xi - m) / s;
            log_det += s.ln();
        }
        (-0.5 * (quad + log_det + self.dim() as f64 * (2.0 * PI).ln())).exp()
    }

    /// `-Σ₀⁻¹ (x - V)`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.variances)
            .map(|((xi, m), s)| -(xi - m) / s)
            .collect()
    }

    pub fn score_divergence(&self) -> f64 {
        -self.variances.iter().map(|s| 1.0 / s).sum::<f64>()
    }

    pub fn moments(&self) -> MomentState {
        let v = DVector::from_column_slice(&self.mean);
        let second_moment =
            DMatrix::from_diagonal(&DVector::from_column_slice(&self.variances)) + &v * v.transpose();
        MomentState {
            mass: 1.0,
            momentum: v,
            energy_times_two: second_moment.trace(),
            second_moment,
        }
    }
}

/// Score of a `GaussianSolution` at `x`.
pub fn gaussian_score(sol: &GaussianSolution, x: &[f64]) -> Vec<f64> {
    sol.score(x)
}

/// Equilibrium second moment `Σ(∞)_{ij} = (δ_{ij}(2E − |V|²) + d V_i V_j) / d`.
pub fn equilibrium_second_moment(v: &DVector<f64>, two_e: f64) -> DMatrix<f64> {
    let d = v.len();
    let df = d as f64;
    DMatrix::identity(d, d) * ((two_e - v.norm_squared()) / df) + v * v.transpose()
}

/// Second-moment matrix of the Maxwellian Landau solution at time `t`
/// (kernel constant one): `Σ(t) = Σ(∞) − (Σ(∞) − Σ(0)) e^{−4dt}`.
pub fn second_moment_evolution(
    sigma0: &DMatrix<f64>,
    v: &DVector<f64>,
    two_e: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    let d = v.len();
    if sigma0.nrows() != d || sigma0.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: sigma0.nrows(),
        });
    }
    let mismatch = (sigma0.trace() - two_e).abs();
    if mismatch > 1e-8 * two_e.abs().max(1.0) {
        return Err(Error::Domain(format!(
            "trace(Σ0)={} inconsistent with 2E={two_e}",
            sigma0.trace()
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("negative time {t}")));
    }
    if t == 0.0 {
        return Ok(sigma0.clone());
    }
    let inf = equilibrium_second_moment(v, two_e);
    let decay = (-4.0 * d as f64 * t).exp();
    Ok(&inf - (&inf - sigma0) * decay)
}

/// Moments feeding the closed-form `A ∗ u` for Maxwellian molecules.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxwellianCoefficients {
    pub v: DVector<f64>,
    pub two_e: f64,
    pub sigma_t: DMatrix<f64>,
    /// Kernel constant `B` multiplying every coefficient.
    pub b_const: f64,
}

impl MaxwellianCoefficients {
    pub fn from_moments(m: &MomentState) -> Self {
        Self {
            v: m.momentum.clone(),
            two_e: m.second_moment.trace(),
            sigma_t: m.second_moment.clone(),
            b_const: 1.0,
        }
    }

    pub fn with_kernel_constant(mut self, b_const: f64) -> Self {
        self.b_const = b_const;
        self
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.sigma_t - &self.v * self.v.transpose()
    }

    /// `(A ∗ u)(x) = B[δ(|x|² + 2E − 2V·x) + V xᵀ + x Vᵀ − x xᵀ − Σ]`.
    pub fn convolution(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let xv = DVector::from_column_slice(x);
        let diag = xv.norm_squared() + self.two_e - 2.0 * self.v.dot(&xv);
        let mut out = DMatrix::identity(d, d) * diag;
        out += &self.v * xv.transpose() + &xv * self.v.transpose() - &xv * xv.transpose();
        out -= &self.sigma_t;
        out *= self.b_const;
        // symmetrize rounding
        let t = out.transpose();
        (out + t) * 0.5
    }

    /// `b(x) = −B(d−1)(x − V)`.
    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let dm1 = self.dim() as f64 - 1.0;
        x.iter()
            .zip(self.v.iter())
            .map(|(xi, vi)| -self.b_const * dm1 * (xi - vi))
            .collect()
    }

    /// Lower bound `tr(cov) − ‖cov‖₂` on `‖A ∗ u(x)‖₂` (scaled by `B`).
    pub fn lower_bound(&self) -> f64 {
        let cov = self.covariance();
        self.b_const * (cov.trace() - spectral_norm(&cov))
    }

    /// Upper bound `2E + |x − V|²` on `‖A ∗ u(x)‖₂` (scaled by `B`).
    pub fn upper_bound(&self, x: &[f64]) -> f64 {
        let dist2: f64 = x
            .iter()
            .zip(self.v.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.b_const * (self.two_e + dist2)
    }
}

/// Closed-form `A ∗ u` at `x`.
pub fn maxwellian_convolution(c: &MaxwellianCoefficients, x: &[f64]) -> DMatrix<f64> {
    c.convolution(x)
}

/// Drift `A ∗ ∇u = −(d−1)(x − V)`.
pub fn maxwellian_drift(c: &MaxwellianCoefficients, x: &[f64]) -> Vec<f64> {
    c.drift(x)
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, l| acc.max(l.abs()))
}
