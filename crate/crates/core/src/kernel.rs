//! The Landau collision kernel `A(z) = B |z|^γ (|z|² I − z ⊗ z)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Matrix-valued collision kernel parameterized by the exponent `γ`.
///
/// `γ = 0` gives Maxwellian molecules and `γ = −3` (with `d = 3`) Coulomb
/// interactions. `A(0)` is the zero matrix for every `γ`, which removes the
/// self-interaction term from pairwise sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionKernel {
    gamma: f64,
    d: usize,
    b_const: f64,
}

/// Exponent dispatch for the radial prefactor `|z|^γ`, evaluated from `|z|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum RadialPower {
    Maxwellian,
    Coulomb,
    General(f64),
}

impl RadialPower {
    /// `|z|^γ` for `r2 = |z|² > 0`, and zero at the origin.
    #[inline(always)]
    pub(crate) fn eval(self, r2: f64) -> f64 {
        if r2 > 0.0 {
            match self {
                RadialPower::Maxwellian => 1.0,
                RadialPower::Coulomb => 1.0 / (r2 * r2.sqrt()),
                RadialPower::General(half_gamma) => r2.powf(half_gamma),
            }
        } else {
            0.0
        }
    }
}

impl CollisionKernel {
    pub fn new(d: usize, gamma: f64, b_const: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("kernel dimension must be at least 1".into()));
        }
        let lo = -(d as f64) - 1.0;
        if !(gamma.is_finite() && (lo..=1.0).contains(&gamma)) {
            return Err(Error::Domain(format!(
                "gamma={gamma} outside [{lo}, 1] for d={d}"
            )));
        }
        if !(b_const.is_finite() && b_const > 0.0) {
            return Err(Error::Domain(format!(
                "kernel constant must be positive, got {b_const}"
            )));
        }
        Ok(Self { gamma, d, b_const })
    }

    /// Maxwellian molecules, `γ = 0`.
    pub fn maxwellian(d: usize, b_const: f64) -> Self {
        Self::new(d, 0.0, b_const).expect("valid maxwellian kernel")
    }

    /// Coulomb interactions, `γ = −3`.
    pub fn coulomb(d: usize) -> Result<Self> {
        Self::new(d, -3.0, 1.0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn b_const(&self) -> f64 {
        self.b_const
    }

    pub fn is_maxwellian(&self) -> bool {
        self.gamma == 0.0
    }

    pub(crate) fn radial_power(&self) -> RadialPower {
        if self.gamma == 0.0 {
            RadialPower::Maxwellian
        } else if self.gamma == -3.0 {
            RadialPower::Coulomb
        } else {
            RadialPower::General(0.5 * self.gamma)
        }
    }

    /// Scalar prefactor `B |z|^γ` given `|z|²` (zero at the origin).
    #[inline]
    pub fn prefactor(&self, r2: f64) -> f64 {
        self.b_const * self.radial_power().eval(r2)
    }

    /// `A(z)` as a dense `d × d` matrix.
    pub fn eval(&self, z: &[f64]) -> DMatrix<f64> {
        assert_eq!(z.len(), self.d, "kernel_eval: dimension mismatch");
        let r2: f64 = z.iter().map(|x| x * x).sum();
        let w = self.prefactor(r2);
        DMatrix::from_fn(self.d, self.d, |i, j| {
            let delta = if i == j { r2 } else { 0.0 };
            w * (delta - z[i] * z[j])
        })
    }

    /// `A(z) y` without forming the matrix.
    #[inline]
    pub fn apply(&self, z: &[f64], y: &[f64], out: &mut [f64]) {
        let r2: f64 = z.iter().map(|x| x * x).sum();
        let zy: f64 = z.iter().zip(y).map(|(a, b)| a * b).sum();
        let w = self.prefactor(r2);
        for ((o, &zk), &yk) in out.iter_mut().zip(z).zip(y) {
            *o = w * (r2 * yk - zk * zy);
        }
    }
}

/// Free-function form of [`CollisionKernel::eval`].
pub fn kernel_eval(kernel: &CollisionKernel, z: &[f64]) -> DMatrix<f64> {
    kernel.eval(z)
}
