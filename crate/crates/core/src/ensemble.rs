//! Particle ensembles and their moments.
//!
//! Every particle carries the same weight `1/n`, so there is no weight field:
//! the empirical measure is `(1/n) Σ δ_{X_i}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `n` particles in `d` dimensions, stored row-major (`positions[i * d + k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    d: usize,
    positions: Vec<f64>,
}

impl ParticleEnsemble {
    /// Build an ensemble from row-major coordinates.
    ///
    /// Rejects `d = 0`, a length that is not a multiple of `d`, an empty
    /// ensemble and non-finite coordinates.
    pub fn new(d: usize, positions: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("dimension must be at least 1".into()));
        }
        if positions.is_empty() || positions.len() % d != 0 {
            return Err(Error::Domain(format!(
                "{} coordinates do not form a non-empty set of {d}-vectors",
                positions.len()
            )));
        }
        if let Some(idx) = positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinitePosition {
                index: idx / d,
                step: 0,
            });
        }
        Ok(Self { d, positions })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Self::new(d, rows.concat())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len() / self.d
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn particles(&self) -> std::slice::ChunksExact<'_, f64> {
        self.positions.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.positions
    }

    /// Mutable access for integrators; callers are responsible for keeping
    /// coordinates finite (see [`ParticleEnsemble::first_non_finite`]).
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.positions
            .iter()
            .position(|x| !x.is_finite())
            .map(|idx| idx / self.d)
    }

    /// Copy with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            d: self.d,
            positions: self.positions.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn moments(&self) -> MomentState {
        ensemble_moments(self)
    }
}

/// Mass, momentum, energy and second-moment matrix of a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub mass: f64,
    /// Mean velocity `V`.
    pub momentum: DVector<f64>,
    /// `2E`, the mean squared norm.
    pub energy_times_two: f64,
    /// `Σ = E[x ⊗ x]`.
    pub second_moment: DMatrix<f64>,
}

impl MomentState {
    pub fn dim(&self) -> usize {
        self.momentum.len()
    }

    /// `Σ − V ⊗ V`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.second_moment - &self.momentum * self.momentum.transpose()
    }
}

/// Empirical moments of the ensemble with uniform weights `1/n`.
///
/// `2E` is taken as the trace of the accumulated second moment so the two
/// agree to the last bit.
pub fn ensemble_moments(e: &ParticleEnsemble) -> MomentState {
    let d = e.dim();
    let inv_n = 1.0 / e.len() as f64;
    let mut mean = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for x in e.particles() {
        for a in 0..d {
            mean[a] += x[a];
            for b in a..d {
                second[(a, b)] += x[a] * x[b];
            }
        }
    }
    mean *= inv_n;
    for a in 0..d {
        for b in a..d {
            let v = second[(a, b)] * inv_n;
            second[(a, b)] = v;
            second[(b, a)] = v;
        }
    }
    let energy_times_two = second.trace();
    MomentState {
        mass: 1.0,
        momentum: mean,
        energy_times_two,
        second_moment: second,
    }
}

/// `Σ − V ⊗ V` for a moment state.
pub fn covariance(m: &MomentState) -> DMatrix<f64> {
    m.covariance()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> ParticleEnsemble {
        ParticleEnsemble::from_rows(&[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]).unwrap()
    }

    #[test]
    fn symmetric_pair_moments() {
        let m = pair().moments();
        assert_eq!(m.mass, 1.0);
        assert_eq!(m.momentum.as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(m.energy_times_two, 1.0);
        assert_eq!(m.second_moment, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0])));
        assert_eq!(
            covariance(&m),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0]))
        );
    }

    #[test]
    fn single_particle_moments() {
        let x = vec![0.5, -2.0, 3.0];
        let e = ParticleEnsemble::from_rows(&[x.clone()]).unwrap();
        let m = e.moments();
        let xv = DVector::from_vec(x);
        assert_eq!(m.momentum, xv);
        assert_eq!(m.energy_times_two, xv.norm_squared());
        assert_eq!(m.second_moment, &xv * xv.transpose());
    }

    #[test]
    fn covariance_subtracts_mean() {
        let m = MomentState {
            mass: 1.0,
            momentum: DVector::from_vec(vec![1.0, 0.0, 0.0]),
            energy_times_two: 4.0,
            second_moment: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 1.0])),
        };
        assert_eq!(m.covariance(), DMatrix::identity(3, 3));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ParticleEnsemble::new(0, vec![]).is_err());
        assert!(ParticleEnsemble::new(3, vec![1.0, 2.0]).is_err());
        assert!(matches!(
            ParticleEnsemble::new(2, vec![0.0, 1.0, f64::NAN, 0.0]),
            Err(Error::NonFinitePosition { index: 1, .. })
        ));
        assert!(ParticleEnsemble::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
