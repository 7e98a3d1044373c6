//! Pairwise Landau velocity field, forward-Euler stepping and the entropy
//! ledger.
//!
//! The velocity of particle `i` is `−(1/n) Σ_j A(Xᵢ − Xⱼ)(sᵢ − sⱼ)` with the
//! scores `s` evaluated once per step. The double sum runs over particles in
//! parallel; each particle accumulates its row in a fixed order (blocks of
//! eight lanes, lanes combined in a fixed tree), so the result does not
//! depend on the thread count.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use wide::f64x8;

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::kernel::{CollisionKernel, RadialPower};
use crate::score::{
    eval_at_particles, silverman_bandwidth, train_step, AdamState, BlobScore, Mlp, ScoreModel,
    TrainMode, TrainReport,
};
use crate::sampling::SimRng;
use crate::simd::{load, tree_sum};

const LANES: usize = 8;
/// Particles per parallel task.
const ROWS_PER_TASK: usize = 32;
/// Pair distances below this trigger a near-collision warning for singular kernels.
const NEAR_COLLISION_DISTANCE: f64 = 1e-10;

/// Per-particle velocities, row-major `n × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    d: usize,
    values: Vec<f64>,
}

impl VelocityField {
    pub fn new(d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || values.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: values.len(),
            });
        }
        Ok(Self { d, values })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    /// `Σᵢ v(Xᵢ)`.
    pub fn total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for row in self.values.chunks_exact(self.d) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Zero-padded structure-of-arrays copy of an `n × d` row-major array, with
/// rows padded to a multiple of [`LANES`].
fn padded_columns(rows: &[f64], n: usize, d: usize) -> (Vec<f64>, usize) {
    let np = n.div_ceil(LANES) * LANES;
    let mut out = vec![0.0; np * d];
    for (i, row) in rows.chunks_exact(d).enumerate() {
        for (k, &x) in row.iter().enumerate() {
            out[k * np + i] = x;
        }
    }
    (out, np)
}

struct Columns<'a> {
    x: &'a [f64],
    s: &'a [f64],
    mask: &'a [f64],
    np: usize,
    d: usize,
}

/// Weight function `|z|^γ` on eight squared distances at once, zero at the
/// origin.
trait RadialWeight: Copy {
    fn weights(self, r2: f64x8) -> f64x8;
}

#[derive(Clone, Copy)]
struct MaxwellianWeight;

impl RadialWeight for MaxwellianWeight {
    #[inline(always)]
    fn weights(self, _r2: f64x8) -> f64x8 {
        // At z = 0 the bracket r2·y − (z·y)z already vanishes.
        f64x8::splat(1.0)
    }
}

#[derive(Clone, Copy)]
struct CoulombWeight;

impl RadialWeight for CoulombWeight {
    #[inline(always)]
    fn weights(self, r2: f64x8) -> f64x8 {
        let one = f64x8::splat(1.0);
        let positive = r2.simd_gt(f64x8::ZERO);
        let safe = positive.select(r2, one);
        positive.select(one / (safe * safe.sqrt()), f64x8::ZERO)
    }
}

#[derive(Clone, Copy)]
struct GeneralWeight(RadialPower);

impl RadialWeight for GeneralWeight {
    #[inline(always)]
    fn weights(self, r2: f64x8) -> f64x8 {
        f64x8::new(r2.to_array().map(|v| self.0.eval(v)))
    }
}

/// `Σ_j A(xᵢ − xⱼ)(sᵢ − sⱼ) / B` for one particle in dimension `D`, written
/// to `out`. Returns the number of partners (itself included) closer than
/// the near-collision distance.
#[inline(always)]
fn accumulate_row<const D: usize, W: RadialWeight>(
    cols: &Columns,
    xi: &[f64],
    si: &[f64],
    radial: W,
    out: &mut [f64],
) -> usize {
    let np = cols.np;
    let close_r2 = f64x8::splat(NEAR_COLLISION_DISTANCE * NEAR_COLLISION_DISTANCE);
    let xv: [f64x8; D] = std::array::from_fn(|k| f64x8::splat(xi[k]));
    let sv: [f64x8; D] = std::array::from_fn(|k| f64x8::splat(si[k]));
    let xs: [&[f64]; D] = std::array::from_fn(|k| &cols.x[k * np..(k + 1) * np]);
    let ss: [&[f64]; D] = std::array::from_fn(|k| &cols.s[k * np..(k + 1) * np]);
    let mut acc = [f64x8::ZERO; D];
    let mut close = f64x8::ZERO;
    for b in (0..np).step_by(LANES) {
        let mut r2 = f64x8::ZERO;
        let mut zy = f64x8::ZERO;
        for k in 0..D {
            let z = xv[k] - load(xs[k], b);
            let y = sv[k] - load(ss[k], b);
            r2 = z.mul_add(z, r2);
            zy = z.mul_add(y, zy);
        }
        let mask = load(cols.mask, b);
        let w = radial.weights(r2) * mask;
        close += r2.simd_lt(close_r2).select(mask, f64x8::ZERO);
        // z and y are recomputed rather than kept, which keeps register
        // pressure flat in the dimension.
        for k in 0..D {
            let z = xv[k] - load(xs[k], b);
            let y = sv[k] - load(ss[k], b);
            acc[k] = w.mul_add(r2.mul_sub(y, zy * z), acc[k]);
        }
    }
    for (o, a) in out.iter_mut().zip(&acc) {
        *o = tree_sum(*a);
    }
    tree_sum(close) as usize
}

/// Same as [`accumulate_row`] for a dimension only known at run time.
fn accumulate_row_dyn<W: RadialWeight>(
    cols: &Columns,
    xi: &[f64],
    si: &[f64],
    radial: W,
    out: &mut [f64],
) -> usize {
    let (d, np) = (cols.d, cols.np);
    let close_r2 = f64x8::splat(NEAR_COLLISION_DISTANCE * NEAR_COLLISION_DISTANCE);
    let mut acc = vec![f64x8::ZERO; d];
    let mut close = f64x8::ZERO;
    for b in (0..np).step_by(LANES) {
        let mut r2 = f64x8::ZERO;
        let mut zy = f64x8::ZERO;
        for k in 0..d {
            let z = f64x8::splat(xi[k]) - load(cols.x, k * np + b);
            let y = f64x8::splat(si[k]) - load(cols.s, k * np + b);
            r2 = z.mul_add(z, r2);
            zy = z.mul_add(y, zy);
        }
        let mask = load(cols.mask, b);
        let w = radial.weights(r2) * mask;
        close += r2.simd_lt(close_r2).select(mask, f64x8::ZERO);
        for k in 0..d {
            let z = f64x8::splat(xi[k]) - load(cols.x, k * np + b);
            let y = f64x8::splat(si[k]) - load(cols.s, k * np + b);
            acc[k] = w.mul_add(r2.mul_sub(y, zy * z), acc[k]);
        }
    }
    for (o, a) in out.iter_mut().zip(&acc) {
        *o = tree_sum(*a);
    }
    tree_sum(close) as usize
}

/// Row kernel specialized to the ensemble dimension where possible.
fn row_for_dim<W: RadialWeight>(cols: &Columns, xi: &[f64], si: &[f64], radial: W, out: &mut [f64]) -> usize {
    macro_rules! dims {
        ($($d:literal),*) => {
            match cols.d {
                $($d => accumulate_row::<$d, W>(cols, xi, si, radial, out),)*
                _ => accumulate_row_dyn(cols, xi, si, radial, out),
            }
        };
    }
    dims!(1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12)
}

/// Landau velocity from cached per-particle scores (row-major `n × d`).
pub fn velocity_from_scores(
    e: &ParticleEnsemble,
    kernel: &CollisionKernel,
    scores: &[f64],
) -> Result<VelocityField> {
    let d = e.dim();
    let n = e.len();
    if kernel.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: kernel.dim(),
        });
    }
    if scores.len() != n * d {
        return Err(Error::DimensionMismatch {
            expected: n * d,
            got: scores.len(),
        });
    }
    if let Some(idx) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteScore { index: idx / d });
    }

    let (x, np) = padded_columns(e.as_slice(), n, d);
    let (s, _) = padded_columns(scores, n, d);
    let mut mask = vec![0.0; np];
    mask[..n].fill(1.0);
    let cols = Columns {
        x: &x,
        s: &s,
        mask: &mask,
        np,
        d,
    };
    let radial = kernel.radial_power();
    let scale = -kernel.b_const() / n as f64;

    let mut values = vec![0.0; n * d];
    let close: usize = values
        .par_chunks_mut(ROWS_PER_TASK * d)
        .enumerate()
        .map(|(task, block)| {
            let mut close = 0;
            for (r, out) in block.chunks_exact_mut(d).enumerate() {
                let i = task * ROWS_PER_TASK + r;
                let xi = e.particle(i);
                let si = &scores[i * d..(i + 1) * d];
                close += match radial {
                    RadialPower::Maxwellian => {
                        row_for_dim(&cols, xi, si, MaxwellianWeight, out)
                    }
                    RadialPower::Coulomb => {
                        row_for_dim(&cols, xi, si, CoulombWeight, out)
                    }
                    general => row_for_dim(&cols, xi, si, GeneralWeight(general), out),
                };
                for o in out.iter_mut() {
                    *o *= scale;
                }
            }
            close
        })
        .sum();

    // Each particle counts itself once.
    let close_pairs = (close - n) / 2;
    if close_pairs > 0 && !kernel.is_maxwellian() {
        log::warn!(
            "{close_pairs} particle pair(s) closer than {NEAR_COLLISION_DISTANCE:e}; the singular kernel is evaluated without regularization"
        );
    }
    VelocityField::new(d, values)
}

/// Landau velocity with the score model evaluated once per particle.
pub fn compute_velocity(
    e: &ParticleEnsemble,
    kernel: &CollisionKernel,
    s: &dyn ScoreModel,
) -> Result<VelocityField> {
    let scores = eval_at_particles(s, e)?;
    velocity_from_scores(e, kernel, &scores)
}

/// `Xᵢ ← Xᵢ + Δt v(Xᵢ)`. Positions are not checked for finiteness here.
pub fn euler_step(e: &ParticleEnsemble, v: &VelocityField, dt: f64) -> ParticleEnsemble {
    let mut next = e.clone();
    euler_step_in_place(&mut next, v, dt);
    next
}

fn euler_step_in_place(e: &mut ParticleEnsemble, v: &VelocityField, dt: f64) {
    assert_eq!(e.as_slice().len(), v.as_slice().len(), "euler_step: shape mismatch");
    for (x, vx) in e.as_mut_slice().iter_mut().zip(v.as_slice()) {
        *x += dt * vx;
    }
}

/// `(1/n) Σᵢ s(Xᵢ)·v(Xᵢ)`, nonpositive for a velocity built from `scores`.
pub fn entropy_rate(scores: &[f64], v: &VelocityField) -> f64 {
    let n = v.len();
    let total: f64 = scores
        .chunks_exact(v.dim())
        .zip(v.as_slice().chunks_exact(v.dim()))
        .map(|(s, vi)| s.iter().zip(vi).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    total / n as f64
}

/// `(Δt/n) Σᵢ s(Xᵢ)·v(Xᵢ)`.
pub fn entropy_increment(scores: &[f64], v: &VelocityField, dt: f64) -> f64 {
    dt * entropy_rate(scores, v)
}

/// Running total of estimated entropy increments.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EntropyLedger {
    pub total: f64,
    pub increments: Vec<f64>,
}

impl EntropyLedger {
    pub fn push(&mut self, increment: f64) {
        self.total += increment;
        self.increments.push(increment);
    }

    pub fn max_increment(&self) -> Option<f64> {
        self.increments.iter().copied().reduce(f64::max)
    }
}

/// Wall-clock seconds spent in each phase of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTimings {
    pub sampling: f64,
    pub initialization: f64,
    pub training: f64,
    pub score: f64,
    pub velocity: f64,
    pub integration: f64,
    pub diagnostics: f64,
}

/// How the blob bandwidth evolves during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlobBandwidth {
    /// Silverman bandwidth of the current ensemble, recomputed every step.
    PerStep,
    /// One bandwidth for the whole run.
    Fixed(f64),
}

/// Neural score trained on the fly.
#[derive(Debug, Clone)]
pub struct SbtmSolver {
    pub model: Mlp,
    pub optimizer: AdamState,
    pub noise: SimRng,
    pub alpha: f64,
    pub mode: TrainMode,
}

#[derive(Debug, Clone)]
pub enum ScoreSolver {
    Blob(BlobBandwidth),
    Sbtm(Box<SbtmSolver>),
}

/// State of the particles at one recorded time.
pub struct Frame<'a> {
    pub step: usize,
    pub time: f64,
    pub ensemble: &'a ParticleEnsemble,
    pub scores: &'a [f64],
    pub velocity: &'a VelocityField,
    /// `(1/n) Σ s·v` at this time.
    pub entropy_rate: f64,
    /// Sum of the entropy increments taken so far.
    pub cumulative_entropy: f64,
    pub training: Option<TrainReport>,
    pub bandwidth: Option<f64>,
}

/// A particle system being advanced in time.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub kernel: CollisionKernel,
    pub ensemble: ParticleEnsemble,
    pub t0: f64,
    pub dt: f64,
    pub solver: ScoreSolver,
    pub ledger: EntropyLedger,
    pub timings: PhaseTimings,
}

impl Simulation {
    pub fn new(
        kernel: CollisionKernel,
        ensemble: ParticleEnsemble,
        t0: f64,
        dt: f64,
        solver: ScoreSolver,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        if kernel.dim() != ensemble.dim() {
            return Err(Error::DimensionMismatch {
                expected: ensemble.dim(),
                got: kernel.dim(),
            });
        }
        Ok(Self {
            kernel,
            ensemble,
            t0,
            dt,
            solver,
            ledger: EntropyLedger::default(),
            timings: PhaseTimings::default(),
        })
    }

    /// Scores at the current particles, training the network first for SBTM.
    fn scores(&mut self) -> Result<(Vec<f64>, Option<TrainReport>, Option<f64>)> {
        match &mut self.solver {
            ScoreSolver::Sbtm(sbtm) => {
                let start = Instant::now();
                let report = train_step(
                    &mut sbtm.model,
                    &mut sbtm.optimizer,
                    &self.ensemble,
                    sbtm.alpha,
                    &mut sbtm.noise,
                    sbtm.mode,
                )?;
                self.timings.training += start.elapsed().as_secs_f64();
                let start = Instant::now();
                let scores = eval_at_particles(&sbtm.model, &self.ensemble)?;
                self.timings.score += start.elapsed().as_secs_f64();
                Ok((scores, Some(report), None))
            }
            ScoreSolver::Blob(mode) => {
                let start = Instant::now();
                let eps = match *mode {
                    BlobBandwidth::PerStep => silverman_bandwidth(&self.ensemble)?,
                    BlobBandwidth::Fixed(eps) => eps,
                };
                let scores = BlobScore::new(&self.ensemble, eps)?.eval_batch(self.ensemble.as_slice())?;
                self.timings.score += start.elapsed().as_secs_f64();
                Ok((scores, None, Some(eps)))
            }
        }
    }

    /// Advance `steps` Euler steps, calling `observe` at the start time and
    /// after every step (`steps + 1` frames). The score is refreshed for
    /// every frame, including the last one.
    pub fn run<F>(&mut self, steps: usize, mut observe: F) -> Result<()>
    where
        F: FnMut(&Frame) -> Result<()>,
    {
        for step in 0..=steps {
            let (scores, training, bandwidth) = self.scores()?;
            let start = Instant::now();
            let velocity = velocity_from_scores(&self.ensemble, &self.kernel, &scores)?;
            self.timings.velocity += start.elapsed().as_secs_f64();
            let rate = entropy_rate(&scores, &velocity);

            let start = Instant::now();
            observe(&Frame {
                step,
                time: self.t0 + step as f64 * self.dt,
                ensemble: &self.ensemble,
                scores: &scores,
                velocity: &velocity,
                entropy_rate: rate,
                cumulative_entropy: self.ledger.total,
                training,
                bandwidth,
            })?;
            self.timings.diagnostics += start.elapsed().as_secs_f64();
            if step == steps {
                break;
            }

            let start = Instant::now();
            self.ledger.push(self.dt * rate);
            euler_step_in_place(&mut self.ensemble, &velocity, self.dt);
            if let Some(index) = self.ensemble.first_non_finite() {
                return Err(Error::NonFinitePosition {
                    index,
                    step: step + 1,
                });
            }
            self.timings.integration += start.elapsed().as_secs_f64();
        }
        Ok(())
    }
}

/// Convenience wrapper around [`Simulation::run`].
pub fn run_simulation<F>(sim: &mut Simulation, steps: usize, observe: F) -> Result<()>
where
    F: FnMut(&Frame) -> Result<()>,
{
    sim.run(steps, observe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::GaussianSolution;
    use crate::sampling::sample_gaussian;
    use crate::score::{AffineScore, AnalyticScore};

    fn naive(e: &ParticleEnsemble, kernel: &CollisionKernel, s: &[f64]) -> Vec<f64> {
        let (n, d) = (e.len(), e.dim());
        let mut out = vec![0.0; n * d];
        let mut tmp = vec![0.0; d];
        for i in 0..n {
            for j in 0..n {
                let z: Vec<f64> = (0..d).map(|k| e.particle(i)[k] - e.particle(j)[k]).collect();
                let y: Vec<f64> = (0..d).map(|k| s[i * d + k] - s[j * d + k]).collect();
                kernel.apply(&z, &y, &mut tmp);
                for k in 0..d {
                    out[i * d + k] -= tmp[k] / n as f64;
                }
            }
        }
        out
    }

    fn random_case(n: usize, d: usize, seed: u64) -> (ParticleEnsemble, Vec<f64>) {
        let mut rng = SimRng::new(seed);
        let e = sample_gaussian(&mut rng, n, &GaussianSolution::standard(d)).unwrap();
        let s: Vec<f64> = (0..n * d).map(|_| rng.standard_normal()).collect();
        (e, s)
    }

    #[test]
    fn two_particle_worked_example() {
        let e = ParticleEnsemble::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0; 3]]).unwrap();
        let s = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let v = velocity_from_scores(&e, &CollisionKernel::maxwellian(3, 1.0), &s).unwrap();
        assert_eq!(v.as_slice(), &[0.0, -0.5, 0.0, 0.0, 0.5, 0.0]);
        assert_eq!(entropy_increment(&s, &v, 0.1), -0.1 / 4.0);
        assert_eq!(entropy_rate(&s, &v), -0.25);
    }

    #[test]
    fn matches_naive_double_loop() {
        for (seed, (n, d)) in [(37, 3), (8, 3), (1, 2), (21, 10), (9, 1)].into_iter().enumerate() {
            let (e, s) = random_case(n, d, seed as u64);
            for kernel in [
                CollisionKernel::maxwellian(d, 1.0 / 24.0),
                CollisionKernel::new(d, (-3.0_f64).max(-(d as f64) - 1.0), 1.0).unwrap(),
                CollisionKernel::new(d, -1.5, 2.0).unwrap(),
                CollisionKernel::new(d, 1.0, 0.5).unwrap(),
            ] {
                let fast = velocity_from_scores(&e, &kernel, &s).unwrap();
                for (a, b) in fast.as_slice().iter().zip(naive(&e, &kernel, &s)) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn momentum_of_velocity_vanishes() {
        let (e, s) = random_case(101, 3, 5);
        let v = velocity_from_scores(&e, &CollisionKernel::coulomb(3).unwrap(), &s).unwrap();
        let scale = v.as_slice().iter().map(|x| x.abs()).sum::<f64>();
        assert!(v.total().iter().all(|t| t.abs() <= 1e-12 * scale));
    }

    #[test]
    fn affine_scores_give_zero_velocity() {
        let (e, _) = random_case(64, 3, 6);
        let s = AffineScore::scalar(-0.7, vec![0.3, -1.0, 2.0]);
        for kernel in [CollisionKernel::maxwellian(3, 1.0), CollisionKernel::coulomb(3).unwrap()] {
            let v = compute_velocity(&e, &kernel, &s).unwrap();
            assert!(v.max_abs() <= 1e-12, "{}", v.max_abs());
        }
        let g = AnalyticScore::Gaussian(GaussianSolution::standard(3));
        let v = compute_velocity(&e, &CollisionKernel::maxwellian(3, 1.0), &g).unwrap();
        assert!(v.max_abs() <= 1e-12);
    }

    #[test]
    fn entropy_increment_is_nonpositive() {
        for seed in 0..100 {
            let (e, s) = random_case(20, 3, 1000 + seed);
            let v = velocity_from_scores(&e, &CollisionKernel::coulomb(3).unwrap(), &s).unwrap();
            assert!(entropy_increment(&s, &v, 0.01) <= 1e-12);
        }
    }

    #[test]
    fn non_finite_score_names_particle() {
        let (e, mut s) = random_case(5, 3, 2);
        s[3 * 3 + 1] = f64::NAN;
        let r = velocity_from_scores(&e, &CollisionKernel::maxwellian(3, 1.0), &s);
        assert!(matches!(r, Err(Error::NonFiniteScore { index: 3 })));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (e, s) = random_case(300, 3, 8);
        let kernel = CollisionKernel::coulomb(3).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| velocity_from_scores(&e, &kernel, &s).unwrap());
        let b = three.install(|| velocity_from_scores(&e, &kernel, &s).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_velocity_leaves_ensemble() {
        let (e, _) = random_case(10, 3, 3);
        let v = VelocityField::new(3, vec![0.0; 30]).unwrap();
        assert_eq!(euler_step(&e, &v, 0.5), e);
    }

    #[test]
    fn zero_steps_records_initial_frame_only() {
        let (e, _) = random_case(50, 3, 4);
        let mut sim = Simulation::new(
            CollisionKernel::maxwellian(3, 1.0),
            e.clone(),
            1.0,
            0.1,
            ScoreSolver::Blob(BlobBandwidth::PerStep),
        )
        .unwrap();
        let mut times = Vec::new();
        sim.run(0, |f| {
            times.push(f.time);
            Ok(())
        })
        .unwrap();
        assert_eq!(times, vec![1.0]);
        assert_eq!(sim.ensemble, e);
        assert!(sim.ledger.increments.is_empty());
    }

    #[test]
    fn blob_run_conserves_momentum_and_decreases_entropy() {
        let (e, _) = random_case(200, 3, 5);
        let p0 = e.moments().momentum;
        let mut sim = Simulation::new(
            CollisionKernel::maxwellian(3, 1.0),
            e,
            0.0,
            0.01,
            ScoreSolver::Blob(BlobBandwidth::PerStep),
        )
        .unwrap();
        let mut frames = 0;
        sim.run(20, |_| {
            frames += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(frames, 21);
        assert!((sim.ensemble.moments().momentum - p0).norm() < 1e-13);
        assert!(sim.ledger.increments.iter().all(|x| *x <= 1e-12));
        assert!(sim.ledger.total < 0.0);
    }
}
