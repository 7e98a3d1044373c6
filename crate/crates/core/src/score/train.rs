use super::adam::AdamState;
use super::loss::{denoising_loss_and_grad, implicit_loss, mse_loss_and_grad};
use super::mlp::Mlp;
use super::ScoreModel;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::sampling::SimRng;

/// How many optimizer steps a training round takes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainMode {
    /// Exactly this many Adam steps on the denoising loss.
    Fixed(usize),
    /// Adam steps on the denoising loss until the exact implicit loss stops
    /// decreasing: it is checked every `check_every` steps and training ends
    /// after `patience` consecutive checks that improve by less than
    /// `min_rel_improvement`, or at `max_steps`.
    Adaptive {
        check_every: usize,
        patience: usize,
        min_rel_improvement: f64,
        max_steps: usize,
    },
}

impl TrainMode {
    pub const fn adaptive() -> Self {
        TrainMode::Adaptive {
            check_every: 5,
            patience: 2,
            min_rel_improvement: 1e-3,
            max_steps: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    /// Denoising loss at the last step taken (NaN when no step was taken).
    pub last_loss: f64,
}

fn adam_denoising_step(
    m: &mut Mlp,
    opt: &mut AdamState,
    points: &[f64],
    alpha: f64,
    rng: &mut SimRng,
    noise: &mut [f64],
) -> f64 {
    rng.fill_standard_normal(noise);
    let (loss, grad) = denoising_loss_and_grad(m, points, alpha, noise);
    opt.update(m.params_mut(), &grad);
    loss
}

/// One training round of the neural score on the current particles, with a
/// fresh noise draw for every step.
pub fn train_step(
    m: &mut Mlp,
    opt: &mut AdamState,
    batch: &ParticleEnsemble,
    alpha: f64,
    rng: &mut SimRng,
    mode: TrainMode,
) -> Result<TrainReport> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("denoising alpha must be positive, got {alpha}")));
    }
    let points = batch.as_slice();
    let mut noise = vec![0.0; points.len()];
    let mut report = TrainReport {
        steps: 0,
        last_loss: f64::NAN,
    };
    match mode {
        TrainMode::Fixed(k) => {
            for _ in 0..k {
                report.last_loss = adam_denoising_step(m, opt, points, alpha, rng, &mut noise);
                report.steps += 1;
            }
        }
        TrainMode::Adaptive {
            check_every,
            patience,
            min_rel_improvement,
            max_steps,
        } => {
            let check_every = check_every.max(1);
            let mut previous = implicit_loss(m, points)?;
            let mut stalls = 0;
            while report.steps < max_steps {
                let chunk = check_every.min(max_steps - report.steps);
                for _ in 0..chunk {
                    report.last_loss = adam_denoising_step(m, opt, points, alpha, rng, &mut noise);
                }
                report.steps += chunk;
                let current = implicit_loss(m, points)?;
                if previous - current >= min_rel_improvement * previous.abs() {
                    stalls = 0;
                } else {
                    stalls += 1;
                    if stalls >= patience {
                        break;
                    }
                }
                previous = current;
            }
        }
    }
    Ok(report)
}

/// Settings for fitting the network to a known initial score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    /// Stop once `MSE / mean |target|²` drops below this.
    pub threshold: f64,
    pub max_steps: usize,
    pub learning_rate: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            threshold: 1e-3,
            max_steps: 100_000,
            learning_rate: 1e-3,
        }
    }
}

/// Outcome of [`initialize_score`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitReport {
    pub steps: usize,
    pub relative_loss: f64,
}

/// Fit `m` to the analytic score `target` at the particles of `e` by Adam on
/// the mean-squared error.
pub fn initialize_score(
    m: &mut Mlp,
    e: &ParticleEnsemble,
    target: &dyn ScoreModel,
    opts: InitOptions,
) -> Result<InitReport> {
    let points = e.as_slice();
    let targets = target.eval_batch(points)?;
    let n = e.len() as f64;
    let scale = targets.iter().map(|v| v * v).sum::<f64>() / n;
    let relative = |loss: f64| {
        if loss == 0.0 {
            0.0
        } else {
            loss / scale
        }
    };
    let mut opt = AdamState::new(m.param_count(), opts.learning_rate);
    let mut steps = 0;
    loop {
        let (loss, grad) = mse_loss_and_grad(m, points, &targets);
        let rel = relative(loss);
        if rel < opts.threshold {
            return Ok(InitReport {
                steps,
                relative_loss: rel,
            });
        }
        if steps >= opts.max_steps || !rel.is_finite() {
            return Err(Error::TrainingNonConvergence { steps, loss: rel });
        }
        opt.update(m.params_mut(), &grad);
        steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::GaussianSolution;
    use crate::sampling::sample_gaussian;
    use crate::score::AffineScore;

    fn gaussian_batch(n: usize, seed: u64) -> ParticleEnsemble {
        sample_gaussian(&mut SimRng::new(seed), n, &GaussianSolution::standard(3)).unwrap()
    }

    #[test]
    fn zero_steps_leave_parameters() {
        let mut rng = SimRng::new(1);
        let mut m = Mlp::new(3, &[8], &mut rng).unwrap();
        let before = m.clone();
        let mut opt = AdamState::new(m.param_count(), 4e-4);
        let r = train_step(&mut m, &mut opt, &gaussian_batch(10, 2), 0.4, &mut rng, TrainMode::Fixed(0)).unwrap();
        assert_eq!(r.steps, 0);
        assert_eq!(m, before);
    }

    #[test]
    fn fixed_mode_takes_exactly_k_steps() {
        let mut rng = SimRng::new(1);
        let mut m = Mlp::new(3, &[8], &mut rng).unwrap();
        let mut opt = AdamState::new(m.param_count(), 4e-4);
        let r = train_step(&mut m, &mut opt, &gaussian_batch(10, 2), 0.4, &mut rng, TrainMode::Fixed(25)).unwrap();
        assert_eq!(r.steps, 25);
        assert_eq!(opt.steps(), 25);
    }

    #[test]
    fn adaptive_mode_respects_cap() {
        let mut rng = SimRng::new(1);
        let mut m = Mlp::new(3, &[8], &mut rng).unwrap();
        let mut opt = AdamState::new(m.param_count(), 4e-4);
        let mode = TrainMode::Adaptive {
            check_every: 5,
            patience: 2,
            min_rel_improvement: 1e-3,
            max_steps: 40,
        };
        let r = train_step(&mut m, &mut opt, &gaussian_batch(50, 2), 0.4, &mut rng, mode).unwrap();
        assert!(r.steps <= 40 && r.steps % 5 == 0 && r.steps >= 10, "{}", r.steps);
    }

    #[test]
    fn initialize_trivial_cases() {
        let e = gaussian_batch(20, 3);
        let mut zero = Mlp::zeros(vec![3, 4, 3]).unwrap();
        let target = AffineScore::scalar(0.0, vec![0.0; 3]);
        let r = initialize_score(&mut zero, &e, &target, InitOptions::default()).unwrap();
        assert_eq!(r.steps, 0);

        let mut rng = SimRng::new(4);
        let mut m = Mlp::new(3, &[4], &mut rng).unwrap();
        let before = m.clone();
        let opts = InitOptions {
            threshold: f64::INFINITY,
            ..InitOptions::default()
        };
        let truth = AffineScore::scalar(-1.0, vec![0.0; 3]);
        assert_eq!(initialize_score(&mut m, &e, &truth, opts).unwrap().steps, 0);
        assert_eq!(m, before);
    }

    #[test]
    fn initialize_reports_non_convergence() {
        let e = gaussian_batch(20, 3);
        let mut rng = SimRng::new(4);
        let mut m = Mlp::new(3, &[4], &mut rng).unwrap();
        let opts = InitOptions {
            threshold: 1e-12,
            max_steps: 3,
            learning_rate: 1e-3,
        };
        let truth = AffineScore::scalar(-1.0, vec![0.0; 3]);
        match initialize_score(&mut m, &e, &truth, opts) {
            Err(Error::TrainingNonConvergence { steps, loss }) => {
                assert_eq!(steps, 3);
                assert!(loss > 1e-12);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
