//! Runs one configured experiment and writes its artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use super::config::{ExperimentConfig, InitialCondition, SolverConfig};
use crate::analytic::{
    equilibrium_second_moment, second_moment_evolution, BkwSolution, GaussianSolution,
    MaxwellianCoefficients,
};
use crate::diagnostics::{
    energy_drift, l2_density_error, momentum_drift, normalized_score_error_from_values,
    weighted_score_loss_from_values, DensityBox, Metric, MetricRecord, DEFAULT_GRID_POINTS,
};
use crate::dynamics::{Frame, PhaseTimings, SbtmSolver, ScoreSolver, Simulation};
use crate::ensemble::{MomentState, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::sampling::{sample_bkw, sample_gaussian, stream, SimRng};
use crate::score::{
    initialize_score, save_checkpoint, AdamState, AnalyticScore, InitOptions, Mlp, ScoreModel,
};

/// Known facts about the exact solution used by the metrics.
enum Reference {
    Bkw(BkwSolution),
    Gaussian {
        start: GaussianSolution,
        moments: MomentState,
        gamma: f64,
        b_const: f64,
        t0: f64,
    },
}

impl Reference {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match &cfg.initial {
            InitialCondition::Bkw => Reference::Bkw(BkwSolution::new(cfg.d, cfg.b_const, cfg.t0)?),
            InitialCondition::Gaussian { mean, variances } => {
                let start = GaussianSolution::new(mean.clone(), variances.clone())?;
                Reference::Gaussian {
                    moments: start.moments(),
                    start,
                    gamma: cfg.gamma,
                    b_const: cfg.b_const,
                    t0: cfg.t0,
                }
            }
        })
    }

    fn sample(&self, rng: &mut SimRng, n: usize) -> Result<ParticleEnsemble> {
        match self {
            Reference::Bkw(s) => sample_bkw(rng, n, s),
            Reference::Gaussian { start, .. } => sample_gaussian(rng, n, start),
        }
    }

    fn initial_score(&self) -> AnalyticScore {
        match self {
            Reference::Bkw(s) => AnalyticScore::Bkw(s.clone()),
            Reference::Gaussian { start, .. } => AnalyticScore::Gaussian(start.clone()),
        }
    }

    /// Exact solution at time `t`, when known.
    fn exact_at(&self, t: f64) -> Result<Option<BkwSolution>> {
        match self {
            Reference::Bkw(s) => s.at(t).map(Some),
            Reference::Gaussian { .. } => Ok(None),
        }
    }

    /// Reference second moment at `t`: the exact evolution for Maxwellian
    /// molecules, otherwise the equilibrium value.
    fn second_moment(&self, t: f64) -> Result<DMatrix<f64>> {
        match self {
            Reference::Bkw(s) => Ok(s.at(t)?.second_moment()),
            Reference::Gaussian {
                moments,
                gamma,
                b_const,
                t0,
                ..
            } => {
                if *gamma == 0.0 {
                    let elapsed = (b_const * (t - t0)).max(0.0);
                    second_moment_evolution(
                        &moments.second_moment,
                        &moments.momentum,
                        moments.energy_times_two,
                        elapsed,
                    )
                } else {
                    Ok(equilibrium_second_moment(&moments.momentum, moments.energy_times_two))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentSummary {
    pub momentum: Vec<f64>,
    pub energy_times_two: f64,
    pub second_moment: Vec<Vec<f64>>,
}

impl From<&MomentState> for MomentSummary {
    fn from(m: &MomentState) -> Self {
        let d = m.dim();
        Self {
            momentum: m.momentum.iter().copied().collect(),
            energy_times_two: m.energy_times_two,
            second_moment: (0..d)
                .map(|i| (0..d).map(|j| m.second_moment[(i, j)]).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InitSummary {
    pub steps: usize,
    pub relative_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimedValue {
    pub time: f64,
    pub value: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub solver: &'static str,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub threads: usize,
    pub steps: usize,
    pub final_time: f64,
    pub initial_moments: MomentSummary,
    pub final_moments: MomentSummary,
    pub momentum_drift: f64,
    pub energy_drift: f64,
    pub cumulative_entropy: f64,
    pub max_entropy_increment: Option<f64>,
    pub final_metrics: BTreeMap<String, f64>,
    /// Density error at the snapshot times, when the exact density is known.
    pub l2_density_err: Vec<TimedValue>,
    pub initialization: Option<InitSummary>,
    pub training_steps: usize,
    pub timings: PhaseTimings,
    pub wall_time: f64,
}

/// Everything a run produces, before anything is written to disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<MetricRecord>,
    pub summary: RunSummary,
    pub entropy_increments: Vec<f64>,
    pub snapshots: Vec<(f64, ParticleEnsemble)>,
    pub final_ensemble: ParticleEnsemble,
    pub model: Option<Mlp>,
    metrics_header: Vec<Metric>,
}

impl RunOutcome {
    /// `metrics.csv`: a `time` column plus the configured metrics, one row
    /// per step, numbers in shortest round-trip form.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("time");
        for m in &self.metrics_header {
            out.push(',');
            out.push_str(m.name());
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{:?}", r.time);
            for (_, v) in &r.values {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Value of metric `m` at each step.
    pub fn series(&self, m: Metric) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.get(m).map(|v| (r.time, v)))
            .collect()
    }

    /// Write `metrics.csv`, `summary.json`, `particles_{t}.csv` and, for
    /// SBTM, `model.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: &str| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write("metrics.csv", &self.metrics_csv())?;
        let json = serde_json::to_string_pretty(&self.summary)
            .map_err(|e| Error::Domain(format!("summary serialization: {e}")))?;
        write("summary.json", &json)?;
        for (t, e) in &self.snapshots {
            write(&format!("particles_{t}.csv"), &particles_csv(e))?;
        }
        if let Some(m) = &self.model {
            save_checkpoint(m, &dir.join("model.json"))?;
        }
        Ok(())
    }
}

fn particles_csv(e: &ParticleEnsemble) -> String {
    let mut out = (1..=e.dim()).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for p in e.particles() {
        for (k, v) in p.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

/// Settings that do not change results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// Run the experiment on a pool with the requested thread count.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunOutcome> {
    match opts.threads {
        None => execute(cfg),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
            pool.install(|| execute(cfg))
        }
    }
}

/// Run the experiment and write its artifacts to `cfg.output`.
pub fn run_and_write(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunOutcome> {
    let outcome = run_experiment(cfg, opts)?;
    outcome.write(&cfg.output)?;
    Ok(outcome)
}

fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let wall = Instant::now();
    let kernel = cfg.kernel()?;
    let reference = Reference::new(cfg)?;

    let start = Instant::now();
    let ensemble = reference.sample(&mut SimRng::with_stream(cfg.seed, stream::INITIAL_CONDITION), cfg.n)?;
    let sampling = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let (solver, init) = match &cfg.solver {
        SolverConfig::Sbtm(s) => {
            let mut rng = SimRng::with_stream(cfg.seed, stream::NETWORK_INIT);
            let mut model = Mlp::new(cfg.d, &s.hidden, &mut rng)?;
            let report = initialize_score(
                &mut model,
                &ensemble,
                &reference.initial_score(),
                InitOptions {
                    threshold: s.init_threshold,
                    max_steps: s.init_max_steps,
                    learning_rate: s.init_learning_rate,
                },
            )?;
            let optimizer = AdamState::new(model.param_count(), s.learning_rate);
            let solver = SbtmSolver {
                model,
                optimizer,
                noise: SimRng::with_stream(cfg.seed, stream::TRAINING_NOISE),
                alpha: s.alpha,
                mode: s.train_mode(),
            };
            (
                ScoreSolver::Sbtm(Box::new(solver)),
                Some(InitSummary {
                    steps: report.steps,
                    relative_loss: report.relative_loss,
                }),
            )
        }
        SolverConfig::Blob { bandwidth } => (ScoreSolver::Blob(*bandwidth), None),
    };
    let initialization = start.elapsed().as_secs_f64();

    let mut sim = Simulation::new(kernel, ensemble, cfg.t0, cfg.dt, solver)?;
    sim.timings.sampling = sampling;
    sim.timings.initialization = initialization;

    let initial_moments = sim.ensemble.moments();
    let steps = cfg.steps();
    let snapshot_steps: Vec<(usize, f64)> = cfg
        .snapshots
        .iter()
        .map(|&t| (cfg.step_of(t).expect("validated snapshot"), t))
        .collect();
    let mut records = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::new();
    let mut l2 = Vec::new();
    let mut training_steps = 0;

    sim.run(steps, |f: &Frame| {
        let m = f.ensemble.moments();
        let exact = if cfg.metrics.iter().any(|m| {
            matches!(
                m,
                Metric::ScoreErrNormalized | Metric::WeightedLoss | Metric::L2DensityErr
            )
        }) {
            reference.exact_at(f.time)?
        } else {
            None
        };
        let exact_scores = match (&exact, needs_exact_scores(&cfg.metrics)) {
            (Some(sol), true) => Some(AnalyticScore::Bkw(sol.clone()).eval_batch(f.ensemble.as_slice())?),
            _ => None,
        };
        let mut r = MetricRecord::new(f.time);
        for &metric in &cfg.metrics {
            let v = match metric {
                Metric::Cov11 => m.second_moment[(0, 0)],
                Metric::CovErrSqFrobenius => (&m.second_moment - reference.second_moment(f.time)?).norm_squared(),
                Metric::ScoreErrNormalized => {
                    normalized_score_error_from_values(f.scores, exact_scores.as_deref().expect("exact score"))?
                }
                Metric::L2DensityErr => {
                    let sol = exact.as_ref().expect("exact solution");
                    density_error(f.ensemble, sol)?
                }
                Metric::EntropyRate => f.entropy_rate,
                Metric::MomentumDrift => momentum_drift(&initial_moments, &m),
                Metric::EnergyDrift => energy_drift(&initial_moments, &m),
                Metric::WeightedLoss => {
                    let sol = exact.as_ref().expect("exact solution");
                    let c = MaxwellianCoefficients::from_moments(&sol.moments()).with_kernel_constant(cfg.b_const);
                    weighted_score_loss_from_values(
                        f.scores,
                        exact_scores.as_deref().expect("exact score"),
                        &c,
                        f.ensemble,
                    )
                }
            };
            r.push(metric, v);
        }
        records.push(r);
        if let Some(t) = f.training {
            training_steps += t.steps;
        }
        for &(step, t) in &snapshot_steps {
            if step == f.step {
                snapshots.push((t, f.ensemble.clone()));
                if let Some(sol) = reference.exact_at(f.time)?.filter(|_| cfg.d <= 3) {
                    l2.push(TimedValue {
                        time: f.time,
                        value: density_error(f.ensemble, &sol)?,
                    });
                }
            }
        }
        Ok(())
    })?;

    let final_moments = sim.ensemble.moments();
    let final_metrics = records
        .last()
        .map(|r| r.values.iter().map(|(k, v)| (k.name().to_string(), *v)).collect())
        .unwrap_or_default();
    let model = match &sim.solver {
        ScoreSolver::Sbtm(s) => Some(s.model.clone()),
        ScoreSolver::Blob(_) => None,
    };
    let summary = RunSummary {
        name: cfg.name.clone(),
        solver: cfg.solver.kind().name(),
        d: cfg.d,
        n: cfg.n,
        seed: cfg.seed,
        threads: rayon::current_num_threads(),
        steps,
        final_time: cfg.t0 + steps as f64 * cfg.dt,
        initial_moments: (&initial_moments).into(),
        final_moments: (&final_moments).into(),
        momentum_drift: momentum_drift(&initial_moments, &final_moments),
        energy_drift: energy_drift(&initial_moments, &final_moments),
        cumulative_entropy: sim.ledger.total,
        max_entropy_increment: sim.ledger.max_increment(),
        final_metrics,
        l2_density_err: l2,
        initialization: init,
        training_steps,
        timings: sim.timings,
        wall_time: wall.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        records,
        summary,
        entropy_increments: sim.ledger.increments.clone(),
        snapshots,
        final_ensemble: sim.ensemble,
        model,
        metrics_header: cfg.metrics.clone(),
    })
}

fn needs_exact_scores(metrics: &[Metric]) -> bool {
    metrics
        .iter()
        .any(|m| matches!(m, Metric::ScoreErrNormalized | Metric::WeightedLoss))
}

fn density_error(e: &ParticleEnsemble, sol: &BkwSolution) -> Result<f64> {
    let bounds = DensityBox::standard(&sol.moments());
    l2_density_error(e, &|x| sol.density(x), &bounds, DEFAULT_GRID_POINTS)
}

/// Reference second moment of a configuration at time `t` (see the
/// `cov_err_sq_frobenius` metric).
pub fn reference_second_moment(cfg: &ExperimentConfig, t: f64) -> Result<DMatrix<f64>> {
    Reference::new(cfg)?.second_moment(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::parse_config;
    use nalgebra::DVector;

    fn small(solver: &str, extra: &str) -> ExperimentConfig {
        let text = format!(
            "name = \"t\"\nd = 2\ngamma = 0.0\nn = 40\nseed = 3\nt_end = 0.05\ndt = 0.01\n\
             [initial]\nkind = \"gaussian\"\nvariances = [1.5, 0.5]\n[solver]\nkind = \"{solver}\"\n{extra}"
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn one_row_per_step_including_start() {
        let out = run_experiment(&small("blob", ""), RunOptions::default()).unwrap();
        assert_eq!(out.records.len(), 6);
        let csv = out.metrics_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "time,cov11,cov_err_sq_frobenius,entropy_rate,momentum_drift,energy_drift"
        );
        assert_eq!(lines.count(), 6);
        assert_eq!(out.entropy_increments.len(), 5);
        assert_eq!(out.snapshots.len(), 2);
        assert!(out.summary.momentum_drift < 1e-12);
    }

    #[test]
    fn cov_error_starts_at_sampling_error() {
        let cfg = small("blob", "");
        let out = run_experiment(&cfg, RunOptions::default()).unwrap();
        let e0 = &out.snapshots[0].1;
        let want = (e0.moments().second_moment - DMatrix::from_diagonal(&DVector::from_vec(vec![1.5, 0.5]))).norm_squared();
        assert_eq!(out.records[0].get(Metric::CovErrSqFrobenius), Some(want));
    }

    #[test]
    fn repeat_runs_are_identical() {
        let cfg = small("sbtm", "hidden = [8]\nsteps = 3\ninit_threshold = 0.5");
        let a = run_experiment(&cfg, RunOptions { threads: Some(1) }).unwrap();
        let b = run_experiment(&cfg, RunOptions { threads: Some(2) }).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.model, b.model);
        assert_eq!(a.summary.training_steps, 18);
    }

    #[test]
    fn writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small("sbtm", "hidden = [4]\nsteps = 1\ninit_threshold = 0.9");
        let out = run_experiment(&cfg, RunOptions::default()).unwrap();
        out.write(dir.path()).unwrap();
        for f in ["metrics.csv", "summary.json", "particles_0.csv", "particles_0.05.csv", "model.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = crate::score::load_checkpoint(&dir.path().join("model.json")).unwrap();
        assert_eq!(Some(back), out.model);
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["steps"], 5);
        assert!(summary["timings"]["velocity"].as_f64().unwrap() >= 0.0);
    }

    #[test]
    fn zero_length_run_records_initial_state_only() {
        let mut cfg = small("blob", "");
        cfg.t_end = cfg.t0;
        cfg.snapshots = vec![cfg.t0];
        let out = run_experiment(&cfg, RunOptions::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(out.entropy_increments.is_empty());
    }

    #[test]
    fn bkw_run_reports_exact_solution_metrics() {
        let text = "d = 3\ngamma = 0.0\nb_const = 0.041666666666666664\nn = 200\nt_end = 5.52\ndt = 0.01\n\
                    metrics = [\"score_err_normalized\", \"weighted_loss\", \"l2_density_err\"]\n\
                    [initial]\nkind = \"bkw\"\n[solver]\nkind = \"blob\"\n";
        let out = run_experiment(&parse_config(text).unwrap(), RunOptions::default()).unwrap();
        assert_eq!(out.records.len(), 3);
        for r in &out.records {
            assert!(r.all_finite());
            assert!(r.get(Metric::ScoreErrNormalized).unwrap() > 0.0);
        }
        assert_eq!(out.summary.l2_density_err.len(), 2);
    }
}
