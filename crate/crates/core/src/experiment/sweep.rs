//! Batches of runs over particle counts, solvers and seeds.

use std::fmt::Write as _;
use std::path::Path;

use super::config::{ExperimentConfig, SolverConfig, SolverKind};
use super::runner::{run_experiment, RunOptions, RunOutcome};
use crate::diagnostics::Metric;
use crate::dynamics::PhaseTimings;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub ns: Vec<usize>,
    pub solvers: Vec<SolverKind>,
    /// Seeds `base.seed, base.seed + 1, …`.
    pub seeds: usize,
}

/// Result of one run in a sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub solver: SolverKind,
    pub n: usize,
    pub seed: u64,
    /// `None` on success, the error message otherwise.
    pub failure: Option<String>,
    pub wall_time: f64,
    pub timings: PhaseTimings,
    /// Final value of each configured metric (empty on failure).
    pub final_metrics: Vec<(Metric, f64)>,
}

impl SweepRow {
    pub fn metric(&self, m: Metric) -> Option<f64> {
        self.final_metrics.iter().find(|(k, _)| *k == m).map(|(_, v)| *v)
    }
}

/// Configuration of one sweep cell: the base with `n`, solver and seed
/// replaced. A solver kind different from the base's uses its defaults.
pub fn sweep_config(base: &ExperimentConfig, solver: SolverKind, n: usize, seed: u64) -> ExperimentConfig {
    let mut c = base.clone();
    c.n = n;
    c.seed = seed;
    if c.solver.kind() != solver {
        c.solver = SolverConfig::default_for(solver, &c.initial);
    }
    c.name = format!("{}_{}_n{}_seed{}", base.name, solver.name(), n, seed);
    c.output = base.output.join(format!("{}_n{}_seed{}", solver.name(), n, seed));
    c
}

/// Run every (solver, n, seed) combination. Failed runs are recorded and
/// the sweep continues. With `write_runs`, each run's artifacts go to its
/// own subdirectory of `base.output`.
pub fn sweep(base: &ExperimentConfig, spec: &SweepSpec, opts: RunOptions, write_runs: bool) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &solver in &spec.solvers {
        for &n in &spec.ns {
            for k in 0..spec.seeds as u64 {
                let cfg = sweep_config(base, solver, n, base.seed + k);
                let result = run_experiment(&cfg, opts).and_then(|out| {
                    if write_runs {
                        out.write(&cfg.output)?;
                    }
                    Ok(out)
                });
                rows.push(row(&cfg, result));
            }
        }
    }
    rows
}

fn row(cfg: &ExperimentConfig, result: Result<RunOutcome>) -> SweepRow {
    let mut r = SweepRow {
        solver: cfg.solver.kind(),
        n: cfg.n,
        seed: cfg.seed,
        failure: None,
        wall_time: 0.0,
        timings: PhaseTimings::default(),
        final_metrics: Vec::new(),
    };
    match result {
        Ok(out) => {
            r.wall_time = out.summary.wall_time;
            r.timings = out.summary.timings;
            r.final_metrics = out.records.last().map(|x| x.values.clone()).unwrap_or_default();
        }
        Err(e) => {
            log::warn!("sweep run {} failed: {e}", cfg.name);
            r.failure = Some(e.to_string());
        }
    }
    r
}

/// `sweep.csv`: identification, status, timings per phase, then the final
/// value of each metric in `metrics` (empty cells for failed runs).
pub fn sweep_csv(rows: &[SweepRow], metrics: &[Metric]) -> String {
    let mut out = String::from(
        "solver,n,seed,status,wall_time,sampling,initialization,training,score,velocity,integration,diagnostics",
    );
    for m in metrics {
        let _ = write!(out, ",{m}");
    }
    out.push('\n');
    for r in rows {
        let status = match &r.failure {
            None => "ok".to_string(),
            Some(msg) => format!("failed: {}", msg.replace([',', '\n'], ";")),
        };
        let t = &r.timings;
        let _ = write!(
            out,
            "{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.solver.name(),
            r.n,
            r.seed,
            status,
            r.wall_time,
            t.sampling,
            t.initialization,
            t.training,
            t.score,
            t.velocity,
            t.integration,
            t.diagnostics
        );
        for m in metrics {
            match r.metric(*m) {
                Some(v) => {
                    let _ = write!(out, ",{v:?}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_sweep_csv(dir: &Path, rows: &[SweepRow], metrics: &[Metric]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("sweep.csv");
    std::fs::write(&path, sweep_csv(rows, metrics)).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::parse_config;

    fn base() -> ExperimentConfig {
        parse_config(
            "name = \"b\"\nd = 2\ngamma = 0.0\nn = 10\nt_end = 0.02\ndt = 0.01\noutput = \"out\"\n\
             [initial]\nkind = \"gaussian\"\nvariances = [1.5, 0.5]\n[solver]\nkind = \"blob\"\n",
        )
        .unwrap()
    }

    #[test]
    fn cartesian_product_of_rows() {
        let spec = SweepSpec {
            ns: vec![8, 16],
            solvers: vec![SolverKind::Blob],
            seeds: 3,
        };
        let rows = sweep(&base(), &spec, RunOptions::default(), false);
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.failure.is_none()));
        let csv = sweep_csv(&rows, &base().metrics);
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.lines().nth(1).unwrap().starts_with("blob,8,0,ok,"));
    }

    #[test]
    fn other_solver_gets_defaults() {
        let c = sweep_config(&base(), SolverKind::Sbtm, 100, 4);
        let SolverConfig::Sbtm(s) = &c.solver else { panic!() };
        assert_eq!(s.hidden, vec![100]);
        assert_eq!((c.n, c.seed), (100, 4));
        assert_eq!(c.output, Path::new("out/sbtm_n100_seed4"));
    }

    #[test]
    fn failures_are_flagged_and_sweep_continues() {
        let spec = SweepSpec {
            ns: vec![1, 8],
            solvers: vec![SolverKind::Blob],
            seeds: 1,
        };
        let rows = sweep(&base(), &spec, RunOptions::default(), false);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].failure.is_some());
        assert!(rows[1].failure.is_none());
        let csv = sweep_csv(&rows, &[Metric::Cov11]);
        let failed = csv.lines().nth(1).unwrap();
        assert!(failed.contains("failed:") && failed.ends_with(','), "{failed}");
    }
}
