use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use landau_core::diagnostics::Metric;
use landau_core::experiment::{
    load_preset, parse_config, preset_names, preset_text, run_and_write, sweep, write_sweep_csv,
    ExperimentConfig, RunOptions, SolverKind, SweepSpec,
};
use landau_core::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_TRAINING: u8 = 3;

/// Like `println!`, but a closed stdout (e.g. piped into `head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {
        let _ = writeln!(std::io::stdout(), $($arg)*);
    };
}

/// Particle simulations of the spatially homogeneous Landau equation.
#[derive(Parser)]
#[command(name = "landau", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv, summary.json and snapshots.
    Run {
        /// Config file, or the name of a built-in preset.
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the particle count.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory (defaults to the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every combination of particle count, solver and seed.
    Sweep {
        config: String,
        #[arg(long = "n", value_delimiter = ',', required = true)]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "sbtm,blob")]
        solvers: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List or print the built-in presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    Show { name: String },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::TrainingNonConvergence { .. } => EXIT_TRAINING,
        _ => EXIT_RUNTIME,
    }
}

/// A config file path, falling back to a preset of that name.
fn load_config(source: &str) -> Result<ExperimentConfig, Error> {
    let path = Path::new(source);
    if !path.exists() && preset_text(source).is_some() {
        return load_preset(source);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        key: "<file>".into(),
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config(&text)
}

fn run(
    config: &str,
    seed: Option<u64>,
    n: Option<usize>,
    threads: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), Error> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = n {
        if n < 2 {
            return Err(Error::Config {
                key: "n".into(),
                line: None,
                message: format!("need at least 2 particles, got {n}"),
            });
        }
        cfg.n = n;
    }
    if let Some(dir) = out {
        cfg.output = dir;
    }
    let outcome = run_and_write(&cfg, RunOptions { threads })?;
    let s = &outcome.summary;
    say!(
        "{}: {} steps, n={}, seed={}, wall {:.2}s -> {}",
        s.name,
        s.steps,
        s.n,
        s.seed,
        s.wall_time,
        cfg.output.display()
    );
    for (k, v) in &s.final_metrics {
        say!("  {k} = {v:e}");
    }
    Ok(())
}

fn run_sweep(
    config: &str,
    ns: Vec<usize>,
    solvers: Vec<String>,
    seeds: usize,
    threads: Option<usize>,
    out: Option<PathBuf>,
) -> Result<bool, Error> {
    let mut base = load_config(config)?;
    if let Some(dir) = out {
        base.output = dir;
    }
    let solvers = solvers
        .iter()
        .map(|s| {
            SolverKind::from_name(s).ok_or_else(|| Error::Config {
                key: "solvers".into(),
                line: None,
                message: format!("unknown solver `{s}`"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if seeds == 0 || ns.iter().any(|&n| n < 2) {
        return Err(Error::Config {
            key: "sweep".into(),
            line: None,
            message: "need at least one seed and n >= 2".into(),
        });
    }
    let spec = SweepSpec { ns, solvers, seeds };
    let rows = sweep(&base, &spec, RunOptions { threads }, true);
    let metrics: Vec<Metric> = base.metrics.clone();
    write_sweep_csv(&base.output, &rows, &metrics)?;
    for r in &rows {
        let status = r.failure.as_deref().unwrap_or("ok");
        say!(
            "{} n={} seed={} wall {:.2}s {status}",
            r.solver.name(),
            r.n,
            r.seed,
            r.wall_time
        );
    }
    say!("{}", base.output.join("sweep.csv").display());
    Ok(rows.iter().any(|r| r.failure.is_none()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            n,
            threads,
            out,
        } => run(&config, seed, n, threads, out),
        Command::Sweep {
            config,
            ns,
            solvers,
            seeds,
            threads,
            out,
        } => run_sweep(&config, ns, solvers, seeds, threads, out).and_then(|any_ok| {
            if any_ok {
                Ok(())
            } else {
                Err(Error::Domain("every run in the sweep failed".into()))
            }
        }),
        Command::Presets { action } => {
            match action {
                PresetAction::List => {
                    for name in preset_names() {
                        say!("{name}");
                    }
                    Ok(())
                }
                PresetAction::Show { name } => match preset_text(&name) {
                    Some(text) => {
                        let _ = std::io::stdout().write_all(text.as_bytes());
                        Ok(())
                    }
                    None => Err(Error::Config {
                        key: "preset".into(),
                        line: None,
                        message: format!("unknown preset `{name}`"),
                    }),
                },
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
