//! Declarative experiments: configuration, presets, single runs and sweeps.

pub mod config;
pub mod presets;
pub mod runner;
pub mod sweep;

pub use config::{
    parse_config, render_config, ExperimentConfig, InitialCondition, SbtmConfig, SolverConfig, SolverKind,
    TrainModeConfig,
};
pub use presets::{load_preset, preset_names, preset_text};
pub use runner::{reference_second_moment, run_and_write, run_experiment, RunOptions, RunOutcome, RunSummary};
pub use sweep::{sweep, sweep_config, sweep_csv, write_sweep_csv, SweepRow, SweepSpec};
