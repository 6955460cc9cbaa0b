//! Single runs, replays and grid sweeps, with their on-disk artifacts.

pub mod check;
pub mod config;
pub mod run;
pub mod sweep;

pub use check::check_artifacts;
pub use config::RunConfig;
pub use run::{run_experiment, write_artifacts, RunOutcome};
pub use sweep::{run_sweep, write_sweep, Sweep, SweepCell};
