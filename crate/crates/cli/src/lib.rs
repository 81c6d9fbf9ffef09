//! Experiment harness: declarative configs, single runs, sweeps and the
//! acceptance suite.

pub mod config;
pub mod experiment;
pub mod sweep;
pub mod verify;

pub use config::{Algorithm, ConfigError, ExperimentConfig, ProblemSpec, Step};
pub use experiment::{format_table, run_experiment, write_trace, ExperimentError, SummaryRow, CSV_HEADER};
pub use sweep::{parse_values, sweep, sweep_table, Axis, AxisValue, SweepError, SweepRow};
pub use verify::{verify, CheckResult, Report};
