//! Configuration, experiment orchestration and artifact output for the
//! `mrbsde` command-line tool.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod presets;
pub mod run;

pub use artifacts::{execute, write_artifacts};
pub use config::{load_config, parse_config, parse_config_str, Overrides, RunConfig};
pub use error::{CliError, CliResult};
pub use presets::{preset_config, PRESET_NAMES};
pub use run::{run_experiment, Experiment, RunArtifacts, RunOptions, RunStatus};
