//! Atomic artifact files and the run manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::run::{Experiment, RunArtifacts, RunStatus};

pub const MEAN_PATH_FILE: &str = "mean_path.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(bytes).map_err(io_err(&tmp))?;
    file.sync_all().map_err(io_err(&tmp))?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Configuration echo: everything that determines the tables. Thread count
/// and output location are left out since they do not affect the bytes.
pub fn config_echo(config: &RunConfig) -> Value {
    let mut v = serde_json::to_value(config).expect("serializable");
    if let Value::Object(map) = &mut v {
        map.remove("threads");
        map.remove("output");
    }
    v
}

pub fn manifest(config: &RunConfig, experiment: Experiment, status: RunStatus, error: Option<&str>) -> Value {
    let mut m = json!({
        "tool": "mrbsde",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": experiment.name(),
        "seed": config.seed,
        "status": status,
        "config": config_echo(config),
    });
    if let Some(e) = error {
        m["error"] = Value::String(e.to_string());
    }
    m
}

fn to_json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Marks the output directory as failed; replaced when the run completes.
pub fn write_failure_marker(config: &RunConfig, experiment: Experiment, error: Option<&str>) -> CliResult<()> {
    let dir = &config.output.dir;
    let report = json!({ "manifest": manifest(config, experiment, RunStatus::Failed, error) });
    write_atomic(&dir.join(CONFIG_FILE), &to_json_bytes(&serde_json::to_value(config).expect("serializable")))?;
    write_atomic(&dir.join(REPORT_FILE), &to_json_bytes(&report))
}

/// Writes both tables, then the report, which carries the final status.
pub fn write_artifacts(config: &RunConfig, artifacts: &RunArtifacts) -> CliResult<()> {
    let dir = &config.output.dir;
    write_atomic(&dir.join(MEAN_PATH_FILE), artifacts.mean_path.as_bytes())?;
    write_atomic(&dir.join(CONVERGENCE_FILE), artifacts.convergence.as_bytes())?;
    let report = json!({
        "manifest": manifest(config, artifacts.experiment, artifacts.status, None),
        "diagnostics": artifacts.diagnostics,
    });
    write_atomic(&dir.join(REPORT_FILE), &to_json_bytes(&report))
}

/// Failure marker, run, artifacts: the sequence `main` performs.
pub fn execute(config: &RunConfig, experiment: Experiment, options: crate::run::RunOptions) -> CliResult<RunStatus> {
    write_failure_marker(config, experiment, None)?;
    match crate::run::run_experiment(config, experiment, options) {
        Ok(artifacts) => {
            write_artifacts(config, &artifacts)?;
            Ok(artifacts.status)
        }
        Err(e) => {
            write_failure_marker(config, experiment, Some(&e.to_string()))?;
            Err(e)
        }
    }
}
