//! Strict JSON run configuration with preset expansion.
//!
//! A document may name a `preset`; every section or field it then omits is
//! taken from the preset. Without a preset, only `numerics.quad_points`,
//! `numerics.basis.degree` and `threads` have defaults.

use std::path::{Path, PathBuf};

use mrbsde::mollify::DEFAULT_QUAD_POINTS;
use mrbsde::reflect::ConvergenceSchedule;
use mrbsde::{BasisKind, ProblemSpec, RegressionBasis};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::presets::{preset_config, PRESET_NAMES};

const DEFAULT_DEGREE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Numerics {
    pub particles: usize,
    pub steps: usize,
    pub basis: RegressionBasis,
    pub quad_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub n: Vec<u64>,
    pub k: Vec<usize>,
    pub deficit_tol: f64,
    pub cauchy_tol: f64,
    /// Perturbation sizes for the stability experiment.
    pub epsilons: Vec<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        let s = ConvergenceSchedule::default();
        Schedule {
            n: s.n,
            k: s.k,
            deficit_tol: s.deficit_tol,
            cauchy_tol: s.cauchy_tol,
            epsilons: vec![0.1, 0.05, 0.025],
        }
    }
}

impl Schedule {
    pub fn convergence(&self) -> ConvergenceSchedule {
        ConvergenceSchedule {
            n: self.n.clone(),
            k: self.k.clone(),
            deficit_tol: self.deficit_tol,
            cauchy_tol: self.cauchy_tol,
        }
    }

    pub fn max_n(&self) -> u64 {
        *self.n.last().expect("validated schedule")
    }

    pub fn max_k(&self) -> usize {
        *self.k.last().expect("validated schedule")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Output {
    pub dir: PathBuf,
}

/// Fully resolved configuration. Serializes to a document `parse_config` accepts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub problem: ProblemSpec,
    pub numerics: Numerics,
    pub schedule: Schedule,
    pub seed: u64,
    pub threads: usize,
    pub output: Output,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.numerics.particles < 2 {
            return Err(CliError::Config(format!(
                "M ≥ 2 required, got numerics.particles = {}",
                self.numerics.particles
            )));
        }
        if self.numerics.steps < 2 {
            return Err(CliError::Config(format!("N ≥ 2 required, got numerics.steps = {}", self.numerics.steps)));
        }
        self.problem.check()?;
        self.schedule.convergence().check()?;
        if self.schedule.epsilons.iter().any(|e| !e.is_finite()) {
            return Err(CliError::Config("schedule.epsilons must be finite".into()));
        }
        Ok(())
    }
}

/// Command-line values that take precedence over the document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    problem: Option<ProblemSpec>,
    numerics: Option<RawNumerics>,
    schedule: Option<RawSchedule>,
    seed: Option<u64>,
    threads: Option<usize>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    particles: Option<usize>,
    steps: Option<usize>,
    basis: Option<RawBasis>,
    quad_points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBasis {
    kind: Option<BasisKind>,
    degree: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    n: Option<Vec<u64>>,
    k: Option<Vec<usize>>,
    deficit_tol: Option<f64>,
    cauchy_tol: Option<f64>,
    epsilons: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

fn required<T>(value: Option<T>, fallback: Option<T>, field: &str) -> CliResult<T> {
    value.or(fallback).ok_or_else(|| CliError::Config(format!("missing required field `{field}` (no preset given)")))
}

fn resolve(raw: RawConfig, overrides: &Overrides) -> CliResult<RunConfig> {
    let preset_name = overrides.preset.clone().or(raw.preset);
    let base = match &preset_name {
        Some(name) => Some(preset_config(name).ok_or_else(|| {
            CliError::Config(format!("unknown preset `{name}`; expected one of {}", PRESET_NAMES.join(", ")))
        })?),
        None => None,
    };
    let b = base.as_ref();

    let problem = required(raw.problem, b.map(|c| c.problem.clone()), "problem")?;

    let rn = raw.numerics.unwrap_or_default();
    let rb = rn.basis.unwrap_or_default();
    let numerics = Numerics {
        particles: required(rn.particles, b.map(|c| c.numerics.particles), "numerics.particles")?,
        steps: required(rn.steps, b.map(|c| c.numerics.steps), "numerics.steps")?,
        basis: RegressionBasis {
            kind: required(rb.kind, b.map(|c| c.numerics.basis.kind), "numerics.basis.kind")?,
            degree: rb.degree.or(b.map(|c| c.numerics.basis.degree)).unwrap_or(DEFAULT_DEGREE),
        },
        quad_points: rn.quad_points.or(b.map(|c| c.numerics.quad_points)).unwrap_or(DEFAULT_QUAD_POINTS),
    };

    let rs = raw.schedule.unwrap_or_default();
    let bs = b.map(|c| &c.schedule);
    let schedule = Schedule {
        n: required(rs.n, bs.map(|s| s.n.clone()), "schedule.n")?,
        k: required(rs.k, bs.map(|s| s.k.clone()), "schedule.k")?,
        deficit_tol: required(rs.deficit_tol, bs.map(|s| s.deficit_tol), "schedule.deficit_tol")?,
        cauchy_tol: required(rs.cauchy_tol, bs.map(|s| s.cauchy_tol), "schedule.cauchy_tol")?,
        epsilons: required(rs.epsilons, bs.map(|s| s.epsilons.clone()), "schedule.epsilons")?,
    };

    let seed = required(overrides.seed.or(raw.seed), b.map(|c| c.seed), "seed")?;
    let threads = overrides.threads.or(raw.threads).unwrap_or(0);
    let dir = required(
        overrides.out.clone().or(raw.output.and_then(|o| o.dir)),
        b.map(|c| c.output.dir.clone()),
        "output.dir",
    )?;

    let config = RunConfig {
        preset: preset_name.map(|n| n.to_ascii_lowercase()),
        problem,
        numerics,
        schedule,
        seed,
        threads,
        output: Output { dir },
    };
    config.validate()?;
    Ok(config)
}

/// Parses a JSON document; `origin` labels parse errors.
pub fn parse_config_str(text: &str, origin: &str, overrides: &Overrides) -> CliResult<RunConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    resolve(raw, overrides)
}

/// Loads the configuration from `path`, or from the preset alone when no path is given.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> CliResult<RunConfig> {
    match path {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
            parse_config_str(&text, &path.display().to_string(), overrides)
        }
        None if overrides.preset.is_some() => resolve(RawConfig::default(), overrides),
        None => Err(CliError::Config("either --config or --preset is required".into())),
    }
}

pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    load_config(Some(path), &Overrides::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<RunConfig> {
        parse_config_str(text, "test.json", &Overrides::default())
    }

    #[test]
    fn preset_expands_fully() {
        let cfg = parse(r#"{"preset": "SINE"}"#).unwrap();
        assert_eq!(cfg, preset_config("sine").unwrap());
        assert_eq!(cfg.numerics.quad_points, 64);
        assert_eq!(cfg.numerics.basis.degree, 2);
        assert_eq!(cfg.threads, 0);
    }

    #[test]
    fn fields_overlay_the_preset() {
        let cfg =
            parse(r#"{"preset": "affine", "numerics": {"particles": 500}, "schedule": {"n": [10, 20]}}"#).unwrap();
        assert_eq!(cfg.numerics.particles, 500);
        assert_eq!(cfg.numerics.steps, 100);
        assert_eq!(cfg.schedule.n, vec![10, 20]);
        assert_eq!(cfg.schedule.k, vec![10, 20, 40]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse(r#"{"preset": "sine", "schedule": {"penalty_stlye": "implicit"}}"#).unwrap_err();
        match err {
            CliError::Parse { message, line, .. } => {
                assert!(message.contains("penalty_stlye"), "{message}");
                assert_eq!(line, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_particle_is_rejected() {
        let err = parse(r#"{"preset": "sine", "numerics": {"particles": 1}}"#).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("M ≥ 2")), "{err}");
    }

    #[test]
    fn missing_fields_without_preset() {
        let err = parse(r#"{"seed": 1}"#).unwrap_err();
        assert!(err.to_string().contains("problem"));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = preset_config("boundary").unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(parse(&text).unwrap(), cfg);
        let mut bare = cfg.clone();
        bare.preset = None;
        let text = serde_json::to_string(&bare).unwrap();
        assert_eq!(parse(&text).unwrap(), bare);
    }

    #[test]
    fn overrides_win() {
        let o = Overrides { seed: Some(8), threads: Some(4), out: Some("x".into()), preset: Some("zdrift".into()) };
        let cfg = parse_config_str(r#"{"preset": "sine", "seed": 3}"#, "t", &o).unwrap();
        assert_eq!(cfg.seed, 8);
        assert_eq!(cfg.threads, 4);
        assert_eq!(cfg.output.dir, PathBuf::from("x"));
        assert_eq!(cfg.preset.as_deref(), Some("zdrift"));
    }
}
