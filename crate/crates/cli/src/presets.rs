//! Canonical problems shipped with the binary.

use std::path::PathBuf;

use mrbsde::problem::{
    BoundaryFamily, BoundarySpec, Curve, DriverFamily, DriverSpec, KappaSpec, TerminalMode, TerminalSpec,
};
use mrbsde::{BasisKind, ProblemSpec, RegressionBasis};

use crate::config::{Numerics, Output, RunConfig, Schedule};

pub const PRESET_NAMES: [&str; 4] = ["sine", "affine", "boundary", "zdrift"];

fn sine(amplitude: f64) -> Curve {
    Curve::Sine { amplitude, frequency: 1.0, offset: 0.0 }
}

fn standard_normal() -> TerminalSpec {
    TerminalSpec { mode: TerminalMode::Gaussian { mean: 0.0, std: 1.0 }, declared_mean: None }
}

fn affine_driver(mean_y_coef: f64, mean_z_coef: f64) -> DriverSpec {
    DriverSpec {
        family: DriverFamily::Affine {
            constant: 0.0,
            y_coef: 0.0,
            z_coef: vec![0.0],
            mean_y_coef,
            mean_z_coef: vec![mean_z_coef],
        },
        lipschitz: mean_y_coef.abs() + mean_z_coef.abs(),
        offset: 0.0,
    }
}

/// The problem of a named preset (case-insensitive).
pub fn preset_problem(name: &str) -> Option<ProblemSpec> {
    let base = ProblemSpec {
        horizon: 1.0,
        brownian_dim: 1,
        driver: DriverSpec::zero(),
        boundary: BoundarySpec::zero(),
        terminal: standard_normal(),
        obstacle: sine(0.25),
        kappa: KappaSpec::Zero,
        forward: None,
    };
    let spec = match name.to_ascii_lowercase().as_str() {
        "sine" => ProblemSpec { obstacle: sine(0.5), ..base },
        "affine" => ProblemSpec { driver: affine_driver(0.5, 0.0), ..base },
        "boundary" => ProblemSpec {
            boundary: BoundarySpec {
                family: BoundaryFamily::LinearMonotone { slope: -1.0, intercept: 0.0 },
                beta: -1.0,
                growth: 1.0,
                psi: Curve::Constant { value: 0.0 },
            },
            kappa: KappaSpec::Linear { rate: 1.0 },
            ..base
        },
        "zdrift" => ProblemSpec {
            driver: affine_driver(0.0, 0.5),
            terminal: TerminalSpec { mode: TerminalMode::Brownian, declared_mean: None },
            ..base
        },
        _ => return None,
    };
    Some(spec)
}

/// Fully populated configuration of a named preset.
pub fn preset_config(name: &str) -> Option<RunConfig> {
    let problem = preset_problem(name)?;
    let name = name.to_ascii_lowercase();
    Some(RunConfig {
        preset: Some(name.clone()),
        problem,
        numerics: Numerics {
            particles: 20_000,
            steps: 100,
            basis: RegressionBasis { kind: BasisKind::BrownianPolynomial, degree: 2 },
            quad_points: mrbsde::mollify::DEFAULT_QUAD_POINTS,
        },
        schedule: Schedule::default(),
        seed: 7,
        threads: 0,
        output: Output { dir: PathBuf::from("mrbsde-out").join(name) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_passes_structural_checks() {
        for name in PRESET_NAMES {
            let cfg = preset_config(name).unwrap();
            cfg.problem.check().unwrap();
            cfg.validate().unwrap();
        }
        assert!(preset_config("SINE").is_some());
        assert!(preset_config("nope").is_none());
    }
}
