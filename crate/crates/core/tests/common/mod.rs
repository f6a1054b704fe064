#![allow(dead_code)]

use mrbsde::problem::{
    BoundaryFamily, BoundarySpec, Curve, DriverFamily, DriverSpec, KappaSpec, TerminalMode, TerminalSpec,
};
use mrbsde::{simulate_forward, BasisKind, ForwardCloud, ProblemSpec, RegressionBasis, TimeGrid};

pub fn sine(amplitude: f64) -> Curve {
    Curve::Sine { amplitude, frequency: 1.0, offset: 0.0 }
}

pub fn gaussian(mean: f64) -> TerminalSpec {
    TerminalSpec { mode: TerminalMode::Gaussian { mean, std: 1.0 }, declared_mean: None }
}

pub fn zero_driver_problem(obstacle: Curve) -> ProblemSpec {
    ProblemSpec {
        horizon: 1.0,
        brownian_dim: 1,
        driver: DriverSpec::zero(),
        boundary: BoundarySpec::zero(),
        terminal: gaussian(0.0),
        obstacle,
        kappa: KappaSpec::Zero,
        forward: None,
    }
}

pub fn sine_problem() -> ProblemSpec {
    zero_driver_problem(sine(0.5))
}

pub fn affine_problem() -> ProblemSpec {
    ProblemSpec {
        driver: DriverSpec {
            family: DriverFamily::Affine {
                constant: 0.0,
                y_coef: 0.0,
                z_coef: vec![0.0],
                mean_y_coef: 0.5,
                mean_z_coef: vec![0.0],
            },
            lipschitz: 0.5,
            offset: 0.0,
        },
        ..zero_driver_problem(sine(0.25))
    }
}

pub fn boundary_problem() -> ProblemSpec {
    ProblemSpec {
        boundary: BoundarySpec {
            family: BoundaryFamily::LinearMonotone { slope: -1.0, intercept: 0.0 },
            beta: -1.0,
            growth: 1.0,
            psi: Curve::Constant { value: 0.0 },
        },
        kappa: KappaSpec::Linear { rate: 1.0 },
        ..zero_driver_problem(sine(0.25))
    }
}

pub fn basis() -> RegressionBasis {
    RegressionBasis { kind: BasisKind::BrownianPolynomial, degree: 2 }
}

pub fn cloud(spec: &ProblemSpec, particles: usize, steps: usize, seed: u64) -> ForwardCloud {
    let grid = TimeGrid::new(spec.horizon, steps).unwrap();
    simulate_forward(spec, &grid, particles, seed).unwrap()
}

pub fn sup_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
