//! Ingredients of the reflected equation: driver, monotone boundary
//! coefficient, terminal value, obstacle and the `κ` process.

mod boundary;
mod driver;
mod validate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use boundary::{eval_boundary, BoundaryFamily, BoundarySpec};
pub use driver::{eval_driver, DriverFamily, DriverSpec};
pub use validate::{validate_problem, AssumptionCheck, CheckStatus, ValidationReport};

/// A deterministic real function of time.
///
/// Outside the tabulated range a table is extended by its end values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Curve {
    Constant {
        value: f64,
    },
    Linear {
        intercept: f64,
        slope: f64,
    },
    /// `offset + amplitude * sin(frequency * π * t)`
    Sine {
        amplitude: f64,
        frequency: f64,
        offset: f64,
    },
    /// `offset + slope * |t - center|`
    Abs {
        center: f64,
        slope: f64,
        offset: f64,
    },
    /// `(t_i, u_i)` pairs, linearly interpolated.
    Tabulated {
        points: Vec<(f64, f64)>,
    },
}

/// The obstacle `u`.
pub type ObstacleCurve = Curve;

impl Curve {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Curve::Constant { value } => *value,
            Curve::Linear { intercept, slope } => intercept + slope * t,
            Curve::Sine { amplitude, frequency, offset } => {
                offset + amplitude * (frequency * std::f64::consts::PI * t).sin()
            }
            Curve::Abs { center, slope, offset } => offset + slope * (t - center).abs(),
            Curve::Tabulated { points } => interpolate(points, t),
        }
    }

    /// Times where the curve fails to be differentiable.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Curve::Abs { center, .. } => vec![*center],
            Curve::Tabulated { points } => points.iter().map(|p| p.0).collect(),
            _ => Vec::new(),
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        if let Curve::Tabulated { points } = self {
            if points.is_empty() {
                return Err(Error::Config(format!("{what}: tabulated curve has no points")));
            }
            if points.iter().any(|(t, u)| !t.is_finite() || !u.is_finite()) {
                return Err(Error::Config(format!("{what}: tabulated curve has non-finite entries")));
            }
            if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::Config(format!("{what}: tabulated times must be strictly increasing")));
            }
        }
        Ok(())
    }
}

fn interpolate(points: &[(f64, f64)], t: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= t);
    let (t0, u0) = points[i - 1];
    let (t1, u1) = points[i];
    u0 + (u1 - u0) * (t - t0) / (t1 - t0)
}

/// Law of the terminal value `ξ`.
///
/// The direct samplers are realized from the terminal Brownian position so
/// that `ξ` is measurable with respect to the Brownian filtration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalMode {
    /// `mean + std * B_T^1 / sqrt(T)`
    Gaussian { mean: f64, std: f64 },
    /// `B_T^1`
    Brownian,
    /// `intercept + slope * X_T^1`
    ForwardAffine { intercept: f64, slope: f64 },
    /// `(X_T^1 - strike)^+`
    ForwardCall { strike: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSpec {
    pub mode: TerminalMode,
    /// Analytic `E[ξ]` when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_mean: Option<f64>,
}

impl TerminalSpec {
    pub fn uses_forward(&self) -> bool {
        matches!(self.mode, TerminalMode::ForwardAffine { .. } | TerminalMode::ForwardCall { .. })
    }

    /// Declared mean, falling back to the closed form of the direct samplers.
    pub fn known_mean(&self) -> Option<f64> {
        self.declared_mean.or(match self.mode {
            TerminalMode::Gaussian { mean, .. } => Some(mean),
            TerminalMode::Brownian => Some(0.0),
            _ => None,
        })
    }

    /// Evaluates `ξ` for one particle from its terminal Brownian and forward states.
    pub fn sample(&self, horizon: f64, brownian_terminal: &[f64], forward_terminal: Option<&[f64]>) -> f64 {
        match self.mode {
            TerminalMode::Gaussian { mean, std } => mean + std * brownian_terminal[0] / horizon.sqrt(),
            TerminalMode::Brownian => brownian_terminal[0],
            TerminalMode::ForwardAffine { intercept, slope } => {
                let x = forward_terminal.expect("forward state required")[0];
                intercept + slope * x
            }
            TerminalMode::ForwardCall { strike } => {
                let x = forward_terminal.expect("forward state required")[0];
                (x - strike).max(0.0)
            }
        }
    }
}

/// Non-negative integrand `h` of a pathwise `κ_t = scale * ∫_0^t h(X_s) ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KappaIntegrand {
    Abs,
    Square,
}

impl KappaIntegrand {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            KappaIntegrand::Abs => x.abs(),
            KappaIntegrand::Square => x * x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KappaSpec {
    Zero,
    /// `κ_t = rate * t`
    Linear {
        rate: f64,
    },
    /// A deterministic curve with `κ_0 = 0`.
    Curve {
        curve: Curve,
    },
    /// `κ_t = scale * ∫_0^t h(X_s^1) ds` along each simulated path.
    PathIntegral {
        integrand: KappaIntegrand,
        scale: f64,
    },
}

impl KappaSpec {
    pub fn is_zero(&self) -> bool {
        matches!(self, KappaSpec::Zero)
    }

    /// `κ_t` for the deterministic families, `None` for pathwise ones.
    pub fn deterministic_value(&self, t: f64) -> Option<f64> {
        match self {
            KappaSpec::Zero => Some(0.0),
            KappaSpec::Linear { rate } => Some(rate * t),
            KappaSpec::Curve { curve } => Some(curve.eval(t)),
            KappaSpec::PathIntegral { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardDrift {
    pub intercept: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForwardDiffusion {
    /// `σ dB`
    Constant { sigma: f64 },
    /// `σ X dB`
    Proportional { sigma: f64 },
}

/// Componentwise forward SDE `dX^r = (a + b X^r) dt + σ(X^r) dB^r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardSpec {
    pub initial: Vec<f64>,
    pub drift: ForwardDrift,
    pub diffusion: ForwardDiffusion,
}

impl ForwardSpec {
    pub fn drift(&self, x: f64) -> f64 {
        self.drift.intercept + self.drift.slope * x
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        match self.diffusion {
            ForwardDiffusion::Constant { sigma } => sigma,
            ForwardDiffusion::Proportional { sigma } => sigma * x,
        }
    }
}

/// Complete description of one reflected equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub horizon: f64,
    pub brownian_dim: usize,
    pub driver: DriverSpec,
    pub boundary: BoundarySpec,
    pub terminal: TerminalSpec,
    pub obstacle: ObstacleCurve,
    pub kappa: KappaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<ForwardSpec>,
}

impl ProblemSpec {
    /// Structural checks whose failure makes the problem meaningless.
    /// Sampled assumption checks are in [`validate_problem`].
    pub fn check(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!("horizon T must be > 0, got {}", self.horizon)));
        }
        if self.brownian_dim < 1 {
            return Err(Error::Config("Brownian dimension d must be ≥ 1".into()));
        }
        if !(self.boundary.beta < 0.0) {
            return Err(Error::Config(format!("boundary beta must be < 0, got {}", self.boundary.beta)));
        }
        if !(self.boundary.growth > 0.0) {
            return Err(Error::Config(format!(
                "boundary growth constant L_g must be > 0, got {}",
                self.boundary.growth
            )));
        }
        if !(self.driver.lipschitz >= 0.0) {
            return Err(Error::Config(format!(
                "driver Lipschitz constant L_f must be ≥ 0, got {}",
                self.driver.lipschitz
            )));
        }
        self.driver.check_dim(self.brownian_dim)?;
        self.obstacle.check("obstacle")?;
        self.boundary.psi.check("boundary psi")?;
        if let KappaSpec::Curve { curve } = &self.kappa {
            curve.check("kappa curve")?;
        }
        if let TerminalMode::Gaussian { std, .. } = self.terminal.mode {
            if std < 0.0 {
                return Err(Error::Config(format!("terminal std must be ≥ 0, got {std}")));
            }
        }
        match &self.forward {
            Some(fwd) if fwd.initial.len() != self.brownian_dim => {
                return Err(Error::Config(format!(
                    "forward initial state has {} coordinates, expected d = {}",
                    fwd.initial.len(),
                    self.brownian_dim
                )))
            }
            None if self.terminal.uses_forward() => {
                return Err(Error::Config(
                    "terminal value is a functional of the forward state but no forward SDE is given".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_interpolation_is_linear_and_clamped() {
        let c = Curve::Tabulated { points: vec![(0.0, 0.0), (1.0, 2.0), (2.0, 0.0)] };
        assert_eq!(c.eval(0.5), 1.0);
        assert_eq!(c.eval(1.5), 1.0);
        assert_eq!(c.eval(-1.0), 0.0);
        assert_eq!(c.eval(3.0), 0.0);
        assert_eq!(c.eval(1.0), 2.0);
    }

    #[test]
    fn unsorted_table_is_rejected() {
        let c = Curve::Tabulated { points: vec![(0.0, 0.0), (0.5, 1.0), (0.4, 2.0)] };
        assert!(matches!(c.check("obstacle"), Err(Error::Config(_))));
    }
}
