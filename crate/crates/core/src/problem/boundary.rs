use serde::{Deserialize, Serialize};

use super::Curve;

/// Families for the coefficient `g(t, y)` of the `dκ` integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryFamily {
    Zero,
    /// `intercept + slope·y`
    LinearMonotone {
        slope: f64,
        intercept: f64,
    },
    /// `slope·y − cubic·y³`
    NonlinearMonotone {
        slope: f64,
        cubic: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub family: BoundaryFamily,
    /// Declared one-sided monotonicity constant, must be negative.
    pub beta: f64,
    /// Declared growth constant `L_g` in `|g(t,y)| ≤ ψ_t + L_g|y|`.
    pub growth: f64,
    /// Deterministic `ψ_t ≥ 0`.
    pub psi: Curve,
}

impl BoundarySpec {
    /// `g ≡ 0`, with placeholder constants satisfying the sign requirements.
    pub fn zero() -> Self {
        BoundarySpec { family: BoundaryFamily::Zero, beta: -1.0, growth: 1.0, psi: Curve::Constant { value: 0.0 } }
    }

    /// `(slope, intercept)` when `g` is affine in `y`.
    pub fn affine_parts(&self) -> Option<(f64, f64)> {
        match self.family {
            BoundaryFamily::Zero => Some((0.0, 0.0)),
            BoundaryFamily::LinearMonotone { slope, intercept } => Some((slope, intercept)),
            BoundaryFamily::NonlinearMonotone { slope, cubic: 0.0 } => Some((slope, 0.0)),
            BoundaryFamily::NonlinearMonotone { .. } => None,
        }
    }
}

/// Evaluates `g(t, y)`. Pure.
pub fn eval_boundary(spec: &BoundarySpec, _t: f64, y: f64) -> f64 {
    match spec.family {
        BoundaryFamily::Zero => 0.0,
        BoundaryFamily::LinearMonotone { slope, intercept } => intercept + slope * y,
        BoundaryFamily::NonlinearMonotone { slope, cubic } => slope * y - cubic * y * y * y,
    }
}
