use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Driver families in moment-functional form
/// `f(t, y, z, ν) = φ(t, y, z, m_y(ν), m_z(ν))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverFamily {
    Zero,
    /// `constant + y_coef·y + z_coef·z + mean_y_coef·m_y + mean_z_coef·m_z`
    Affine {
        constant: f64,
        y_coef: f64,
        z_coef: Vec<f64>,
        mean_y_coef: f64,
        mean_z_coef: Vec<f64>,
    },
    /// `sin_y·sin(y) + cos_mean_y·cos(m_y) + Σ tanh_z_r·tanh(z_r) + Σ tanh_mean_z_r·tanh(m_z,r)`
    BoundedNonlinear {
        sin_y: f64,
        cos_mean_y: f64,
        tanh_z: Vec<f64>,
        tanh_mean_z: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub family: DriverFamily,
    /// Declared Lipschitz constant `L_f`.
    pub lipschitz: f64,
    /// Constant added to `φ`; used by perturbation experiments, never parsed.
    #[serde(skip)]
    pub offset: f64,
}

impl DriverSpec {
    pub fn zero() -> Self {
        DriverSpec { family: DriverFamily::Zero, lipschitz: 0.0, offset: 0.0 }
    }

    /// Same driver shifted by a constant.
    pub fn shifted(&self, by: f64) -> Self {
        DriverSpec { offset: self.offset + by, ..self.clone() }
    }

    /// True when φ does not depend on `y` or `z` pathwise (only on time and moments).
    pub fn is_pathwise_constant(&self) -> bool {
        match &self.family {
            DriverFamily::Zero => true,
            DriverFamily::Affine { y_coef, z_coef, .. } => *y_coef == 0.0 && z_coef.iter().all(|c| *c == 0.0),
            DriverFamily::BoundedNonlinear { sin_y, tanh_z, .. } => *sin_y == 0.0 && tanh_z.iter().all(|c| *c == 0.0),
        }
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        let lens = match &self.family {
            DriverFamily::Zero => return Ok(()),
            DriverFamily::Affine { z_coef, mean_z_coef, .. } => (z_coef.len(), mean_z_coef.len()),
            DriverFamily::BoundedNonlinear { tanh_z, tanh_mean_z, .. } => (tanh_z.len(), tanh_mean_z.len()),
        };
        if lens.0 != dim || lens.1 != dim {
            return Err(Error::Config(format!(
                "driver z coefficients have lengths {} and {}, expected d = {dim}",
                lens.0, lens.1
            )));
        }
        Ok(())
    }
}

/// Evaluates `φ(t, y, z, m_y, m_z)`. Pure; `z` and `m_z` have length `d`.
pub fn eval_driver(spec: &DriverSpec, _t: f64, y: f64, z: &[f64], m_y: f64, m_z: &[f64]) -> f64 {
    let value = match &spec.family {
        DriverFamily::Zero => 0.0,
        DriverFamily::Affine { constant, y_coef, z_coef, mean_y_coef, mean_z_coef } => {
            constant + y_coef * y + dot(z_coef, z) + mean_y_coef * m_y + dot(mean_z_coef, m_z)
        }
        DriverFamily::BoundedNonlinear { sin_y, cos_mean_y, tanh_z, tanh_mean_z } => {
            let zt: f64 = tanh_z.iter().zip(z).map(|(c, v)| c * v.tanh()).sum();
            let mt: f64 = tanh_mean_z.iter().zip(m_z).map(|(c, v)| c * v.tanh()).sum();
            sin_y * y.sin() + cos_mean_y * m_y.cos() + zt + mt
        }
    };
    value + spec.offset
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(constant: f64, y: f64, z: f64, my: f64, mz: f64) -> DriverSpec {
        DriverSpec {
            family: DriverFamily::Affine {
                constant,
                y_coef: y,
                z_coef: vec![z],
                mean_y_coef: my,
                mean_z_coef: vec![mz],
            },
            lipschitz: y.abs().max(z.abs()).max(my.abs()).max(mz.abs()),
            offset: 0.0,
        }
    }

    #[test]
    fn zero_affine_is_zero() {
        let d = affine(0.0, 0.0, 0.0, 0.0, 0.0);
        for &(y, z, m) in &[(1.0, -2.0, 3.0), (-7.5, 0.25, 1e6)] {
            assert_eq!(eval_driver(&d, 0.3, y, &[z], m, &[m]), 0.0);
        }
    }

    #[test]
    fn mean_coordinate_identity() {
        let d = affine(0.0, 0.0, 0.0, 1.0, 0.0);
        assert_eq!(eval_driver(&d, 0.0, 4.0, &[9.0], 0.5, &[2.0]), 0.5);
    }

    #[test]
    fn bounded_nonlinear_at_origin() {
        let d = DriverSpec {
            family: DriverFamily::BoundedNonlinear {
                sin_y: 1.0,
                cos_mean_y: 1.0,
                tanh_z: vec![0.0],
                tanh_mean_z: vec![0.0],
            },
            lipschitz: 1.0,
            offset: 0.0,
        };
        assert_eq!(eval_driver(&d, 0.0, 0.0, &[0.0], 0.0, &[0.0]), 1.0);
    }

    #[test]
    fn shift_adds_constant() {
        let d = affine(0.0, 1.0, 0.0, 0.0, 0.0).shifted(0.25);
        assert_eq!(eval_driver(&d, 0.0, 1.0, &[0.0], 0.0, &[0.0]), 1.25);
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let d = DriverSpec {
            family: DriverFamily::BoundedNonlinear {
                sin_y: 0.7,
                cos_mean_y: -0.3,
                tanh_z: vec![0.2, 0.1],
                tanh_mean_z: vec![0.4, -0.4],
            },
            lipschitz: 0.7,
            offset: 0.0,
        };
        let a = eval_driver(&d, 0.1, 1.234, &[0.5, -0.5], 0.77, &[0.1, 0.2]);
        let b = eval_driver(&d, 0.1, 1.234, &[0.5, -0.5], 0.77, &[0.1, 0.2]);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let d = affine(0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(d.check_dim(1).is_ok());
        assert!(matches!(d.check_dim(2), Err(Error::Config(_))));
    }
}
