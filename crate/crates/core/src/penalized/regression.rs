//! Least-squares estimator of conditional expectations on a particle cloud.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gram matrices with a larger condition estimate get the Tikhonov fudge.
const NEAR_SINGULAR: f64 = 1e10;
/// Regularized systems above this are rejected.
const SINGULAR: f64 = 1e12;
const RIDGE_SCALE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Constant,
    /// Polynomials in the forward state `X_t` (the Brownian position when no forward SDE is given).
    ForwardPolynomial,
    /// Polynomials in the current Brownian position `B_t`.
    BrownianPolynomial,
}

/// Separable monomials `1, x_r, x_r², …, x_r^p` for each coordinate `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionBasis {
    pub kind: BasisKind,
    pub degree: usize,
}

impl RegressionBasis {
    pub const fn constant() -> Self {
        RegressionBasis { kind: BasisKind::Constant, degree: 0 }
    }

    pub fn size(&self, dim: usize) -> usize {
        match self.kind {
            BasisKind::Constant => 1,
            _ => 1 + self.degree * dim,
        }
    }

    fn fill_row(&self, x: &[f64], row: &mut [f64]) {
        row[0] = 1.0;
        if self.kind == BasisKind::Constant {
            return;
        }
        let mut c = 1;
        for &v in x {
            let mut p = 1.0;
            for _ in 0..self.degree {
                p *= v;
                row[c] = p;
                c += 1;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub fitted: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Root mean square of `target - fitted`.
    pub residual_rms: f64,
}

/// Normal-equation projector for one design matrix, reusable across targets.
#[derive(Debug, Clone)]
pub struct Projector {
    rows: usize,
    cols: usize,
    design: Vec<f64>,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    condition: f64,
    regularized: bool,
}

fn condition_estimate(g: &DMatrix<f64>) -> f64 {
    if g.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let Some(eig) = g.clone().try_symmetric_eigen(f64::EPSILON, 1000) else {
        return f64::INFINITY;
    };
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

impl Projector {
    /// Builds the design from `features` (`M` rows of `dim` values).
    pub fn new(features: &[f64], dim: usize, basis: &RegressionBasis) -> Result<Self> {
        if dim == 0 || !features.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch { left: features.len(), right: dim });
        }
        let rows = features.len() / dim;
        let cols = basis.size(dim);
        if rows <= cols {
            return Err(Error::RankDeficient { condition: f64::INFINITY });
        }
        let mut design = vec![0.0; rows * cols];
        design.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
            basis.fill_row(&features[i * dim..(i + 1) * dim], row);
        });
        let mut gram = DMatrix::<f64>::zeros(cols, cols);
        for row in design.chunks_exact(cols) {
            for a in 0..cols {
                for b in a..cols {
                    gram[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..cols {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let mut condition = condition_estimate(&gram);
        let mut regularized = false;
        if condition > NEAR_SINGULAR {
            let ridge = RIDGE_SCALE * gram.trace() / cols as f64;
            for a in 0..cols {
                gram[(a, a)] += ridge;
            }
            condition = condition_estimate(&gram);
            regularized = true;
        }
        if !(condition <= SINGULAR) {
            return Err(Error::RankDeficient { condition });
        }
        let factor = gram.cholesky().ok_or(Error::RankDeficient { condition })?;
        Ok(Projector { rows, cols, design, factor, condition, regularized })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn regularized(&self) -> bool {
        self.regularized
    }

    pub fn coefficients(&self, targets: &[f64]) -> Result<Vec<f64>> {
        if targets.len() != self.rows {
            return Err(Error::LengthMismatch { left: self.rows, right: targets.len() });
        }
        let mut rhs = DVector::<f64>::zeros(self.cols);
        for (row, y) in self.design.chunks_exact(self.cols).zip(targets) {
            for a in 0..self.cols {
                rhs[a] += row[a] * y;
            }
        }
        Ok(self.factor.solve(&rhs).iter().cloned().collect())
    }

    pub fn fit(&self, targets: &[f64]) -> Result<Fit> {
        let coefficients = self.coefficients(targets)?;
        let fitted: Vec<f64> = self
            .design
            .par_chunks(self.cols)
            .map(|row| row.iter().zip(&coefficients).map(|(a, b)| a * b).sum())
            .collect();
        let ss: f64 = fitted.iter().zip(targets).map(|(f, y)| (y - f) * (y - f)).sum();
        Ok(Fit { residual_rms: (ss / self.rows as f64).sqrt(), fitted, coefficients })
    }
}

/// Least-squares projection of `targets` onto the basis evaluated at `features`.
pub fn regress_conditional(targets: &[f64], features: &[f64], dim: usize, basis: &RegressionBasis) -> Result<Fit> {
    Projector::new(features, dim, basis)?.fit(targets)
}
