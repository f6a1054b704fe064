//! Backward particle scheme for the penalized (unconstrained) equation.
//!
//! Each step regresses the next-step cloud onto the current state, applies
//! the driver and the `dκ` coefficient explicitly at the conditional mean,
//! and then lifts the whole cloud by the implicit mean-level penalty.

mod regression;

use rayon::prelude::*;

pub use regression::{regress_conditional, BasisKind, Fit, Projector, RegressionBasis};

use crate::error::{Error, Result};
use crate::mollify::SmoothObstacle;
use crate::paths::{mean, ForwardCloud, TimeGrid};
use crate::problem::{eval_boundary, eval_driver, ProblemSpec};

/// Root `x` of `x = p + n·δ·(x − u)⁻`.
///
/// The map is piecewise linear, so the root is `p` when `p ≥ u` and
/// `(p + nδu)/(1 + nδ)` otherwise; it always lies between `p` and `u`.
pub fn implicit_mean_penalty(p_val: f64, u_val: f64, n: f64, delta: f64) -> f64 {
    if p_val >= u_val {
        p_val
    } else {
        let w = n * delta;
        (p_val + w * u_val) / (1.0 + w)
    }
}

/// Discrete compensator increment `n·(ȳ − u)⁻·δ` with `δ = dt + ΔE[κ]`.
pub fn penalty_increment(mean_after_step: f64, u_val: f64, n: f64, delta: f64) -> f64 {
    n * (u_val - mean_after_step).max(0.0) * delta
}

/// Particle solution of the penalized equation at levels `(n, k)`.
#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub n: u64,
    pub k: usize,
    pub grid: TimeGrid,
    pub particles: usize,
    pub dim: usize,
    /// `N+1` arrays of `M` values `Y_i(t_j)`.
    pub y: Vec<Vec<f64>>,
    /// `N` arrays of `M·d` values `Z_i(t_j)`, row-major per particle.
    pub z: Vec<Vec<f64>>,
    /// `N` arrays of `M` regression estimates of `E[Y(t_{j+1}) | F_{t_j}]`.
    pub conditional_mean: Vec<Vec<f64>>,
    /// `ȳ(t_j)`, fixed-order mean of `Y(t_j)`.
    pub mean_y: Vec<f64>,
    /// `N` rows of `E[Z(t_j)]`.
    pub mean_z: Vec<Vec<f64>>,
    /// Mean of `Y` at the step before the penalty is applied.
    pub pre_penalty_mean: Vec<f64>,
    /// `K(t_j)` accumulated from the per-step increments, `K(t_0) = 0`.
    pub compensator: Vec<f64>,
    /// `K(t_{j+1}) − K(t_j)`.
    pub increments: Vec<f64>,
    /// Residual RMS of the conditional-mean regression per step.
    pub residual_rms: Vec<f64>,
}

impl PenalizedSolution {
    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// The `y` moment fed to the driver at step `j` (taken from the step-`j+1` cloud).
    pub fn driver_mean_y(&self, j: usize) -> f64 {
        self.mean_y[j + 1]
    }

    /// The `z` moment fed to the driver at step `j`.
    pub fn driver_mean_z(&self, j: usize) -> &[f64] {
        &self.mean_z[j]
    }

    /// Mean of `Z` at node `j`, with the last interval's value repeated at `t_N`.
    pub fn mean_z_at_node(&self, j: usize) -> &[f64] {
        &self.mean_z[j.min(self.steps() - 1)]
    }
}

/// Standardized features for step `j`; coordinates without spread are dropped.
/// Returns the features and the number of kept coordinates.
fn step_features(cloud: &ForwardCloud, basis: &RegressionBasis, node: usize) -> (Vec<f64>, usize) {
    let m = cloud.particles();
    let d = cloud.dim();
    let raw = match basis.kind {
        BasisKind::Constant => return (vec![0.0; m], 0),
        BasisKind::ForwardPolynomial => cloud.forward(node).unwrap_or_else(|| cloud.brownian(node)),
        BasisKind::BrownianPolynomial => cloud.brownian(node),
    };
    let mut kept = Vec::new();
    for r in 0..d {
        let col = (0..m).map(|i| raw[i * d + r]);
        let mu = col.clone().sum::<f64>() / m as f64;
        let var = col.map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
        let sd = var.sqrt();
        if sd > 1e-12 * (1.0 + mu.abs()) {
            kept.push((r, mu, sd));
        }
    }
    if kept.is_empty() {
        return (vec![0.0; m], 0);
    }
    let k = kept.len();
    let mut out = vec![0.0; m * k];
    out.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        for (c, &(r, mu, sd)) in kept.iter().enumerate() {
            row[c] = (raw[i * d + r] - mu) / sd;
        }
    });
    (out, k)
}

/// Solves the penalized equation backward from `Y(t_N) = ξ` on `cloud`.
pub fn solve_penalized(
    spec: &ProblemSpec,
    obstacle: &SmoothObstacle,
    n: u64,
    cloud: &ForwardCloud,
    basis: &RegressionBasis,
) -> Result<PenalizedSolution> {
    let grid = *cloud.grid();
    let steps = grid.steps();
    if obstacle.values.len() != steps + 1 {
        return Err(Error::LengthMismatch { left: steps + 1, right: obstacle.values.len() });
    }
    if spec.brownian_dim != cloud.dim() {
        return Err(Error::Config(format!(
            "problem has d = {} but the cloud carries {} Brownian coordinates",
            spec.brownian_dim,
            cloud.dim()
        )));
    }
    let m = cloud.particles();
    let d = cloud.dim();
    let dt = grid.dt();
    let penalty = n as f64;
    let mean_kappa = cloud.mean_kappa();

    let mut y = vec![Vec::new(); steps + 1];
    let mut z = vec![Vec::new(); steps];
    let mut conditional_mean = vec![Vec::new(); steps];
    let mut mean_z = vec![Vec::new(); steps];
    let mut pre_penalty_mean = vec![0.0; steps];
    let mut increments = vec![0.0; steps];
    let mut residual_rms = vec![0.0; steps];
    y[steps] = cloud.terminal().to_vec();

    for j in (0..steps).rev() {
        let t = grid.t(j);
        let (features, kept) = step_features(cloud, basis, j);
        let projector = if kept == 0 {
            Projector::new(&features, 1, &RegressionBasis::constant())?
        } else {
            Projector::new(&features, kept, basis)?
        };
        let y_next = &y[j + 1];

        let db = cloud.increments(j);
        let mut z_step = vec![0.0; m * d];
        for r in 0..d {
            let targets: Vec<f64> = (0..m).map(|i| y_next[i] * db[i * d + r] / dt).collect();
            let fit = projector.fit(&targets)?;
            for (i, v) in fit.fitted.into_iter().enumerate() {
                z_step[i * d + r] = v;
            }
        }
        let c_fit = projector.fit(y_next)?;
        let c = c_fit.fitted;

        let m_y = mean(y_next);
        let mut m_z = vec![0.0; d];
        for row in z_step.chunks_exact(d) {
            for (acc, v) in m_z.iter_mut().zip(row) {
                *acc += v;
            }
        }
        m_z.iter_mut().for_each(|v| *v /= m as f64);

        let k_now = cloud.kappa(j);
        let k_next = cloud.kappa(j + 1);
        let unpenalized: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| {
                let zi = &z_step[i * d..(i + 1) * d];
                c[i] + eval_driver(&spec.driver, t, c[i], zi, m_y, &m_z) * dt
                    + eval_boundary(&spec.boundary, t, c[i]) * (k_next[i] - k_now[i])
            })
            .collect();

        let p = mean(&unpenalized);
        let delta = dt + (mean_kappa[j + 1] - mean_kappa[j]);
        let lifted = implicit_mean_penalty(p, obstacle.values[j], penalty, delta);
        let dk = lifted - p;
        let y_now: Vec<f64> = unpenalized.iter().map(|v| v + dk).collect();

        if y_now.iter().chain(&z_step).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: j });
        }
        y[j] = y_now;
        z[j] = z_step;
        conditional_mean[j] = c;
        mean_z[j] = m_z;
        pre_penalty_mean[j] = p;
        increments[j] = dk;
        residual_rms[j] = c_fit.residual_rms;
    }

    let mut compensator = vec![0.0; steps + 1];
    for j in 0..steps {
        compensator[j + 1] = compensator[j] + increments[j];
    }
    let mean_y = y.iter().map(|v| mean(v)).collect();

    Ok(PenalizedSolution {
        n,
        k: obstacle.level,
        grid,
        particles: m,
        dim: d,
        y,
        z,
        conditional_mean,
        mean_y,
        mean_z,
        pre_penalty_mean,
        compensator,
        increments,
        residual_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bisect_fixed_point(p: f64, u: f64, w: f64) -> f64 {
        // h(x) = x − p − w·(u − x)⁺ is strictly increasing.
        let h = |x: f64| x - p - w * (u - x).max(0.0);
        let (mut lo, mut hi) = (p.min(u) - 1.0, p.max(u) + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn inactive_penalty() {
        assert_eq!(implicit_mean_penalty(2.0, 1.0, 10.0, 0.1), 2.0);
        assert_eq!(penalty_increment(2.0, 1.0, 10.0, 0.1), 0.0);
    }

    #[test]
    fn unit_weight_root_matches_bisection() {
        let x = implicit_mean_penalty(0.0, 1.0, 1.0, 1.0);
        assert!((x - 0.5).abs() < 1e-15);
        assert!((x - bisect_fixed_point(0.0, 1.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn saturation() {
        let x = implicit_mean_penalty(0.0, 1.0, 1e6, 1.0);
        assert!((x - 1e6 / (1.0 + 1e6)).abs() < 1e-15);
    }

    #[test]
    fn increment_from_definition() {
        assert!((penalty_increment(0.9, 1.0, 10.0, 0.01) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn implicit_root_and_increment_agree() {
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let u = next() * 4.0 - 2.0;
            let p = u - next() * 3.0 - 1e-6;
            let n = (next() * 1000.0).floor();
            let delta = next() * 0.05;
            let x = implicit_mean_penalty(p, u, n, delta);
            let inc = penalty_increment(x, u, n, delta);
            assert!((x - p - inc).abs() <= 1e-12 * (1.0 + p.abs() + u.abs()));
        }
    }

    proptest! {
        #[test]
        fn root_is_bracketed_and_monotone(p in -5.0f64..5.0, dp in 0.0f64..1.0, u in -5.0f64..5.0, w in 0.0f64..1e4) {
            let x = implicit_mean_penalty(p, u, w, 1.0);
            prop_assert!(x >= p.min(u) - 1e-12 && x <= p.max(u) + 1e-12);
            prop_assert!(implicit_mean_penalty(p + dp, u, w, 1.0) >= x - 1e-12);
            prop_assert!((x - bisect_fixed_point(p, u, w)).abs() < 1e-9 * (1.0 + w));
        }
    }
}
