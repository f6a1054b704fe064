//! Outer loop over penalty and smoothing levels, compensator recovery and the
//! flatness residual.

use std::time::Instant;

use serde::Serialize;

use crate::diagnostics::deficit_metrics;
use crate::error::{Error, Result};
use crate::mollify::{mollify_obstacle, SmoothObstacle};
use crate::paths::ForwardCloud;
use crate::penalized::{solve_penalized, PenalizedSolution, RegressionBasis};
use crate::problem::{eval_boundary, eval_driver, ProblemSpec};

/// Penalty and smoothing ladders with their stopping tolerances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSchedule {
    pub n: Vec<u64>,
    pub k: Vec<usize>,
    pub deficit_tol: f64,
    pub cauchy_tol: f64,
}

impl Default for ConvergenceSchedule {
    fn default() -> Self {
        ConvergenceSchedule {
            n: vec![25, 50, 100, 200, 400, 800],
            k: vec![10, 20, 40],
            deficit_tol: 0.02,
            cauchy_tol: 0.01,
        }
    }
}

impl ConvergenceSchedule {
    pub fn check(&self) -> Result<()> {
        if self.n.is_empty() || self.k.is_empty() {
            return Err(Error::Config("schedule needs at least one n and one k".into()));
        }
        if !self.n.windows(2).all(|w| w[0] < w[1]) || !self.k.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("schedules must be strictly increasing".into()));
        }
        if self.k[0] == 0 {
            return Err(Error::Config("mollification levels must be ≥ 1".into()));
        }
        if !(self.deficit_tol > 0.0) || !(self.cauchy_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// One `(k, n)` level of the convergence trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRecord {
    pub k: usize,
    pub n: u64,
    /// `max_{j<N} (u^k(t_j) − ȳ(t_j))⁺`
    pub sup_deficit: f64,
    pub sup_neg_sq: f64,
    pub integral_neg_sq: f64,
    /// `max_j |ȳ^n(t_j) − ȳ^{prev}(t_j)|`; absent on the first level of each k.
    pub cauchy: Option<f64>,
    pub flatness: f64,
    pub elapsed_ms: f64,
}

/// `K` recovered from the mean dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatorPath {
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ReflectedSolution {
    /// Accepted penalized solution at the last level.
    pub solution: PenalizedSolution,
    /// `u^k` at the accepted level.
    pub obstacle: SmoothObstacle,
    /// `u(t_j)` without smoothing.
    pub exact_obstacle: Vec<f64>,
    pub compensator: CompensatorPath,
    pub levels_n: Vec<u64>,
    pub levels_k: Vec<usize>,
    pub trace: Vec<LevelRecord>,
    /// Flatness residual of the final mean path against `u^k` and the recovered `K`.
    pub flatness: f64,
}

impl ReflectedSolution {
    pub fn mean_y(&self) -> &[f64] {
        &self.solution.mean_y
    }

    /// `max_{j<N} (u^k(t_j) − ȳ(t_j))⁺` at the accepted level.
    pub fn sup_deficit(&self) -> f64 {
        sup_deficit(&self.solution.mean_y, &self.obstacle.values)
    }
}

/// `max_{j<N} (u_j − ȳ_j)⁺`; the terminal node is data and is excluded.
pub fn sup_deficit(mean: &[f64], u: &[f64]) -> f64 {
    let last = mean.len().saturating_sub(1);
    mean[..last].iter().zip(u).map(|(m, u)| (u - m).max(0.0)).fold(0.0, f64::max)
}

pub(crate) fn sup_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `K(t_j) = ȳ(t_0) − ȳ(t_j) − Σ_{l<j} (E[f_l]·dt + E[g_l·Δκ_l])`, with the
/// expectations taken at the scheme's own arguments (conditional means, `Z`
/// and the moments fed to the driver).
pub fn recover_compensator(solution: &PenalizedSolution, spec: &ProblemSpec, cloud: &ForwardCloud) -> CompensatorPath {
    let steps = solution.steps();
    let grid = &solution.grid;
    let dt = grid.dt();
    let d = solution.dim;
    let m = solution.particles as f64;
    let mut integral = 0.0;
    let mut values = vec![0.0; steps + 1];
    for j in 0..steps {
        let t = grid.t(j);
        let c = &solution.conditional_mean[j];
        let z = &solution.z[j];
        let (k_now, k_next) = (cloud.kappa(j), cloud.kappa(j + 1));
        let m_y = solution.driver_mean_y(j);
        let m_z = solution.driver_mean_z(j);
        let mut ef = 0.0;
        let mut eg = 0.0;
        for i in 0..c.len() {
            ef += eval_driver(&spec.driver, t, c[i], &z[i * d..(i + 1) * d], m_y, m_z);
            eg += eval_boundary(&spec.boundary, t, c[i]) * (k_next[i] - k_now[i]);
        }
        integral += ef / m * dt + eg / m;
        values[j + 1] = solution.mean_y[0] - solution.mean_y[j + 1] - integral;
    }
    let scale = 1e-8 * (1.0 + values[steps].abs());
    let warnings = values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] < w[0] - scale)
        .map(|(j, w)| format!("K decreases by {:.3e} on step {j}", w[0] - w[1]))
        .collect();
    CompensatorPath { values, warnings }
}

/// Discrete `∫ (ȳ − u) dK = Σ_j (ȳ(t_j) − u(t_j))·(K(t_{j+1}) − K(t_j))`.
pub fn flatness_residual(mean: &[f64], u: &[f64], k: &[f64]) -> Result<f64> {
    if mean.len() != u.len() {
        return Err(Error::LengthMismatch { left: mean.len(), right: u.len() });
    }
    if mean.len() != k.len() {
        return Err(Error::LengthMismatch { left: mean.len(), right: k.len() });
    }
    Ok(k.windows(2).zip(mean.iter().zip(u)).map(|(w, (m, u))| (m - u) * (w[1] - w[0])).sum())
}

/// Running flatness sum at every node, starting from 0.
pub fn flatness_cumulative(mean: &[f64], u: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    flatness_residual(mean, u, k)?;
    let mut out = Vec::with_capacity(k.len());
    let mut acc = 0.0;
    out.push(0.0);
    for j in 0..k.len() - 1 {
        acc += (mean[j] - u[j]) * (k[j + 1] - k[j]);
        out.push(acc);
    }
    Ok(out)
}

/// Drives `(n, k)` upward on a single cloud until the deficit, Cauchy and
/// smoothing tolerances hold.
pub fn solve_reflected(
    spec: &ProblemSpec,
    cloud: &ForwardCloud,
    schedule: &ConvergenceSchedule,
    basis: &RegressionBasis,
    quad_points: usize,
) -> Result<ReflectedSolution> {
    schedule.check()?;
    let grid = cloud.grid();
    let mut trace = Vec::new();
    let mut levels_k = Vec::new();
    let mut levels_n = Vec::new();

    for &k in &schedule.k {
        let obstacle = mollify_obstacle(&spec.obstacle, k, grid, quad_points)?;
        levels_k.push(k);
        let mut previous: Option<PenalizedSolution> = None;
        let mut accepted = None;
        for &n in &schedule.n {
            let start = Instant::now();
            let solution = solve_penalized(spec, &obstacle, n, cloud, basis)?;
            let (sup_neg_sq, integral_neg_sq) = deficit_metrics(&solution, &obstacle, cloud.mean_kappa())?;
            let cauchy = previous.as_ref().map(|p| sup_abs_diff(&p.mean_y, &solution.mean_y));
            let flatness = flatness_residual(&solution.mean_y, &obstacle.values, &solution.compensator)?;
            let deficit = sup_deficit(&solution.mean_y, &obstacle.values);
            trace.push(LevelRecord {
                k,
                n,
                sup_deficit: deficit,
                sup_neg_sq,
                integral_neg_sq,
                cauchy,
                flatness,
                elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            if !levels_n.contains(&n) {
                levels_n.push(n);
            }
            // Without a previous level, only an inactive penalty counts as settled.
            let settled = match cauchy {
                Some(c) => c <= schedule.cauchy_tol,
                None => solution.compensator[solution.steps()] == 0.0,
            };
            if deficit <= schedule.deficit_tol && settled {
                accepted = Some(solution);
                break;
            }
            previous = Some(solution);
        }
        let Some(solution) = accepted else {
            return Err(Error::NotConverged { trace });
        };
        if obstacle.sup_gap <= schedule.deficit_tol / 2.0 {
            let compensator = recover_compensator(&solution, spec, cloud);
            let flatness = flatness_residual(&solution.mean_y, &obstacle.values, &compensator.values)?;
            let exact_obstacle = grid.nodes().into_iter().map(|t| spec.obstacle.eval(t)).collect();
            return Ok(ReflectedSolution {
                solution,
                obstacle,
                exact_obstacle,
                compensator,
                levels_n,
                levels_k,
                trace,
                flatness,
            });
        }
    }
    Err(Error::NotConverged { trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{simulate_forward, TimeGrid};
    use crate::penalized::BasisKind;
    use crate::problem::{BoundarySpec, Curve, DriverSpec, KappaSpec, TerminalMode, TerminalSpec};

    fn spec(obstacle: Curve) -> ProblemSpec {
        ProblemSpec {
            horizon: 1.0,
            brownian_dim: 1,
            driver: DriverSpec::zero(),
            boundary: BoundarySpec::zero(),
            terminal: TerminalSpec { mode: TerminalMode::Gaussian { mean: 0.0, std: 1.0 }, declared_mean: None },
            obstacle,
            kappa: KappaSpec::Zero,
            forward: None,
        }
    }

    const BASIS: RegressionBasis = RegressionBasis { kind: BasisKind::BrownianPolynomial, degree: 2 };

    #[test]
    fn flatness_examples() {
        let k0 = vec![0.0; 5];
        assert_eq!(flatness_residual(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5], &k0).unwrap(), 0.0);

        let t: Vec<f64> = (0..=10).map(|j| j as f64 / 10.0).collect();
        let u = vec![0.3; 11];
        let mean: Vec<f64> = u.iter().map(|v| v + 1.0).collect();
        assert!((flatness_residual(&mean, &u, &t).unwrap() - 1.0).abs() < 1e-14);

        assert!(matches!(flatness_residual(&[0.0; 3], &[0.0; 4], &[0.0; 3]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn cumulative_flatness_ends_at_residual() {
        let mean = [1.0, 0.5, 0.2, 0.4];
        let u = [0.0, 0.5, 0.3, 0.1];
        let k = [0.0, 0.1, 0.15, 0.4];
        let cum = flatness_cumulative(&mean, &u, &k).unwrap();
        assert_eq!(cum[0], 0.0);
        assert!((cum[3] - flatness_residual(&mean, &u, &k).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn zero_driver_compensator_collapses() {
        let s = spec(Curve::Sine { amplitude: 0.5, frequency: 1.0, offset: 0.0 });
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let cloud = simulate_forward(&s, &grid, 2000, 3).unwrap();
        let uk = mollify_obstacle(&s.obstacle, 10, &grid, 64).unwrap();
        let sol = solve_penalized(&s, &uk, 200, &cloud, &BASIS).unwrap();
        let k = recover_compensator(&sol, &s, &cloud);
        for j in 0..=20 {
            assert!((k.values[j] - (sol.mean_y[0] - sol.mean_y[j])).abs() < 1e-14);
            assert!((k.values[j] - sol.compensator[j]).abs() < 1e-10);
        }
        assert!(k.warnings.is_empty());
    }

    #[test]
    fn slack_obstacle_converges_immediately() {
        let s = spec(Curve::Constant { value: -1.0 });
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let cloud = simulate_forward(&s, &grid, 2000, 3).unwrap();
        let r = solve_reflected(&s, &cloud, &ConvergenceSchedule::default(), &BASIS, 64).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert!(r.compensator.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn schedule_validation() {
        let mut s = ConvergenceSchedule { n: vec![50, 25], ..Default::default() };
        assert!(s.check().is_err());
        s.n.clear();
        assert!(s.check().is_err());
    }
}
