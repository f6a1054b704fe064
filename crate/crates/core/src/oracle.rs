//! Deterministic reference solvers for problems whose mean path closes into a
//! one-dimensional reflected backward equation.
//!
//! Two references are provided. The running-maximum formula solves the
//! Skorokhod problem when the unreflected mean `m(t)` is known explicitly.
//! The penalized fine-grid solver handles affine mean drifts and checks itself
//! by halving the step and doubling the penalty.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::penalized::implicit_mean_penalty;
use crate::problem::{Curve, DriverFamily, KappaSpec, ProblemSpec, TerminalMode};
use crate::table::g12;

/// Relative slack in the terminal feasibility check `m(T) ≥ u(T)`.
const FEASIBILITY_SLACK: f64 = 1e-12;
const SELF_REFINEMENT_LIMIT: f64 = 1e-4;
pub const DEFAULT_FINE_STEPS: usize = 10_000;
pub const DEFAULT_ORACLE_PENALTY: f64 = 1e5;

/// `(t, ȳ, K)` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePath {
    pub t: Vec<f64>,
    pub mean: Vec<f64>,
    pub compensator: Vec<f64>,
}

fn interpolate(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    let i = ts.partition_point(|s| *s <= t);
    if i == 0 {
        return vs[0];
    }
    if i == ts.len() {
        return vs[ts.len() - 1];
    }
    let (t0, t1) = (ts[i - 1], ts[i]);
    let w = (t - t0) / (t1 - t0);
    vs[i - 1] * (1.0 - w) + vs[i] * w
}

impl OraclePath {
    pub fn mean_at(&self, t: f64) -> f64 {
        interpolate(&self.t, &self.mean, t)
    }

    pub fn compensator_at(&self, t: f64) -> f64 {
        interpolate(&self.t, &self.compensator, t)
    }

    /// Every `stride`-th node, always keeping the last.
    pub fn subsample(&self, stride: usize) -> OraclePath {
        let last = self.t.len() - 1;
        let idx: Vec<usize> = (0..=last).filter(|j| j % stride == 0 || *j == last).collect();
        OraclePath {
            t: idx.iter().map(|&j| self.t[j]).collect(),
            mean: idx.iter().map(|&j| self.mean[j]).collect(),
            compensator: idx.iter().map(|&j| self.compensator[j]).collect(),
        }
    }

    /// Plain-text table `t mean K`, 12 significant digits.
    pub fn to_table(&self) -> String {
        let mut out = String::from("# t mean K\n");
        for j in 0..self.t.len() {
            out.push_str(&format!("{} {} {}\n", g12(self.t[j]), g12(self.mean[j]), g12(self.compensator[j])));
        }
        out
    }

    pub fn from_table(text: &str) -> Result<OraclePath> {
        let mut path = OraclePath { t: Vec::new(), mean: Vec::new(), compensator: Vec::new() };
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("table line {}: {e}", line_no + 1)))?;
            if fields.len() != 3 {
                return Err(Error::Config(format!("table line {}: expected 3 columns", line_no + 1)));
            }
            path.t.push(fields[0]);
            path.mean.push(fields[1]);
            path.compensator.push(fields[2]);
        }
        if path.t.is_empty() {
            return Err(Error::Config("empty oracle table".into()));
        }
        Ok(path)
    }
}

/// Minimal reflection of a constant mean `m` above `u`.
///
/// Returns `(ȳ, K)` with `K(T) − K(t_j) = max_{l ≥ j} (u_l − m)⁺` and `K(0) = 0`.
pub fn skorokhod_closed_form(m: f64, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    skorokhod_free_path(&vec![m; u.len()], u)
}

/// Minimal reflection of a time-varying unreflected mean `m(t_j)` above `u`.
pub fn skorokhod_free_path(m: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if m.len() != u.len() {
        return Err(Error::LengthMismatch { left: m.len(), right: u.len() });
    }
    let Some(last) = u.len().checked_sub(1) else {
        return Err(Error::EmptyCloud);
    };
    if m[last] < u[last] - FEASIBILITY_SLACK * (1.0 + u[last].abs()) {
        return Err(Error::ConstraintInfeasible { mean: m[last], obstacle: u[last] });
    }
    let mut remaining = vec![0.0; u.len()];
    let mut running = 0.0f64;
    for j in (0..u.len()).rev() {
        running = running.max(u[j] - m[j]);
        remaining[j] = running;
    }
    let total = remaining[0];
    let mean = m.iter().zip(&remaining).map(|(m, a)| m + a).collect();
    let compensator = remaining.iter().map(|a| total - a).collect();
    Ok((mean, compensator))
}

/// Running-maximum oracle for `m(t)` and `u` sampled on `steps` intervals of `[0, T]`.
pub fn skorokhod_oracle(m: impl Fn(f64) -> f64, u: &Curve, horizon: f64, steps: usize) -> Result<OraclePath> {
    let t: Vec<f64> =
        (0..=steps).map(|j| if j == steps { horizon } else { horizon * j as f64 / steps as f64 }).collect();
    let mv: Vec<f64> = t.iter().map(|&s| m(s)).collect();
    let uv: Vec<f64> = t.iter().map(|&s| u.eval(s)).collect();
    let (mean, compensator) = skorokhod_free_path(&mv, &uv)?;
    Ok(OraclePath { t, mean, compensator })
}

/// Mean drift `φ̄(t, ȳ)` per unit time.
pub type MeanDrift = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// One-dimensional reflected backward equation for the mean path:
/// `dȳ = −φ̄(t, ȳ) dt − (a ȳ + b) dκ̄ − dK`, `ȳ(T) = m_T`, `ȳ ≥ u`.
#[derive(Clone)]
pub struct MeanProblem {
    pub horizon: f64,
    pub terminal_mean: f64,
    pub obstacle: Curve,
    pub drift: MeanDrift,
    /// Deterministic `κ̄`.
    pub kappa: KappaSpec,
    /// `(a, b)` in `E[g] = a ȳ + b`.
    pub boundary: (f64, f64),
    pub fine_steps: usize,
}

impl fmt::Debug for MeanProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeanProblem")
            .field("horizon", &self.horizon)
            .field("terminal_mean", &self.terminal_mean)
            .field("obstacle", &self.obstacle)
            .field("kappa", &self.kappa)
            .field("boundary", &self.boundary)
            .field("fine_steps", &self.fine_steps)
            .finish_non_exhaustive()
    }
}

impl MeanProblem {
    pub fn new(
        horizon: f64,
        terminal_mean: f64,
        obstacle: Curve,
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        MeanProblem {
            horizon,
            terminal_mean,
            obstacle,
            drift: Arc::new(drift),
            kappa: KappaSpec::Zero,
            boundary: (0.0, 0.0),
            fine_steps: DEFAULT_FINE_STEPS,
        }
    }

    pub fn with_fine_steps(mut self, steps: usize) -> Self {
        self.fine_steps = steps;
        self
    }

    pub fn with_boundary(mut self, kappa: KappaSpec, slope: f64, intercept: f64) -> Self {
        self.kappa = kappa;
        self.boundary = (slope, intercept);
        self
    }

    fn march(&self, steps: usize, penalty: f64) -> Result<OraclePath> {
        let horizon = self.horizon;
        let dt = horizon / steps as f64;
        let t: Vec<f64> = (0..=steps).map(|j| if j == steps { horizon } else { j as f64 * dt }).collect();
        let kappa: Vec<f64> = t
            .iter()
            .map(|&s| self.kappa.deterministic_value(s))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Config("mean oracle needs a deterministic κ".into()))?;
        let (a, b) = self.boundary;
        let mut mean = vec![0.0; steps + 1];
        let mut increments = vec![0.0; steps];
        mean[steps] = self.terminal_mean;
        for j in (0..steps).rev() {
            let next = mean[j + 1];
            let dk = kappa[j + 1] - kappa[j];
            let p = next + (self.drift)(t[j], next) * dt + (a * next + b) * dk;
            let x = implicit_mean_penalty(p, self.obstacle.eval(t[j]), penalty, dt + dk);
            if !x.is_finite() {
                return Err(Error::NonFinite { step: j });
            }
            increments[j] = x - p;
            mean[j] = x;
        }
        let mut compensator = vec![0.0; steps + 1];
        for j in 0..steps {
            compensator[j + 1] = compensator[j] + increments[j];
        }
        Ok(OraclePath { t, mean, compensator })
    }
}

/// Penalized backward Euler on the fine grid, accepted only if halving the
/// step and doubling the penalty moves the mean path and `K` by less than 10⁻⁴.
pub fn solve_mean_ode_reflected(problem: &MeanProblem, n_penalty: f64) -> Result<OraclePath> {
    if problem.fine_steps < 1000 {
        return Err(Error::Config(format!("mean oracle needs at least 1000 fine steps, got {}", problem.fine_steps)));
    }
    if !(n_penalty >= 1e4) {
        return Err(Error::Config(format!("mean oracle needs a penalty of at least 1e4, got {n_penalty}")));
    }
    if !(problem.horizon > 0.0) {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let u_terminal = problem.obstacle.eval(problem.horizon);
    if problem.terminal_mean < u_terminal - FEASIBILITY_SLACK * (1.0 + u_terminal.abs()) {
        return Err(Error::ConstraintInfeasible { mean: problem.terminal_mean, obstacle: u_terminal });
    }
    let coarse = problem.march(problem.fine_steps, n_penalty)?;
    let fine = problem.march(2 * problem.fine_steps, 2.0 * n_penalty)?;
    let gap = (0..coarse.t.len())
        .map(|j| (coarse.mean[j] - fine.mean[2 * j]).abs().max((coarse.compensator[j] - fine.compensator[2 * j]).abs()))
        .fold(0.0, f64::max);
    if !(gap < SELF_REFINEMENT_LIMIT) {
        return Err(Error::NoSelfConvergence { gap, limit: SELF_REFINEMENT_LIMIT });
    }
    Ok(coarse)
}

/// `E[Z_t]` for an affine driver and boundary with `ξ` affine in `B_T^1`.
///
/// Then `Z_t = e^{a_y (T−t) + a_g (κ_T − κ_t)}·s/√T·e_1`, which is deterministic.
pub fn mean_z_closed_form(spec: &ProblemSpec, t: f64) -> Option<Vec<f64>> {
    let horizon = spec.horizon;
    let std = match spec.terminal.mode {
        TerminalMode::Gaussian { std, .. } => std,
        TerminalMode::Brownian => horizon.sqrt(),
        _ => return None,
    };
    let y_coef = match &spec.driver.family {
        DriverFamily::Zero => 0.0,
        DriverFamily::Affine { y_coef, .. } => *y_coef,
        DriverFamily::BoundedNonlinear { .. } => return None,
    };
    let (g_slope, _) = spec.boundary.affine_parts()?;
    let kappa_gap = spec.kappa.deterministic_value(horizon)? - spec.kappa.deterministic_value(t)?;
    let mut z = vec![0.0; spec.brownian_dim];
    z[0] = (y_coef * (horizon - t) + g_slope * kappa_gap).exp() * std / horizon.sqrt();
    Some(z)
}

// `(constant, coefficient of ȳ, coefficient of E[Z^1])` in the mean of an affine driver.
fn affine_mean_drift(spec: &ProblemSpec) -> Option<(f64, f64, f64)> {
    let (constant, y_total, z_total) = match &spec.driver.family {
        DriverFamily::Zero => (0.0, 0.0, vec![0.0; spec.brownian_dim]),
        DriverFamily::Affine { constant, y_coef, z_coef, mean_y_coef, mean_z_coef } => {
            let z: Vec<f64> = z_coef.iter().zip(mean_z_coef).map(|(a, b)| a + b).collect();
            (*constant, y_coef + mean_y_coef, z)
        }
        DriverFamily::BoundedNonlinear { .. } => return None,
    };
    if z_total.iter().skip(1).any(|c| *c != 0.0) {
        return None;
    }
    Some((constant + spec.driver.offset, y_total, z_total.first().copied().unwrap_or(0.0)))
}

/// Reduces `spec` to its mean equation when the driver depends on `(y, z)`
/// affinely, the boundary is affine and `κ` is deterministic.
pub fn mean_closure(spec: &ProblemSpec) -> Option<MeanProblem> {
    let terminal_mean = spec.terminal.known_mean()?;
    let (g_slope, g_intercept) = spec.boundary.affine_parts()?;
    spec.kappa.deterministic_value(0.0)?;
    let (constant, y_total, z_weight) = affine_mean_drift(spec)?;
    let drift: MeanDrift = if z_weight == 0.0 {
        Arc::new(move |_, y| constant + y_total * y)
    } else {
        mean_z_closed_form(spec, 0.0)?;
        let spec = spec.clone();
        Arc::new(move |t, y| {
            let ez = mean_z_closed_form(&spec, t).map_or(0.0, |z| z[0]);
            constant + y_total * y + z_weight * ez
        })
    };
    Some(MeanProblem {
        horizon: spec.horizon,
        terminal_mean,
        obstacle: spec.obstacle.clone(),
        drift,
        kappa: spec.kappa.clone(),
        boundary: (g_slope, g_intercept),
        fine_steps: DEFAULT_FINE_STEPS,
    })
}

/// Which reference produced an [`OraclePath`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Running maximum over an explicitly integrated unreflected mean.
    RunningMaximum,
    /// Self-refined penalized backward Euler for the mean equation.
    PenalizedMeanEquation,
}

/// Reference mean path and compensator on `fine_steps` intervals, if the
/// problem is mean-closed. The running-maximum formula is used when the mean
/// drift does not feed back on `ȳ`.
pub fn reference_path(spec: &ProblemSpec, fine_steps: usize) -> Result<Option<(OracleKind, OraclePath)>> {
    let Some(problem) = mean_closure(spec) else {
        return Ok(None);
    };
    let problem = problem.with_fine_steps(fine_steps);
    let (_, y_total, _) = affine_mean_drift(spec).expect("closure implies affine drift");
    let (g_slope, g_intercept) = problem.boundary;
    let kappa_inert = spec.kappa.is_zero() || (g_slope == 0.0 && g_intercept == 0.0);
    if y_total == 0.0 && kappa_inert {
        // m(t) = m_T + ∫_t^T φ̄(s) ds by the trapezoid rule on the same grid.
        let horizon = problem.horizon;
        let dt = horizon / fine_steps as f64;
        let t: Vec<f64> = (0..=fine_steps).map(|j| if j == fine_steps { horizon } else { j as f64 * dt }).collect();
        let mut m = vec![0.0; fine_steps + 1];
        m[fine_steps] = problem.terminal_mean;
        for j in (0..fine_steps).rev() {
            m[j] = m[j + 1] + 0.5 * dt * ((problem.drift)(t[j], 0.0) + (problem.drift)(t[j + 1], 0.0));
        }
        let u: Vec<f64> = t.iter().map(|&s| problem.obstacle.eval(s)).collect();
        let (mean, compensator) = skorokhod_free_path(&m, &u)?;
        return Ok(Some((OracleKind::RunningMaximum, OraclePath { t, mean, compensator })));
    }
    let path = solve_mean_ode_reflected(&problem, DEFAULT_ORACLE_PENALTY)?;
    Ok(Some((OracleKind::PenalizedMeanEquation, path)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(amplitude: f64) -> Curve {
        Curve::Sine { amplitude, frequency: 1.0, offset: 0.0 }
    }

    #[test]
    fn slack_obstacle_leaves_mean_alone() {
        let (y, k) = skorokhod_closed_form(1.0, &[0.0, 0.5, -1.0, 1.0]).unwrap();
        assert_eq!(y, vec![1.0; 4]);
        assert_eq!(k, vec![0.0; 4]);
    }

    #[test]
    fn touching_obstacle() {
        let (y, k) = skorokhod_closed_form(0.3, &[0.3; 6]).unwrap();
        assert_eq!(y, vec![0.3; 6]);
        assert_eq!(k, vec![0.0; 6]);
    }

    #[test]
    fn infeasible_terminal() {
        assert!(matches!(skorokhod_closed_form(0.0, &[0.0, 0.5]), Err(Error::ConstraintInfeasible { .. })));
    }

    #[test]
    fn sine_closed_form_values() {
        let path = skorokhod_oracle(|_| 0.0, &sine(0.5), 1.0, 100_000).unwrap();
        assert!((path.compensator_at(1.0) - 0.5).abs() < 1e-12);
        let k75 = 0.5 * (1.0 - (0.75 * std::f64::consts::PI).sin());
        assert!((path.compensator_at(0.75) - k75).abs() < 1e-9);
        assert!((path.compensator_at(0.75) - 0.146447).abs() < 1e-6);
        assert!((path.mean_at(0.25) - 0.5).abs() < 1e-9);
        // Reflection and flatness on the fine grid.
        let u: Vec<f64> = path.t.iter().map(|&t| sine(0.5).eval(t)).collect();
        assert!(path.mean.iter().zip(&u).all(|(y, u)| y >= &(u - 1e-15)));
        let flat: f64 = (0..path.t.len() - 1)
            .map(|j| (path.mean[j] - u[j]) * (path.compensator[j + 1] - path.compensator[j]))
            .sum();
        assert!(flat.abs() < 1e-4);
    }

    #[test]
    fn penalized_oracle_agrees_with_running_maximum() {
        let problem = MeanProblem::new(1.0, 0.0, sine(0.5), |_, _| 0.0);
        let pen = solve_mean_ode_reflected(&problem, 1e5).unwrap();
        let closed = skorokhod_oracle(|_| 0.0, &sine(0.5), 1.0, problem.fine_steps).unwrap();
        for j in 0..pen.t.len() {
            assert!((pen.mean[j] - closed.mean[j]).abs() <= 1e-4);
            assert!((pen.compensator[j] - closed.compensator[j]).abs() <= 1e-4);
        }
    }

    #[test]
    fn linear_mean_equation() {
        let problem = MeanProblem::new(1.0, 1.0, Curve::Constant { value: -10.0 }, |_, y| 0.5 * y);
        let path = solve_mean_ode_reflected(&problem, 1e5).unwrap();
        assert!((path.mean[0] - 0.5f64.exp()).abs() <= 1e-4);
        assert!(path.compensator.iter().all(|k| *k == 0.0));
    }

    #[test]
    fn preconditions() {
        let problem = MeanProblem::new(1.0, 0.0, sine(0.5), |_, _| 0.0);
        assert!(solve_mean_ode_reflected(&problem.clone().with_fine_steps(999), 1e5).is_err());
        assert!(solve_mean_ode_reflected(&problem, 1e3).is_err());
        let infeasible = MeanProblem::new(1.0, -1.0, Curve::Constant { value: 0.0 }, |_, _| 0.0);
        assert!(matches!(solve_mean_ode_reflected(&infeasible, 1e5), Err(Error::ConstraintInfeasible { .. })));
    }

    #[test]
    fn coarse_penalty_fails_self_refinement() {
        // A steep obstacle with a weak penalty moves by more than 10⁻⁴ when refined.
        let problem =
            MeanProblem::new(1.0, 0.0, Curve::Sine { amplitude: 50.0, frequency: 1.0, offset: 0.0 }, |_, _| 0.0);
        assert!(matches!(solve_mean_ode_reflected(&problem, 1e4), Err(Error::NoSelfConvergence { .. })));
    }

    #[test]
    fn table_round_trip() {
        let path = skorokhod_oracle(|t| 0.1 * t, &sine(0.25), 1.0, 50).unwrap();
        let back = OraclePath::from_table(&path.to_table()).unwrap();
        assert_eq!(back.t.len(), 51);
        for j in 0..51 {
            assert!((back.mean[j] - path.mean[j]).abs() <= 1e-11 * (1.0 + path.mean[j].abs()));
        }
        assert!(OraclePath::from_table("# t mean K\n0 1\n").is_err());
    }

    #[test]
    fn interpolation_between_nodes() {
        let path = OraclePath { t: vec![0.0, 1.0], mean: vec![0.0, 2.0], compensator: vec![1.0, 1.0] };
        assert_eq!(path.mean_at(0.25), 0.5);
        assert_eq!(path.mean_at(-1.0), 0.0);
        assert_eq!(path.mean_at(3.0), 2.0);
    }
}
