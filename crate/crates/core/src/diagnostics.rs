//! Rate fits, deficit metrics, stability experiments and a-priori reports.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mollify::SmoothObstacle;
use crate::paths::{mean, ForwardCloud};
use crate::penalized::{solve_penalized, PenalizedSolution, RegressionBasis};
use crate::problem::{eval_driver, ProblemSpec};
use crate::reflect::{flatness_residual, sup_abs_diff};

/// Least-squares line through `(log n, log error)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub levels: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `log(error) = intercept + slope·log(level)`.
///
/// Any non-positive error aborts with the indices of the offending levels.
pub fn rate_fit(levels: &[f64], errors: &[f64]) -> Result<RateFit> {
    if levels.len() != errors.len() {
        return Err(Error::LengthMismatch { left: levels.len(), right: errors.len() });
    }
    if levels.len() < 3 {
        return Err(Error::Config(format!("rate fit needs at least 3 levels, got {}", levels.len())));
    }
    if levels.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Config("rate fit levels must be positive".into()));
    }
    let bad: Vec<usize> = errors.iter().enumerate().filter(|(_, e)| !(**e > 0.0)).map(|(i, _)| i).collect();
    if !bad.is_empty() {
        return Err(Error::NonPositiveError { levels: bad });
    }
    let x: Vec<f64> = levels.iter().map(|l| l.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = mean(&x);
    let my = mean(&y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("rate fit levels must not all coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RateFit { levels: levels.to_vec(), errors: errors.to_vec(), slope, intercept, r_squared })
}

/// `(max_j |y⁻_j|², Σ_j |y⁻_j|²·(dt + Δκ̄_j))` with `y = ȳ − u^k`, over the
/// penalized nodes `j < N`. The terminal node holds `E[ξ] − u^k(T)`, which no
/// penalty level can change; see [`terminal_gap`].
pub fn deficit_sums(mean_y: &[f64], u: &[f64], dt: f64, mean_kappa: &[f64]) -> Result<(f64, f64)> {
    if mean_y.len() != u.len() {
        return Err(Error::LengthMismatch { left: mean_y.len(), right: u.len() });
    }
    if mean_y.len() != mean_kappa.len() {
        return Err(Error::LengthMismatch { left: mean_y.len(), right: mean_kappa.len() });
    }
    let last = mean_y.len().saturating_sub(1);
    let neg_sq: Vec<f64> = mean_y[..last].iter().zip(u).map(|(m, u)| (u - m).max(0.0).powi(2)).collect();
    let sup = neg_sq.iter().cloned().fold(0.0, f64::max);
    let integral = neg_sq.iter().zip(mean_kappa.windows(2)).map(|(v, w)| v * (dt + w[1] - w[0])).sum();
    Ok((sup, integral))
}

/// `(u^k(T) − ȳ(T))⁺`, the part of the deficit fixed by the terminal data.
pub fn terminal_gap(mean_y: &[f64], u: &[f64]) -> f64 {
    match (mean_y.last(), u.last()) {
        (Some(m), Some(u)) => (u - m).max(0.0),
        _ => 0.0,
    }
}

pub fn deficit_metrics(solution: &PenalizedSolution, u_k: &SmoothObstacle, mean_kappa: &[f64]) -> Result<(f64, f64)> {
    deficit_sums(&solution.mean_y, &u_k.values, solution.grid.dt(), mean_kappa)
}

/// One penalty level of a common-random-number ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRow {
    pub k: usize,
    pub n: u64,
    pub sup_neg_sq: f64,
    pub integral_neg_sq: f64,
    /// Distance of this level's mean path to the previous one.
    pub cauchy: Option<f64>,
    pub flatness: f64,
}

/// Solves every penalty level in `ns` on the same cloud and obstacle.
pub fn penalty_ladder(
    spec: &ProblemSpec,
    cloud: &ForwardCloud,
    basis: &RegressionBasis,
    u_k: &SmoothObstacle,
    ns: &[u64],
) -> Result<Vec<LadderRow>> {
    let mut rows = Vec::with_capacity(ns.len());
    let mut previous: Option<Vec<f64>> = None;
    for &n in ns {
        let sol = solve_penalized(spec, u_k, n, cloud, basis)?;
        let (sup_neg_sq, integral_neg_sq) = deficit_metrics(&sol, u_k, cloud.mean_kappa())?;
        let flatness = flatness_residual(&sol.mean_y, &u_k.values, &sol.compensator)?;
        let cauchy = previous.as_ref().map(|p| sup_abs_diff(p, &sol.mean_y));
        rows.push(LadderRow { k: u_k.level, n, sup_neg_sq, integral_neg_sq, cauchy, flatness });
        previous = Some(sol.mean_y);
    }
    Ok(rows)
}

/// What the stability experiment perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// `ξ → ξ + ε`
    Terminal,
    /// `ξ → ξ + ε` and `f → f + ε`
    TerminalAndDriver,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityRow {
    pub epsilon: f64,
    /// `max_j E|δY(t_j)|²`
    pub sup_mean_sq_y: f64,
    /// `Σ_j E|δZ(t_j)|²·dt`
    pub integral_sq_z: f64,
}

/// Perturbs the data by each `ε` and measures the solution difference on the
/// same cloud. Rows are sorted by `ε`.
pub fn stability_experiment(
    spec: &ProblemSpec,
    cloud: &ForwardCloud,
    basis: &RegressionBasis,
    u_k: &SmoothObstacle,
    n: u64,
    epsilons: &[f64],
    perturbation: Perturbation,
) -> Result<Vec<StabilityRow>> {
    let mut eps = epsilons.to_vec();
    if eps.iter().any(|e| !e.is_finite()) {
        return Err(Error::Config("perturbations must be finite".into()));
    }
    eps.sort_by(f64::total_cmp);
    if eps.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("perturbations must be distinct".into()));
    }
    let base = solve_penalized(spec, u_k, n, cloud, basis)?;
    let dt = cloud.grid().dt();
    let mut rows = Vec::with_capacity(eps.len());
    for epsilon in eps {
        let shifted_cloud = cloud.with_terminal_shift(epsilon);
        let shifted_spec = match perturbation {
            Perturbation::Terminal => spec.clone(),
            Perturbation::TerminalAndDriver => ProblemSpec { driver: spec.driver.shifted(epsilon), ..spec.clone() },
        };
        let other = solve_penalized(&shifted_spec, u_k, n, &shifted_cloud, basis)?;
        let sup_mean_sq_y = base
            .y
            .iter()
            .zip(&other.y)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
            .fold(0.0, f64::max);
        let integral_sq_z = base
            .z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / base.particles as f64 * dt)
            .sum();
        rows.push(StabilityRow { epsilon, sup_mean_sq_y, integral_sq_z });
    }
    Ok(rows)
}

/// Sample standard deviation of the `Z` regression targets `Y(t_{j+1})·ΔB_j^r/dt`,
/// per step and coordinate. `E[Z(t_j)]` is their sample mean, so `std/√M` is its
/// Monte Carlo standard error.
pub fn z_target_spread(solution: &PenalizedSolution, cloud: &ForwardCloud) -> Vec<Vec<f64>> {
    let m = solution.particles;
    let d = solution.dim;
    let dt = solution.grid.dt();
    (0..solution.steps())
        .map(|j| {
            let y = &solution.y[j + 1];
            let db = cloud.increments(j);
            (0..d)
                .map(|r| {
                    let targets: Vec<f64> = (0..m).map(|i| y[i] * db[i * d + r] / dt).collect();
                    let mu = mean(&targets);
                    let ss: f64 = targets.iter().map(|v| (v - mu) * (v - mu)).sum();
                    (ss / (m as f64 - 1.0)).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Both sides of the a-priori estimate, evaluated by sample means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    /// `E[max_j |Y(t_j)|²]`
    pub sup_sq_y: f64,
    /// `Σ_j E|Z(t_j)|²·dt`
    pub integral_sq_z: f64,
    /// `E|ξ|²`
    pub terminal_sq: f64,
    /// `Σ_j |f(t_j, 0, 0, δ₀)|²·dt`
    pub driver_at_zero_sq: f64,
    /// `Σ_j ψ(t_j)²·Δκ̄_j`
    pub psi_sq: f64,
    /// `K(T)²`
    pub compensator_sq: f64,
    /// Left side over the unit-weighted right side; `None` when both vanish.
    pub ratio: Option<f64>,
    pub degenerate: bool,
}

impl AprioriReport {
    pub fn lhs(&self) -> f64 {
        self.sup_sq_y + self.integral_sq_z
    }

    pub fn rhs(&self) -> f64 {
        self.terminal_sq + self.driver_at_zero_sq + self.psi_sq + self.compensator_sq
    }
}

pub fn apriori_report(
    solution: &PenalizedSolution,
    spec: &ProblemSpec,
    cloud: &ForwardCloud,
    compensator_terminal: f64,
) -> AprioriReport {
    let m = solution.particles;
    let d = solution.dim;
    let grid = &solution.grid;
    let dt = grid.dt();
    let sup_sq_y =
        (0..m).map(|i| solution.y.iter().map(|yj| yj[i] * yj[i]).fold(0.0, f64::max)).sum::<f64>() / m as f64;
    let integral_sq_z: f64 = solution.z.iter().map(|zj| zj.iter().map(|v| v * v).sum::<f64>() / m as f64 * dt).sum();
    let terminal_sq = cloud.terminal().iter().map(|v| v * v).sum::<f64>() / m as f64;
    let zeros = vec![0.0; d];
    let mk = cloud.mean_kappa();
    let mut driver_at_zero_sq = 0.0;
    let mut psi_sq = 0.0;
    for j in 0..grid.steps() {
        let t = grid.t(j);
        driver_at_zero_sq += eval_driver(&spec.driver, t, 0.0, &zeros, 0.0, &zeros).powi(2) * dt;
        psi_sq += spec.boundary.psi.eval(t).powi(2) * (mk[j + 1] - mk[j]);
    }
    let compensator_sq = compensator_terminal * compensator_terminal;
    let lhs = sup_sq_y + integral_sq_z;
    let rhs = terminal_sq + driver_at_zero_sq + psi_sq + compensator_sq;
    let (ratio, degenerate) = if rhs > 0.0 {
        (Some(lhs / rhs), false)
    } else if lhs == 0.0 {
        (None, true)
    } else {
        (Some(f64::INFINITY), true)
    };
    AprioriReport { sup_sq_y, integral_sq_z, terminal_sq, driver_at_zero_sq, psi_sq, compensator_sq, ratio, degenerate }
}
