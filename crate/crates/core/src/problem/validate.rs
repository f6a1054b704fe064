//! Sampled checks of the standing assumptions on `(f, g, ξ, u, κ)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{eval_boundary, eval_driver, Curve, KappaSpec, ProblemSpec};
use crate::error::{Error, Result};
use crate::paths::{simulate_forward, TimeGrid};

const SAMPLE_RADIUS: f64 = 10.0;
const PAIR_TOL: f64 = 1e-12;
const VALIDATION_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Unverifiable,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub assumption: &'static str,
    pub check: &'static str,
    pub status: CheckStatus,
    /// Worst sampled statistic (quotient, excess, deviation, ...), when one exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub seed: u64,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    /// No check failed. Unverifiable entries do not count as failures.
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn find(&self, assumption: &str, check: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.assumption == assumption && c.check == check)
    }
}

fn entry(
    assumption: &'static str,
    check: &'static str,
    ok: bool,
    worst: Option<f64>,
    witness: Option<String>,
) -> AssumptionCheck {
    AssumptionCheck {
        assumption,
        check,
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        worst,
        witness,
    }
}

fn unverifiable(assumption: &'static str, check: &'static str) -> AssumptionCheck {
    AssumptionCheck { assumption, check, status: CheckStatus::Unverifiable, worst: None, witness: None }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Checks every assumption as far as `samples` random draws allow.
///
/// Structural violations (`beta ≥ 0`, `T ≤ 0`, `d < 1`, unsorted tables) are
/// returned as [`Error::Config`]; everything else lands in the report.
pub fn validate_problem(spec: &ProblemSpec, samples: usize, seed: u64) -> Result<ValidationReport> {
    if samples < 100 {
        return Err(Error::Config(format!("validation needs ≥ 100 samples, got {samples}")));
    }
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.brownian_dim;
    let horizon = spec.horizon;
    let mut checks = Vec::new();

    let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-SAMPLE_RADIUS..SAMPLE_RADIUS)).collect()
    };

    // (A1) Lipschitz continuity in (y, z, m_y, m_z).
    let lf = spec.driver.lipschitz;
    let mut worst_quotient = 0.0f64;
    let mut worst_witness = None;
    let mut lipschitz_ok = true;
    for _ in 0..samples {
        let t = rng.random_range(0.0..=horizon);
        let p1 = draw(&mut rng, 2 + 2 * d);
        let p2 = draw(&mut rng, 2 + 2 * d);
        let (y1, z1, m1, mz1) = (p1[0], &p1[2..2 + d], p1[1], &p1[2 + d..]);
        let (y2, z2, m2, mz2) = (p2[0], &p2[2..2 + d], p2[1], &p2[2 + d..]);
        let f1 = eval_driver(&spec.driver, t, y1, z1, m1, mz1);
        let f2 = eval_driver(&spec.driver, t, y2, z2, m2, mz2);
        let dist = (y1 - y2).abs() + norm(&diff(z1, z2)) + (m1 - m2).abs() + norm(&diff(mz1, mz2));
        let gap = (f1 - f2).abs();
        if gap > lf * dist + PAIR_TOL * (1.0 + f1.abs() + f2.abs()) || !gap.is_finite() {
            lipschitz_ok = false;
        }
        let q = gap / dist;
        if q > worst_quotient || !q.is_finite() {
            worst_quotient = q;
            worst_witness = Some(format!("t={t:.6}, (y,m_y)=({y1:.6},{m1:.6}) vs ({y2:.6},{m2:.6})"));
        }
    }
    checks.push(entry("A1", "lipschitz", lipschitz_ok, Some(worst_quotient), worst_witness));

    let grid = TimeGrid::new(horizon, VALIDATION_STEPS)?;
    let zeros = vec![0.0; d];
    let origin_bad =
        grid.nodes().into_iter().find(|&t| !eval_driver(&spec.driver, t, 0.0, &zeros, 0.0, &zeros).is_finite());
    checks.push(entry("A1", "finite_at_origin", origin_bad.is_none(), None, origin_bad.map(|t| format!("t={t}"))));
    checks.push(unverifiable("A1", "exponential_moment"));

    // (A2) monotonicity and growth of g; vacuous when κ ≡ 0.
    if spec.kappa.is_zero() {
        checks.push(AssumptionCheck {
            assumption: "A2",
            check: "monotonicity",
            status: CheckStatus::Pass,
            worst: None,
            witness: Some("κ ≡ 0: g does not enter the equation".into()),
        });
        checks.push(AssumptionCheck {
            assumption: "A2",
            check: "growth",
            status: CheckStatus::Pass,
            worst: None,
            witness: Some("κ ≡ 0: g does not enter the equation".into()),
        });
    } else {
        let beta = spec.boundary.beta;
        let mut worst = f64::NEG_INFINITY;
        let mut witness = None;
        let mut ok = true;
        for _ in 0..samples {
            let t = rng.random_range(0.0..=horizon);
            let y1 = rng.random_range(-SAMPLE_RADIUS..SAMPLE_RADIUS);
            let y2 = rng.random_range(-SAMPLE_RADIUS..SAMPLE_RADIUS);
            let dy = y1 - y2;
            if dy == 0.0 {
                continue;
            }
            let g1 = eval_boundary(&spec.boundary, t, y1);
            let g2 = eval_boundary(&spec.boundary, t, y2);
            let lhs = dy * (g1 - g2);
            if lhs > beta * dy * dy + PAIR_TOL * (1.0 + lhs.abs()) {
                ok = false;
            }
            let q = lhs / (dy * dy);
            if q > worst {
                worst = q;
                witness = Some(format!("t={t:.6}, y1={y1:.6}, y2={y2:.6}"));
            }
        }
        checks.push(entry("A2", "monotonicity", ok, Some(worst), witness));

        let lg = spec.boundary.growth;
        let mut worst = f64::NEG_INFINITY;
        let mut witness = None;
        let mut ok = true;
        for _ in 0..samples {
            let t = rng.random_range(0.0..=horizon);
            let y = rng.random_range(-SAMPLE_RADIUS..SAMPLE_RADIUS);
            let psi = spec.boundary.psi.eval(t);
            let excess = eval_boundary(&spec.boundary, t, y).abs() - (psi + lg * y.abs());
            if excess > PAIR_TOL * (1.0 + psi + lg * y.abs()) || psi < 0.0 {
                ok = false;
            }
            if excess > worst {
                worst = excess;
                witness = Some(format!("t={t:.6}, y={y:.6}"));
            }
        }
        checks.push(entry("A2", "growth", ok, Some(worst), witness));
    }
    checks.push(unverifiable("A2", "exponential_moment"));

    // (A3) and (A5) from a simulated cloud.
    let cloud = simulate_forward(spec, &grid, samples, seed)?;
    let xi = cloud.terminal();
    let m = xi.len() as f64;
    let sample_mean = xi.iter().sum::<f64>() / m;
    let sample_var = xi.iter().map(|v| (v - sample_mean).powi(2)).sum::<f64>() / (m - 1.0);
    let band = 4.0 * sample_var.sqrt() / m.sqrt();
    let u_terminal = spec.obstacle.eval(horizon);
    match spec.terminal.known_mean() {
        Some(declared) => {
            let dev = (sample_mean - declared).abs();
            checks.push(entry(
                "A3",
                "declared_mean_consistent",
                dev <= band,
                Some(dev),
                Some(format!("sample mean {sample_mean:.6}, declared {declared:.6}, band {band:.3e}")),
            ));
            checks.push(entry(
                "A3",
                "mean_above_obstacle",
                declared >= u_terminal,
                Some(declared - u_terminal),
                Some(format!("E[ξ]={declared}, u(T)={u_terminal}")),
            ));
        }
        None => {
            checks.push(unverifiable("A3", "declared_mean_consistent"));
            checks.push(entry(
                "A3",
                "mean_above_obstacle",
                sample_mean + band >= u_terminal,
                Some(sample_mean - u_terminal),
                Some(format!("sample mean {sample_mean:.6} ± {band:.3e}, u(T)={u_terminal}")),
            ));
        }
    }
    checks.push(unverifiable("A3", "exponential_moment"));

    // (A4): analytic curves are continuous, tables interpolate linearly.
    let continuous = match &spec.obstacle {
        Curve::Tabulated { points } => points.iter().all(|(t, u)| t.is_finite() && u.is_finite()),
        _ => true,
    };
    checks.push(entry("A4", "continuous", continuous, None, None));

    let mut kappa_ok = true;
    let mut witness = None;
    let mut worst = 0.0f64;
    for i in 0..cloud.particles() {
        let k0 = cloud.kappa(0)[i];
        if k0 != 0.0 {
            kappa_ok = false;
            witness.get_or_insert_with(|| format!("particle {i}: κ_0 = {k0}"));
        }
        for j in 0..grid.steps() {
            let drop = cloud.kappa(j)[i] - cloud.kappa(j + 1)[i];
            if drop > 0.0 {
                kappa_ok = false;
                if drop > worst {
                    worst = drop;
                    witness = Some(format!("particle {i}, step {j}: κ decreases by {drop:.3e}"));
                }
            }
        }
    }
    if let KappaSpec::PathIntegral { scale, .. } = spec.kappa {
        if scale < 0.0 {
            kappa_ok = false;
            witness = Some(format!("negative integral scale {scale}"));
        }
    }
    checks.push(entry("A5", "start_and_monotone", kappa_ok, Some(worst), witness));
    checks.push(unverifiable("A5", "exponential_moment"));

    Ok(ValidationReport { samples, seed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{BoundaryFamily, BoundarySpec, DriverFamily, DriverSpec, TerminalMode, TerminalSpec};

    fn base() -> ProblemSpec {
        ProblemSpec {
            horizon: 1.0,
            brownian_dim: 1,
            driver: DriverSpec::zero(),
            boundary: BoundarySpec::zero(),
            terminal: TerminalSpec { mode: TerminalMode::Gaussian { mean: 0.0, std: 1.0 }, declared_mean: None },
            obstacle: Curve::Constant { value: -1.0 },
            kappa: KappaSpec::Zero,
            forward: None,
        }
    }

    #[test]
    fn positive_beta_is_hard_error() {
        let mut s = base();
        s.boundary.beta = 0.5;
        assert!(matches!(validate_problem(&s, 200, 1), Err(Error::Config(_))));
    }

    #[test]
    fn structural_errors() {
        let mut s = base();
        s.horizon = 0.0;
        assert!(matches!(validate_problem(&s, 200, 1), Err(Error::Config(_))));
        let mut s = base();
        s.brownian_dim = 0;
        assert!(matches!(validate_problem(&s, 200, 1), Err(Error::Config(_))));
        let mut s = base();
        s.obstacle = Curve::Tabulated { points: vec![(0.0, 0.0), (1.0, 0.0), (0.5, 0.0)] };
        assert!(matches!(validate_problem(&s, 200, 1), Err(Error::Config(_))));
        assert!(matches!(validate_problem(&base(), 99, 1), Err(Error::Config(_))));
    }

    #[test]
    fn zero_problem_passes() {
        let r = validate_problem(&base(), 500, 3).unwrap();
        assert!(r.all_passed(), "{:?}", r.failures().collect::<Vec<_>>());
        assert_eq!(r.find("A1", "exponential_moment").unwrap().status, CheckStatus::Unverifiable);
    }

    #[test]
    fn terminal_mean_below_obstacle_is_flagged() {
        let mut s = base();
        s.terminal.declared_mean = Some(0.0);
        s.obstacle = Curve::Constant { value: 0.1 };
        let r = validate_problem(&s, 500, 3).unwrap();
        assert_eq!(r.find("A3", "mean_above_obstacle").unwrap().status, CheckStatus::Fail);
    }

    #[test]
    fn understated_lipschitz_constant_is_flagged() {
        let mut s = base();
        s.driver = DriverSpec {
            family: DriverFamily::Affine {
                constant: 0.0,
                y_coef: 2.0,
                z_coef: vec![0.0],
                mean_y_coef: 0.0,
                mean_z_coef: vec![0.0],
            },
            lipschitz: 1.0,
            offset: 0.0,
        };
        let r = validate_problem(&s, 500, 3).unwrap();
        let c = r.find("A1", "lipschitz").unwrap();
        assert_eq!(c.status, CheckStatus::Fail);
        assert!(c.worst.unwrap() > 1.0);
        s.driver.lipschitz = 2.0;
        let r = validate_problem(&s, 500, 3).unwrap();
        assert_eq!(r.find("A1", "lipschitz").unwrap().status, CheckStatus::Pass);
    }

    #[test]
    fn boundary_checks_when_kappa_active() {
        let mut s = base();
        s.kappa = KappaSpec::Linear { rate: 1.0 };
        s.boundary = BoundarySpec {
            family: BoundaryFamily::LinearMonotone { slope: -1.0, intercept: 0.0 },
            beta: -1.0,
            growth: 1.0,
            psi: Curve::Constant { value: 0.0 },
        };
        let r = validate_problem(&s, 500, 3).unwrap();
        assert!(r.all_passed(), "{:?}", r.failures().collect::<Vec<_>>());

        // g ≡ 0 violates the strict sign once κ acts.
        s.boundary.family = BoundaryFamily::Zero;
        let r = validate_problem(&s, 500, 3).unwrap();
        assert_eq!(r.find("A2", "monotonicity").unwrap().status, CheckStatus::Fail);

        // The cubic family is monotone but not linearly bounded.
        s.boundary.family = BoundaryFamily::NonlinearMonotone { slope: -1.0, cubic: 1.0 };
        let r = validate_problem(&s, 500, 3).unwrap();
        assert_eq!(r.find("A2", "monotonicity").unwrap().status, CheckStatus::Pass);
        assert_eq!(r.find("A2", "growth").unwrap().status, CheckStatus::Fail);
    }

    #[test]
    fn decreasing_kappa_curve_is_flagged() {
        let mut s = base();
        s.kappa = KappaSpec::Curve { curve: Curve::Linear { intercept: 0.0, slope: -1.0 } };
        s.boundary.family = BoundaryFamily::LinearMonotone { slope: -1.0, intercept: 0.0 };
        let r = validate_problem(&s, 200, 3).unwrap();
        assert_eq!(r.find("A5", "start_and_monotone").unwrap().status, CheckStatus::Fail);
    }
}
