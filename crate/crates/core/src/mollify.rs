//! Smooth obstacle approximations `u^k = u * ρ_k` with the standard bump kernel.

use crate::error::{Error, Result};
use crate::paths::TimeGrid;
use crate::problem::ObstacleCurve;

/// Fewest quadrature nodes accepted for the bump kernel.
pub const MIN_QUAD_POINTS: usize = 16;
pub const DEFAULT_QUAD_POINTS: usize = 64;

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }
}

// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Unnormalized bump `exp(-1/(1-x²))` on `(-1, 1)`.
pub fn bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

fn bump_derivative(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - x * x;
        bump(x) * (-2.0 * x / (s * s))
    }
}

/// `u^k` and `du^k/dt` on a solver grid.
#[derive(Debug, Clone)]
pub struct SmoothObstacle {
    pub level: usize,
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
    /// `max_j |u^k(t_j) - u(t_j)|`
    pub sup_gap: f64,
    /// `max_j |du^k/dt(t_j)|`
    pub derivative_bound: f64,
}

impl SmoothObstacle {
    /// The obstacle sampled without smoothing (level 0), used where `u` itself is wanted.
    pub fn exact(u: &ObstacleCurve, grid: &TimeGrid) -> Self {
        SmoothObstacle {
            level: 0,
            values: grid.nodes().into_iter().map(|t| u.eval(t)).collect(),
            derivatives: vec![0.0; grid.steps() + 1],
            sup_gap: 0.0,
            derivative_bound: 0.0,
        }
    }
}

/// Convolves `u` (extended by `u(0)` to the left of 0 and `u(T)` to the right
/// of T) with `ρ_k(s) = k ρ(k s)` at every grid node, using `quad_points`
/// Gauss-Legendre nodes on each piece of the window between kinks.
pub fn mollify_obstacle(u: &ObstacleCurve, k: usize, grid: &TimeGrid, quad_points: usize) -> Result<SmoothObstacle> {
    if quad_points < MIN_QUAD_POINTS {
        return Err(Error::Quadrature { got: quad_points, min: MIN_QUAD_POINTS });
    }
    if k < 1 {
        return Err(Error::Config("mollification level k must be ≥ 1".into()));
    }
    let rule = GaussLegendre::new(quad_points);
    let horizon = grid.horizon();
    let extended = |t: f64| u.eval(t.clamp(0.0, horizon));
    let kf = k as f64;
    let mut kinks = u.breakpoints();
    kinks.extend([0.0, horizon]);

    let mut values = Vec::with_capacity(grid.steps() + 1);
    let mut derivatives = Vec::with_capacity(grid.steps() + 1);
    let mut cuts = Vec::new();
    for t in grid.nodes() {
        // Kinks of the extended curve split the window into smooth pieces.
        cuts.clear();
        cuts.push(-1.0);
        cuts.extend(kinks.iter().map(|b| kf * (t - b)).filter(|x| x.abs() < 1.0));
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        let centre = extended(t);
        let mut mass = 0.0;
        let mut v = 0.0;
        let mut dv = 0.0;
        for piece in cuts.windows(2) {
            let (mid, half) = (0.5 * (piece[0] + piece[1]), 0.5 * (piece[1] - piece[0]));
            for (xi, wi) in rule.nodes.iter().zip(&rule.weights) {
                let x = mid + half * xi;
                let w = half * wi;
                // ∫ρ' = 0, so subtracting u(t) keeps constants exact in the derivative.
                let du = extended(t - x / kf) - centre;
                mass += w * bump(x);
                v += w * bump(x) * du;
                dv += w * bump_derivative(x) * du;
            }
        }
        // Normalizing by the discrete mass keeps constants exact.
        values.push(centre + v / mass);
        derivatives.push(kf * dv / mass);
    }
    if values.iter().chain(&derivatives).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    let sup_gap = grid.nodes().into_iter().zip(&values).map(|(t, v)| (v - u.eval(t)).abs()).fold(0.0, f64::max);
    let derivative_bound = derivatives.iter().map(|d| d.abs()).fold(0.0, f64::max);
    Ok(SmoothObstacle { level: k, values, derivatives, sup_gap, derivative_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Curve;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(16);
        for p in 0..32 {
            let approx: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((approx - exact).abs() < 1e-13, "degree {p}: {approx} vs {exact}");
        }
    }

    #[test]
    fn too_few_nodes() {
        let u = Curve::Constant { value: 1.0 };
        assert!(matches!(mollify_obstacle(&u, 5, &grid(10), 15), Err(Error::Quadrature { got: 15, .. })));
    }

    #[test]
    fn constants_are_reproduced() {
        let u = Curve::Constant { value: -0.7 };
        let s = mollify_obstacle(&u, 7, &grid(50), 64).unwrap();
        assert!(s.values.iter().all(|v| (v + 0.7).abs() < 1e-12));
        assert!(s.derivative_bound < 1e-12);
    }

    #[test]
    fn symmetric_kernel_keeps_linear_functions_in_the_interior() {
        let u = Curve::Linear { intercept: 0.0, slope: 1.0 };
        let s = mollify_obstacle(&u, 10, &grid(10), 64).unwrap();
        assert!((s.values[5] - 0.5).abs() < 1e-14);
        assert!((s.derivatives[5] - 1.0).abs() < 1e-9);
    }

    // Composite Simpson over 10⁴ panels of the normalized kernel, independent of Gauss-Legendre.
    fn simpson_mollify(u: impl Fn(f64) -> f64, t: f64, k: f64) -> f64 {
        let panels = 10_000;
        let h = 2.0 / panels as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..=panels {
            let x = -1.0 + i as f64 * h;
            let w = if i == 0 || i == panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            num += w * bump(x) * u(t - x / k);
            den += w * bump(x);
        }
        num / den
    }

    #[test]
    fn kink_matches_simpson_oracle() {
        let u = Curve::Abs { center: 0.5, slope: 1.0, offset: 0.0 };
        let s = mollify_obstacle(&u, 10, &grid(10), 64).unwrap();
        let oracle = simpson_mollify(|t| (t - 0.5).abs(), 0.5, 10.0);
        assert!(s.values[5] > 0.0);
        assert!((s.values[5] - oracle).abs() < 1e-6, "{} vs {oracle}", s.values[5]);
    }

    #[test]
    fn sup_gap_shrinks_with_k() {
        for u in [
            Curve::Abs { center: 0.5, slope: 1.0, offset: 0.0 },
            Curve::Sine { amplitude: 0.5, frequency: 1.0, offset: 0.0 },
        ] {
            let gaps: Vec<f64> =
                [5, 10, 20, 40, 80].iter().map(|&k| mollify_obstacle(&u, k, &grid(100), 64).unwrap().sup_gap).collect();
            assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-8), "{gaps:?}");
            assert!(gaps[4] < gaps[0] / 4.0);
        }
    }

    #[test]
    fn lipschitz_gap_bound() {
        let u = Curve::Abs { center: 0.5, slope: 1.0, offset: 0.0 };
        for k in [10, 20, 40, 80] {
            assert!(mollify_obstacle(&u, k, &grid(1000), 64).unwrap().sup_gap <= 1.0 / k as f64);
        }
    }

    #[test]
    fn monotone_obstacles_stay_monotone() {
        let u = Curve::Tabulated { points: vec![(0.0, 0.0), (0.3, 0.0), (0.4, 1.0), (1.0, 1.5)] };
        let s = mollify_obstacle(&u, 20, &grid(200), 64).unwrap();
        assert!(s.values.windows(2).all(|w| w[1] >= w[0] - 1e-15));
    }

    #[test]
    fn values_stay_within_window_range() {
        let u = Curve::Sine { amplitude: 1.0, frequency: 3.0, offset: 0.2 };
        let k = 8;
        let g = grid(100);
        let s = mollify_obstacle(&u, k, &g, 64).unwrap();
        for (j, t) in g.nodes().into_iter().enumerate() {
            let window: Vec<f64> =
                (0..=400).map(|i| u.eval((t - 1.0 / k as f64 + i as f64 / 200.0 / k as f64).clamp(0.0, 1.0))).collect();
            let lo = window.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(s.values[j] >= lo - 1e-9 && s.values[j] <= hi + 1e-9);
        }
    }
}
