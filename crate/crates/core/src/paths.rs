//! Forward Monte Carlo machinery: time grid, particle clouds with counter-keyed
//! random streams, and empirical-measure utilities.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{KappaSpec, ProblemSpec};

/// Uniform grid `t_j = j·T/N`, `j = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("horizon T must be > 0, got {horizon}")));
        }
        if steps < 1 {
            return Err(Error::Config("grid needs N ≥ 1 steps".into()));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn t(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.t(j)).collect()
    }
}

/// Simulated particles for one problem. Per-step arrays are laid out
/// particle-major: entry `i·d + r` is coordinate `r` of particle `i`.
#[derive(Debug, Clone)]
pub struct ForwardCloud {
    pub(crate) particles: usize,
    pub(crate) dim: usize,
    pub(crate) grid: TimeGrid,
    pub(crate) seed: u64,
    /// `N` arrays of `M·d` Brownian increments.
    pub(crate) increments: Vec<Vec<f64>>,
    /// `N+1` arrays of `M·d` Brownian positions.
    pub(crate) brownian: Vec<Vec<f64>>,
    /// `N+1` arrays of `M·d` forward states, when a forward SDE is present.
    pub(crate) forward: Option<Vec<Vec<f64>>>,
    /// `N+1` arrays of `M` values of `κ`.
    pub(crate) kappa: Vec<Vec<f64>>,
    pub(crate) terminal: Vec<f64>,
    pub(crate) mean_kappa: Vec<f64>,
}

impl ForwardCloud {
    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increments(&self, step: usize) -> &[f64] {
        &self.increments[step]
    }

    pub fn brownian(&self, node: usize) -> &[f64] {
        &self.brownian[node]
    }

    pub fn forward(&self, node: usize) -> Option<&[f64]> {
        self.forward.as_ref().map(|f| f[node].as_slice())
    }

    pub fn has_forward(&self) -> bool {
        self.forward.is_some()
    }

    pub fn kappa(&self, node: usize) -> &[f64] {
        &self.kappa[node]
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    pub fn mean_kappa(&self) -> &[f64] {
        &self.mean_kappa
    }

    /// Copy of the cloud with every terminal sample shifted by `by`.
    pub fn with_terminal_shift(&self, by: f64) -> ForwardCloud {
        let mut out = self.clone();
        out.terminal.iter_mut().for_each(|x| *x += by);
        out
    }

    /// Sample mean and variance of the Brownian increments, per coordinate.
    pub fn increment_statistics(&self) -> Vec<(f64, f64)> {
        let count = (self.particles * self.grid.steps()) as f64;
        (0..self.dim)
            .map(|r| {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for step in &self.increments {
                    for i in 0..self.particles {
                        let v = step[i * self.dim + r];
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / count;
                (mean, sq / count - mean * mean)
            })
            .collect()
    }
}

/// Words of the ChaCha block stream reserved per time step and Brownian coordinate.
const WORDS_PER_NORMAL: u128 = 4;

/// Standard normal stream keyed by `(seed, particle, step)`: the particle
/// selects the ChaCha stream, the step selects the word offset inside it.
struct NormalStream {
    rng: ChaCha8Rng,
    dim: usize,
}

impl NormalStream {
    fn new(seed: u64, particle: usize, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(particle as u64);
        NormalStream { rng, dim }
    }

    fn fill_step(&mut self, step: usize, out: &mut [f64]) {
        self.rng.set_word_pos(step as u128 * self.dim as u128 * WORDS_PER_NORMAL);
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    // Box-Muller with a fixed two-word-pair consumption per draw.
    fn normal(&mut self) -> f64 {
        let u1 = ((self.rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

struct ParticlePath {
    increments: Vec<f64>,
    brownian: Vec<f64>,
    forward: Option<Vec<f64>>,
    kappa: Vec<f64>,
    terminal: f64,
}

/// Simulates `M` particles on `grid`. The result depends only on
/// `(spec, grid, M, seed)`, never on the thread count.
pub fn simulate_forward(spec: &ProblemSpec, grid: &TimeGrid, particles: usize, seed: u64) -> Result<ForwardCloud> {
    spec.check()?;
    if particles < 2 {
        return Err(Error::Config(format!("M ≥ 2 particles required, got {particles}")));
    }
    if grid.steps() < 2 {
        return Err(Error::Config(format!("N ≥ 2 steps required, got {}", grid.steps())));
    }
    if (grid.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(Error::Config(format!(
            "grid horizon {} differs from problem horizon {}",
            grid.horizon(),
            spec.horizon
        )));
    }
    let dim = spec.brownian_dim;
    let steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    let paths: Vec<ParticlePath> = (0..particles)
        .into_par_iter()
        .map(|i| -> Result<ParticlePath> {
            let mut stream = NormalStream::new(seed, i, dim);
            let mut increments = vec![0.0; steps * dim];
            let mut brownian = vec![0.0; (steps + 1) * dim];
            let mut forward = spec.forward.as_ref().map(|f| {
                let mut x = vec![0.0; (steps + 1) * dim];
                x[..dim].copy_from_slice(&f.initial);
                x
            });
            let mut kappa = vec![0.0; steps + 1];
            for j in 0..steps {
                let db = &mut increments[j * dim..(j + 1) * dim];
                stream.fill_step(j, db);
                db.iter_mut().for_each(|v| *v *= sqrt_dt);
                for r in 0..dim {
                    brownian[(j + 1) * dim + r] = brownian[j * dim + r] + db[r];
                }
                if let (Some(x), Some(fwd)) = (forward.as_mut(), spec.forward.as_ref()) {
                    for r in 0..dim {
                        let xj = x[j * dim + r];
                        let next = xj + fwd.drift(xj) * dt + fwd.diffusion(xj) * db[r];
                        if !next.is_finite() {
                            return Err(Error::Simulation(format!(
                                "non-finite forward state for particle {i} at step {}",
                                j + 1
                            )));
                        }
                        x[(j + 1) * dim + r] = next;
                    }
                }
                let state = match forward.as_ref() {
                    Some(x) => x[j * dim],
                    None => brownian[j * dim],
                };
                kappa[j + 1] = match &spec.kappa {
                    KappaSpec::PathIntegral { integrand, scale } => kappa[j] + scale * integrand.eval(state) * dt,
                    other => other.deterministic_value(grid.t(j + 1)).expect("deterministic kappa"),
                };
            }
            if let Some(k0) = spec.kappa.deterministic_value(0.0) {
                kappa[0] = k0;
            }
            let terminal = spec.terminal.sample(
                spec.horizon,
                &brownian[steps * dim..],
                forward.as_ref().map(|x| &x[steps * dim..]),
            );
            if !terminal.is_finite() {
                return Err(Error::Simulation(format!("non-finite terminal value for particle {i}")));
            }
            Ok(ParticlePath { increments, brownian, forward, kappa, terminal })
        })
        .collect::<Result<_>>()?;

    let mut increments = vec![vec![0.0; particles * dim]; steps];
    let mut brownian = vec![vec![0.0; particles * dim]; steps + 1];
    let mut forward = spec.forward.as_ref().map(|_| vec![vec![0.0; particles * dim]; steps + 1]);
    let mut kappa = vec![vec![0.0; particles]; steps + 1];
    let mut terminal = Vec::with_capacity(particles);
    for (i, p) in paths.into_iter().enumerate() {
        for j in 0..=steps {
            if j < steps {
                increments[j][i * dim..(i + 1) * dim].copy_from_slice(&p.increments[j * dim..(j + 1) * dim]);
            }
            brownian[j][i * dim..(i + 1) * dim].copy_from_slice(&p.brownian[j * dim..(j + 1) * dim]);
            if let (Some(f), Some(px)) = (forward.as_mut(), p.forward.as_ref()) {
                f[j][i * dim..(i + 1) * dim].copy_from_slice(&px[j * dim..(j + 1) * dim]);
            }
            kappa[j][i] = p.kappa[j];
        }
        terminal.push(p.terminal);
    }
    let mean_kappa = kappa.iter().map(|k| mean(k)).collect();

    let cloud =
        ForwardCloud { particles, dim, grid: *grid, seed, increments, brownian, forward, kappa, terminal, mean_kappa };
    if cfg!(debug_assertions) {
        check_increments(&cloud)?;
    }
    Ok(cloud)
}

// Only meaningful when the sample is large enough for the 10% variance band
// to sit many standard errors away.
fn check_increments(cloud: &ForwardCloud) -> Result<()> {
    let count = cloud.particles * cloud.grid.steps();
    if count < 20_000 {
        return Ok(());
    }
    let dt = cloud.grid.dt();
    for (r, (m, v)) in cloud.increment_statistics().into_iter().enumerate() {
        if m.abs() > 5.0 / (count as f64).sqrt() || (v - dt).abs() > 0.1 * dt {
            return Err(Error::Simulation(format!(
                "Brownian increments of coordinate {r} fail the sanity band: mean {m:.3e}, variance {v:.3e} (dt {dt:.3e})"
            )));
        }
    }
    Ok(())
}

/// Fixed-order arithmetic mean.
pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Moment projection `(m_y, m_z, E[Y²])` of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    pub m_y: f64,
    pub m_z: Vec<f64>,
    pub m_y2: f64,
}

/// Means of `y` and of the `d`-vectors stored row-wise in `z`, plus `E[y²]`.
pub fn empirical_moments(y: &[f64], z: &[f64], dim: usize) -> Result<MomentVector> {
    if y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if z.len() != y.len() * dim {
        return Err(Error::LengthMismatch { left: y.len() * dim, right: z.len() });
    }
    let m = y.len() as f64;
    let mut m_z = vec![0.0; dim];
    for row in z.chunks_exact(dim) {
        for (acc, v) in m_z.iter_mut().zip(row) {
            *acc += v;
        }
    }
    m_z.iter_mut().for_each(|v| *v /= m);
    Ok(MomentVector { m_y: mean(y), m_z, m_y2: y.iter().map(|v| v * v).sum::<f64>() / m })
}

/// `sqrt(E|Y|² + E|Z|²)`, the bound on `W₂(ν, δ₀)` in terms of second moments.
pub fn w2_dirac_bound(y: &[f64], z: &[f64], dim: usize) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if z.len() != y.len() * dim {
        return Err(Error::LengthMismatch { left: y.len() * dim, right: z.len() });
    }
    let m = y.len() as f64;
    let sy: f64 = y.iter().map(|v| v * v).sum();
    let sz: f64 = z.iter().map(|v| v * v).sum();
    Ok(((sy + sz) / m).sqrt())
}

/// Exact `W₂` between two equal-size empirical measures on the line.
pub fn empirical_w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((s / a.len() as f64).sqrt())
}
