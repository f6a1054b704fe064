//! Orchestration of the four experiments and the tables they emit.

use mrbsde::diagnostics::{
    apriori_report, penalty_ladder, rate_fit, stability_experiment, z_target_spread, LadderRow, Perturbation,
};
use mrbsde::oracle::{mean_z_closed_form, reference_path, DEFAULT_FINE_STEPS};
use mrbsde::reflect::{flatness_cumulative, recover_compensator, LevelRecord};
use mrbsde::table::g12;
use mrbsde::{
    mollify_obstacle, simulate_forward, solve_penalized, solve_reflected, validate_problem, Error, ForwardCloud,
    PenalizedSolution, SmoothObstacle, TimeGrid,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Samples drawn by the assumption checks recorded in every report.
const VALIDATION_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Solve,
    Rates,
    Stability,
    OracleCheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::Rates => "rates",
            Experiment::Stability => "stability",
            Experiment::OracleCheck => "oracle-check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    NotConverged,
    Failed,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Fill the `wall_ms` column. Off by default so tables stay byte-reproducible.
    pub wall_clock: bool,
}

/// Everything a run writes, held in memory until committed to disk.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub experiment: Experiment,
    pub status: RunStatus,
    pub mean_path: String,
    pub convergence: String,
    pub diagnostics: Value,
}

/// One row of `convergence.csv`.
#[derive(Debug, Clone)]
struct ConvergenceRow {
    k: usize,
    n: u64,
    sup_neg_sq: f64,
    integral_neg_sq: f64,
    cauchy: Option<f64>,
    flatness: f64,
    wall_ms: Option<f64>,
}

impl ConvergenceRow {
    fn from_level(r: &LevelRecord, wall_clock: bool) -> Self {
        ConvergenceRow {
            k: r.k,
            n: r.n,
            sup_neg_sq: r.sup_neg_sq,
            integral_neg_sq: r.integral_neg_sq,
            cauchy: r.cauchy,
            flatness: r.flatness,
            wall_ms: wall_clock.then_some(r.elapsed_ms),
        }
    }

    fn from_ladder(r: &LadderRow) -> Self {
        ConvergenceRow {
            k: r.k,
            n: r.n,
            sup_neg_sq: r.sup_neg_sq,
            integral_neg_sq: r.integral_neg_sq,
            cauchy: r.cauchy,
            flatness: r.flatness,
            wall_ms: None,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(g12).unwrap_or_default()
}

fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("k,n,sup_neg_sq,integral_neg_sq,cauchy_mean_dist,flatness_residual,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.k,
            r.n,
            g12(r.sup_neg_sq),
            g12(r.integral_neg_sq),
            opt(r.cauchy),
            g12(r.flatness),
            opt(r.wall_ms)
        ));
    }
    out
}

fn mean_path_header(dim: usize) -> String {
    let z: Vec<String> = (1..=dim).map(|r| format!("mean_Z_{r}")).collect();
    format!("t,mean_Y,{},u,u_k,K,flatness_cum\n", z.join(","))
}

fn mean_path_csv(solution: &PenalizedSolution, exact_u: &[f64], u_k: &SmoothObstacle, k: &[f64]) -> CliResult<String> {
    let cum = flatness_cumulative(&solution.mean_y, &u_k.values, k)?;
    let mut out = mean_path_header(solution.dim);
    for j in 0..=solution.steps() {
        let mut cells = vec![g12(solution.grid.t(j)), g12(solution.mean_y[j])];
        cells.extend(solution.mean_z_at_node(j).iter().map(|v| g12(*v)));
        cells.extend([g12(exact_u[j]), g12(u_k.values[j]), g12(k[j]), g12(cum[j])]);
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn sup_gap(a: &[f64], b: impl Fn(usize) -> f64) -> f64 {
    a.iter().enumerate().map(|(j, v)| (v - b(j)).abs()).fold(0.0, f64::max)
}

fn fit_json(levels: &[f64], errors: &[f64]) -> Value {
    match rate_fit(levels, errors) {
        Ok(fit) => serde_json::to_value(fit).expect("serializable"),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

struct Setup {
    grid: TimeGrid,
    cloud: ForwardCloud,
    validation: Value,
}

fn setup(config: &RunConfig) -> CliResult<Setup> {
    let spec = &config.problem;
    let grid = TimeGrid::new(spec.horizon, config.numerics.steps)?;
    let cloud = simulate_forward(spec, &grid, config.numerics.particles, config.seed)?;
    let validation =
        serde_json::to_value(validate_problem(spec, VALIDATION_SAMPLES, config.seed)?).expect("serializable");
    Ok(Setup { grid, cloud, validation })
}

fn exact_obstacle(config: &RunConfig, grid: &TimeGrid) -> Vec<f64> {
    grid.nodes().into_iter().map(|t| config.problem.obstacle.eval(t)).collect()
}

fn run_solve(config: &RunConfig, options: RunOptions) -> CliResult<RunArtifacts> {
    let Setup { cloud, validation, .. } = setup(config)?;
    let spec = &config.problem;
    let result = solve_reflected(
        spec,
        &cloud,
        &config.schedule.convergence(),
        &config.numerics.basis,
        config.numerics.quad_points,
    );
    match result {
        Ok(r) => {
            let rows: Vec<ConvergenceRow> =
                r.trace.iter().map(|l| ConvergenceRow::from_level(l, options.wall_clock)).collect();
            let k_terminal = *r.compensator.values.last().expect("non-empty");
            let apriori = apriori_report(&r.solution, spec, &cloud, k_terminal);
            Ok(RunArtifacts {
                experiment: Experiment::Solve,
                status: RunStatus::Ok,
                mean_path: mean_path_csv(&r.solution, &r.exact_obstacle, &r.obstacle, &r.compensator.values)?,
                convergence: convergence_csv(&rows),
                diagnostics: json!({
                    "validation": validation,
                    "final_level": { "n": r.solution.n, "k": r.solution.k },
                    "levels_n": r.levels_n,
                    "levels_k": r.levels_k,
                    "sup_deficit": r.sup_deficit(),
                    "sup_deficit_exact_obstacle": mrbsde::reflect::sup_deficit(r.mean_y(), &r.exact_obstacle),
                    "terminal_gap": mrbsde::diagnostics::terminal_gap(r.mean_y(), &r.obstacle.values),
                    "mollifier_sup_gap": r.obstacle.sup_gap,
                    "flatness_residual": r.flatness,
                    "compensator_terminal": k_terminal,
                    "compensator_penalty_gap": sup_gap(&r.compensator.values, |j| r.solution.compensator[j]),
                    "compensator_warnings": r.compensator.warnings,
                    "apriori": apriori,
                }),
            })
        }
        Err(Error::NotConverged { trace }) => {
            let rows: Vec<ConvergenceRow> =
                trace.iter().map(|l| ConvergenceRow::from_level(l, options.wall_clock)).collect();
            Ok(RunArtifacts {
                experiment: Experiment::Solve,
                status: RunStatus::NotConverged,
                mean_path: mean_path_header(spec.brownian_dim),
                convergence: convergence_csv(&rows),
                diagnostics: json!({
                    "validation": validation,
                    "error": Error::NotConverged { trace }.to_string(),
                }),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn run_rates(config: &RunConfig) -> CliResult<RunArtifacts> {
    let Setup { grid, cloud, validation } = setup(config)?;
    let spec = &config.problem;
    let basis = &config.numerics.basis;
    let u_k = mollify_obstacle(&spec.obstacle, config.schedule.max_k(), &grid, config.numerics.quad_points)?;
    let ladder = penalty_ladder(spec, &cloud, basis, &u_k, &config.schedule.n)?;
    let levels: Vec<f64> = ladder.iter().map(|r| r.n as f64).collect();
    let sup: Vec<f64> = ladder.iter().map(|r| r.sup_neg_sq).collect();
    let integral: Vec<f64> = ladder.iter().map(|r| r.integral_neg_sq).collect();
    // Each Cauchy distance is attributed to the coarser level of its pair.
    let cauchy_levels: Vec<f64> = levels.iter().take(levels.len().saturating_sub(1)).copied().collect();
    let cauchy: Vec<f64> = ladder.iter().filter_map(|r| r.cauchy).collect();

    let last = solve_penalized(spec, &u_k, config.schedule.max_n(), &cloud, basis)?;
    let rows: Vec<ConvergenceRow> = ladder.iter().map(ConvergenceRow::from_ladder).collect();
    Ok(RunArtifacts {
        experiment: Experiment::Rates,
        status: RunStatus::Ok,
        mean_path: mean_path_csv(&last, &exact_obstacle(config, &grid), &u_k, &last.compensator)?,
        convergence: convergence_csv(&rows),
        diagnostics: json!({
            "validation": validation,
            "k": u_k.level,
            "rates": {
                "sup_neg_sq": fit_json(&levels, &sup),
                "integral_neg_sq": fit_json(&levels, &integral),
                "cauchy_mean_dist": fit_json(&cauchy_levels, &cauchy),
            },
        }),
    })
}

fn run_stability(config: &RunConfig) -> CliResult<RunArtifacts> {
    let Setup { grid, cloud, validation } = setup(config)?;
    let spec = &config.problem;
    let basis = &config.numerics.basis;
    let (n, k) = (config.schedule.max_n(), config.schedule.max_k());
    let u_k = mollify_obstacle(&spec.obstacle, k, &grid, config.numerics.quad_points)?;
    let rows = stability_experiment(spec, &cloud, basis, &u_k, n, &config.schedule.epsilons, Perturbation::Terminal)?;
    let positive: Vec<_> = rows.iter().filter(|r| r.epsilon > 0.0).collect();
    let eps: Vec<f64> = positive.iter().map(|r| r.epsilon).collect();
    let dy: Vec<f64> = positive.iter().map(|r| r.sup_mean_sq_y).collect();

    let base = solve_penalized(spec, &u_k, n, &cloud, basis)?;
    let (sup_neg_sq, integral_neg_sq) = mrbsde::diagnostics::deficit_metrics(&base, &u_k, cloud.mean_kappa())?;
    let flatness = mrbsde::reflect::flatness_residual(&base.mean_y, &u_k.values, &base.compensator)?;
    let level = ConvergenceRow { k, n, sup_neg_sq, integral_neg_sq, cauchy: None, flatness, wall_ms: None };
    Ok(RunArtifacts {
        experiment: Experiment::Stability,
        status: RunStatus::Ok,
        mean_path: mean_path_csv(&base, &exact_obstacle(config, &grid), &u_k, &base.compensator)?,
        convergence: convergence_csv(&[level]),
        diagnostics: json!({
            "validation": validation,
            "level": { "n": n, "k": k },
            "stability": rows,
            "stability_slope": fit_json(&eps, &dy),
        }),
    })
}

fn run_oracle_check(config: &RunConfig) -> CliResult<RunArtifacts> {
    let Setup { grid, cloud, validation } = setup(config)?;
    let spec = &config.problem;
    let basis = &config.numerics.basis;
    let (n, k) = (config.schedule.max_n(), config.schedule.max_k());
    let Some((kind, oracle)) = reference_path(spec, DEFAULT_FINE_STEPS)? else {
        return Err(CliError::Config("no deterministic reference applies to this problem".into()));
    };
    let u_k = mollify_obstacle(&spec.obstacle, k, &grid, config.numerics.quad_points)?;
    let solution = solve_penalized(spec, &u_k, n, &cloud, basis)?;
    let compensator = recover_compensator(&solution, spec, &cloud);
    let nodes = grid.nodes();
    let mean_gap = sup_gap(&solution.mean_y, |j| oracle.mean_at(nodes[j]));
    let k_gap = sup_gap(&compensator.values, |j| oracle.compensator_at(nodes[j]));
    let flatness = mrbsde::reflect::flatness_residual(&solution.mean_y, &u_k.values, &compensator.values)?;
    let (sup_neg_sq, integral_neg_sq) = mrbsde::diagnostics::deficit_metrics(&solution, &u_k, cloud.mean_kappa())?;

    // Standardized error of E[Z] against its closed form, where one exists.
    let mean_z = match mean_z_closed_form(spec, 0.0) {
        Some(_) => {
            let spread = z_target_spread(&solution, &cloud);
            let m = (solution.particles as f64).sqrt();
            let mut worst = 0.0f64;
            let mut worst_abs = 0.0f64;
            for (j, (mean_z, spread)) in solution.mean_z.iter().zip(&spread).enumerate() {
                let exact = mean_z_closed_form(spec, grid.t(j)).expect("checked above");
                for ((z, e), s) in mean_z.iter().zip(&exact).zip(spread) {
                    let gap = (z - e).abs();
                    worst_abs = worst_abs.max(gap);
                    worst = worst.max(if *s > 0.0 {
                        gap / (s / m)
                    } else if gap == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    });
                }
            }
            json!({ "max_abs_gap": worst_abs, "max_standardized_gap": worst })
        }
        None => Value::Null,
    };

    let level = ConvergenceRow { k, n, sup_neg_sq, integral_neg_sq, cauchy: None, flatness, wall_ms: None };
    Ok(RunArtifacts {
        experiment: Experiment::OracleCheck,
        status: RunStatus::Ok,
        mean_path: mean_path_csv(&solution, &exact_obstacle(config, &grid), &u_k, &compensator.values)?,
        convergence: convergence_csv(&[level]),
        diagnostics: json!({
            "validation": validation,
            "level": { "n": n, "k": k },
            "oracle": kind,
            "mean_sup_gap": mean_gap,
            "compensator_sup_gap": k_gap,
            "flatness_residual": flatness,
            "mean_z": mean_z,
        }),
    })
}

/// Runs `experiment` inside a pool of `config.threads` workers (0 = all cores).
pub fn run_experiment(config: &RunConfig, experiment: Experiment, options: RunOptions) -> CliResult<RunArtifacts> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match experiment {
        Experiment::Solve => run_solve(config, options),
        Experiment::Rates => run_rates(config),
        Experiment::Stability => run_stability(config),
        Experiment::OracleCheck => run_oracle_check(config),
    })
}
