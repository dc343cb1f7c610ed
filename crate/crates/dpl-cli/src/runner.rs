//! Subcommand implementations: solve, verify, duality-gap and simulate.
//!
//! Every run reads one experiment config, builds the model, and writes its
//! report files into the output directory. All randomness flows through
//! the config seed, and all reductions are deterministic, so identical
//! configs produce byte-identical outputs at any thread count.

use crate::config::{Candidate, ExperimentConfig, UtilityKind};
use dpl_core::constraints::ConstraintSet;
use dpl_core::market::{validate_market, MarketModel};
use dpl_core::paths::{self, PathBundle};
use dpl_core::solvers::{solve_log, solve_nonhara, solve_power, DualSolution, SolveError};
use dpl_core::stats::{mean, mean_and_std_error};
use dpl_core::utility::UtilityFunction;
use dpl_core::verify::{
    self, check_fbsde_residuals_with, fmt_float, McEstimate, VerificationReport,
};
use dpl_core::{map_paths, Vector};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::RequiresCone
            | SolveError::RequiresConstantCoefficients
            | SolveError::RequiresDeterministicCoefficients
            | SolveError::UtilityMismatch { .. } => CliError::Precondition(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<dpl_core::paths::PathError> for CliError {
    fn from(e: dpl_core::paths::PathError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<dpl_core::verify::VerifyError> for CliError {
    fn from(e: dpl_core::verify::VerifyError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Runs `f` on a dedicated rayon pool of `threads` workers; on the default
/// pool when `threads` is `None` or zero. Without the `parallel` feature
/// the thread count is ignored.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match threads {
            Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("building rayon pool")
                .install(f),
            _ => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

struct Experiment {
    market: MarketModel,
    constraint: ConstraintSet,
    utility: UtilityFunction,
    bundle: PathBundle,
}

fn setup(cfg: &ExperimentConfig) -> Result<Experiment, CliError> {
    let market = cfg.build_market()?;
    let validation = validate_market(&market);
    if !validation.passed() {
        let detail = validation
            .failures()
            .iter()
            .map(|c| c.detail.clone())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(CliError::Config(detail));
    }
    let constraint = cfg.build_constraint()?;
    let utility = cfg.build_utility()?;
    let cap = cfg.run.memory_cap_mb.map(|mb| mb * (1 << 20));
    let bundle = match cap {
        Some(bytes) => {
            paths::generate_paths_with_cap(&market, cfg.run.n_paths, cfg.run.seed, bytes)?
        }
        None => paths::generate_paths(&market, cfg.run.n_paths, cfg.run.seed)?,
    };
    Ok(Experiment {
        market,
        constraint,
        utility,
        bundle,
    })
}

fn solve(cfg: &ExperimentConfig, exp: &Experiment) -> Result<DualSolution, CliError> {
    let sol = match cfg.utility.kind {
        UtilityKind::Power => solve_power(&exp.market, &exp.constraint, cfg.utility.beta.unwrap())?,
        UtilityKind::Log => solve_log(&exp.market, &exp.constraint)?,
        UtilityKind::NonHara => solve_nonhara(&exp.market, &exp.constraint)?,
    };
    Ok(sol)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn fmt_vector(v: &Vector) -> String {
    v.iter()
        .map(|x| fmt_float(*x))
        .collect::<Vec<_>>()
        .join(" ")
}

pub struct SolveArtifacts {
    pub solution_path: PathBuf,
    pub solution: DualSolution,
    pub report: VerificationReport,
}

/// Solves the configured problem, verifies it on the configured bundle and
/// writes `solution.txt` with `ŷ`, per-cell controls, values and residual
/// maxima.
pub fn run_solve(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SolveArtifacts, CliError> {
    let exp = setup(cfg)?;
    let solution = solve(cfg, &exp)?;
    let report = check_fbsde_residuals_with(
        &exp.market,
        &solution,
        &exp.bundle,
        None,
        cfg.run.membership_tol,
    )?;

    let mut out = String::new();
    out.push_str(&format!("utility = {}\n", solution.utility().name()));
    out.push_str(&format!("y_hat = {}\n", fmt_float(solution.y_hat)));
    if let Some(v) = solution.dual_value {
        out.push_str(&format!("dual_value = {}\n", fmt_float(v)));
    }
    if let Some(v) = solution.primal_value {
        out.push_str(&format!("primal_value = {}\n", fmt_float(v)));
    }
    out.push_str(&format!(
        "mc_primal_value = {}\n",
        fmt_float(report.primal.mean)
    ));
    out.push_str(&format!(
        "mc_dual_value = {}\n",
        fmt_float(report.dual.mean)
    ));
    out.push_str(&format!(
        "mc_duality_gap = {}\n",
        fmt_float(report.duality_gap)
    ));

    match (solution.controls(), solution.initial_portfolios()) {
        (Some(controls), Some(pis)) => {
            out.push_str("control_mode = per_cell\n");
            // one line per coefficient cell of the config (controls are
            // constant across the simulation steps inside one cell)
            let steps = cfg.run.steps;
            let cells = cfg.market.r.len();
            for cell in 0..cells {
                let step = (cell * steps).div_ceil(cells).min(steps - 1);
                out.push_str(&format!(
                    "v_hat.cell{cell} = {}\n",
                    fmt_vector(&controls[step].v_hat)
                ));
                out.push_str(&format!(
                    "theta_hat.cell{cell} = {}\n",
                    fmt_vector(&controls[step].theta_hat)
                ));
                out.push_str(&format!("pi_hat.cell{cell} = {}\n", fmt_vector(&pis[step])));
            }
        }
        _ => {
            out.push_str("control_mode = per_path\n");
        }
    }
    for row in &report.rows {
        out.push_str(&format!(
            "residual.{} = {}\n",
            row.name,
            fmt_float(row.max_residual)
        ));
    }

    let solution_path = out_dir.join("solution.txt");
    write(&solution_path, &out)?;
    Ok(SolveArtifacts {
        solution_path,
        solution,
        report,
    })
}

pub struct VerifyArtifacts {
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub report: VerificationReport,
}

/// Solves and verifies the configured problem; writes `verification.csv`
/// (one row per condition) and a human-readable summary.
pub fn run_verify(cfg: &ExperimentConfig, out_dir: &Path) -> Result<VerifyArtifacts, CliError> {
    let exp = setup(cfg)?;
    let solution = solve(cfg, &exp)?;
    let report = check_fbsde_residuals_with(
        &exp.market,
        &solution,
        &exp.bundle,
        cfg.run.perturb_pi,
        cfg.run.membership_tol,
    )?;

    let csv_path = out_dir.join("verification.csv");
    write(&csv_path, &report.to_csv())?;
    let summary_path = out_dir.join("verification_summary.txt");
    write(&summary_path, &report.summary())?;
    Ok(VerifyArtifacts {
        csv_path,
        summary_path,
        report,
    })
}

pub struct GapArtifacts {
    pub csv_path: PathBuf,
    pub rows: Vec<GapRow>,
}

#[derive(Debug, Clone)]
pub struct GapRow {
    pub label: &'static str,
    pub primal: McEstimate,
    pub dual: McEstimate,
    pub gap: f64,
}

/// Estimates the primal value of each candidate strategy against the
/// solved dual bound on common random numbers; writes `duality_gap.csv`.
pub fn run_duality_gap(cfg: &ExperimentConfig, out_dir: &Path) -> Result<GapArtifacts, CliError> {
    let exp = setup(cfg)?;
    let solution = solve(cfg, &exp)?;
    let tables = exp
        .market
        .tables()
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    // dual side and the optimal-wealth primal side from the evaluators
    let terminals: Vec<(f64, f64)> = {
        let per_path: Vec<Result<(f64, f64), CliError>> = map_paths(exp.bundle.n_paths(), |path| {
            let sp = solution
                .evaluate_path(&tables, &exp.bundle, path)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok((sp.p2[sp.n_points() - 1], sp.y[sp.n_points() - 1]))
        });
        let mut acc = Vec::with_capacity(per_path.len());
        for t in per_path {
            acc.push(t?);
        }
        acc
    };
    let dual_values: Vec<f64> = terminals
        .iter()
        .map(|(_, y)| exp.utility.conjugate(*y))
        .collect();
    let dual = {
        let (m, se) = mean_and_std_error(&dual_values);
        McEstimate {
            mean: m + exp.market.x0() * solution.y_hat,
            std_error: se,
            n_paths: dual_values.len(),
        }
    };

    let steps = exp.market.n_steps();
    let mut rows = Vec::new();
    for candidate in &cfg.run.candidates {
        let primal = match candidate {
            Candidate::Zero => {
                let pi = vec![Vector::zeros(exp.market.n_assets()); steps];
                verify::estimate_primal_value(
                    &exp.market,
                    &exp.constraint,
                    &exp.utility,
                    &pi,
                    &exp.bundle,
                )?
            }
            Candidate::Merton => {
                let pi = merton_candidate(cfg, &exp)?;
                verify::estimate_primal_value(
                    &exp.market,
                    &exp.constraint,
                    &exp.utility,
                    &pi,
                    &exp.bundle,
                )?
            }
            Candidate::Solver => {
                // the optimal wealth itself: X̂ = p̂₂ pathwise
                let values: Vec<f64> = terminals.iter().map(|(x, _)| exp.utility.u(*x)).collect();
                McEstimate::from_values(&values)
            }
        };
        rows.push(GapRow {
            label: candidate.label(),
            primal,
            dual,
            gap: dual.mean - primal.mean,
        });
    }

    let mut csv = String::from("label,primal,primal_se,dual,dual_se,gap\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.label,
            fmt_float(row.primal.mean),
            fmt_float(row.primal.std_error),
            fmt_float(row.dual.mean),
            fmt_float(row.dual.std_error),
            fmt_float(row.gap)
        ));
    }
    let csv_path = out_dir.join("duality_gap.csv");
    write(&csv_path, &csv)?;
    Ok(GapArtifacts { csv_path, rows })
}

/// Unconstrained fixed-mix candidate `(σσᵀ)⁻¹(b − r·1)` (scaled by
/// `1/(1−β)` for power utility), projected onto `K` for admissibility.
fn merton_candidate(cfg: &ExperimentConfig, exp: &Experiment) -> Result<Vec<Vector>, CliError> {
    let tables = exp
        .market
        .tables()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let scale = match cfg.utility.kind {
        UtilityKind::Power => 1.0 / (1.0 - cfg.utility.beta.unwrap()),
        _ => 1.0,
    };
    tables
        .cells
        .iter()
        .map(|cell| {
            let unconstrained = scale * (&cell.sigma_inv_t * &cell.theta);
            exp.constraint
                .project(&unconstrained)
                .map_err(|e| CliError::Runtime(e.to_string()))
        })
        .collect()
}

pub struct SimulateArtifacts {
    pub bin_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Generates the configured bundle, dumps it in the `DPL1` binary format
/// and writes sample-moment statistics of the increments.
pub fn run_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SimulateArtifacts, CliError> {
    let exp = setup(cfg)?;
    let bundle = &exp.bundle;

    let bin_path = out_dir.join("paths.bin");
    if let Some(dir) = bin_path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = std::io::BufWriter::new(fs::File::create(&bin_path)?);
    bundle.write_to(&mut file)?;
    drop(file);

    let all: Vec<f64> = (0..bundle.n_paths())
        .flat_map(|p| bundle.increments(p).iter().copied().collect::<Vec<_>>())
        .collect();
    let m = mean(&all);
    let sq: Vec<f64> = all.iter().map(|x| x * x).collect();
    let second_moment = mean(&sq);
    let dt_mean = exp.market.horizon() / exp.market.n_steps() as f64;

    let mut out = String::new();
    out.push_str(&format!("n_assets = {}\n", bundle.n_assets()));
    out.push_str(&format!("n_steps = {}\n", bundle.n_steps()));
    out.push_str(&format!("n_paths = {}\n", bundle.n_paths()));
    out.push_str(&format!("seed = {}\n", bundle.seed()));
    out.push_str(&format!("increment_mean = {}\n", fmt_float(m)));
    out.push_str(&format!(
        "increment_second_moment = {}\n",
        fmt_float(second_moment)
    ));
    out.push_str(&format!("mean_dt = {}\n", fmt_float(dt_mean)));
    let summary_path = out_dir.join("simulate_summary.txt");
    write(&summary_path, &out)?;
    Ok(SimulateArtifacts {
        bin_path,
        summary_path,
    })
}
