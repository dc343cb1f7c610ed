//! Independent verification of solved problems: Monte Carlo value
//! estimators, weak-duality checks, pathwise residuals of both adjoint
//! BSDEs and the static optimality conditions, a nested Monte Carlo oracle
//! for the dual adjoint, and the primal↔dual round-trip maps.
//!
//! Every estimator reduces per-path values in path-index order (pairwise
//! summation), so reports are byte-identical across thread counts.

use crate::constraints::{ConstraintSet, MEMBERSHIP_TOL};
use crate::market::{MarketError, MarketModel};
use crate::paths::{self, PathBundle, PathError};
use crate::rng::{branch_stream, sampler_stream};
use crate::solvers::{DualSolution, SolutionPath, SolveError};
use crate::stats::{mean_and_std_error, pairwise_sum};
use crate::utility::UtilityFunction;
use crate::{map_paths, Vector};
use rand::RngExt;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Tolerance of `p̂₂(0) = x₀`, relative to `x₀`.
pub const TOL_INITIAL_WEALTH: f64 = 1e-9;
/// Membership tolerance of `π̂(t) ∈ K`.
pub const TOL_MEMBERSHIP: f64 = MEMBERSHIP_TOL;
/// Tolerance of the static condition `p̂₂δ_K(v̂) + q̂₂ᵀσ⁻¹v̂ = 0`,
/// relative to `p̂₂`.
pub const TOL_STATIC_CONDITION: f64 = 1e-9;
/// Tolerance of the normal-cone condition and of `v̂ᵀπ̂ = 0`.
pub const TOL_NORMAL_CONE: f64 = 1e-9;
/// Tolerance of the terminal conditions of both adjoint BSDEs.
pub const TOL_TERMINAL: f64 = 1e-9;
/// Tolerance of the reverse dual-control map.
pub const TOL_REVERSE_MAP: f64 = 1e-9;
/// Tolerance of the wealth re-simulation identity (relative).
pub const TOL_RESIMULATION: f64 = 1e-9;
/// Confidence multiplier of all Monte Carlo assertions (two-sided ~99.99%).
pub const MC_CONFIDENCE: f64 = 4.0;
/// Sanity cap on the normalized one-step BSDE residuals `|res|/(p·Δt)`.
/// The sharp statement is the refinement scaling, checked separately.
pub const BSDE_RESIDUAL_CAP: f64 = 50.0;
/// Cap on `n_outer × n_inner` of one nested Monte Carlo call; the cost of
/// the oracle is quadratic and a runaway budget is almost surely a typo.
pub const ORACLE_BRANCH_BUDGET: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("strategy leaves the constraint set on cell {cell}")]
    InadmissibleStrategy { cell: usize },
    #[error("dual initial value must be positive")]
    NonPositiveY,
    #[error("nested oracle requires deterministic coefficients")]
    OracleNeedsDeterministicCoefficients,
    #[error("branch budget exceeded: {requested} > {cap}")]
    BranchBudgetExceeded { requested: usize, cap: usize },
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let (mean, std_error) = mean_and_std_error(values);
        McEstimate {
            mean,
            std_error,
            n_paths: values.len(),
        }
    }

    fn shifted(mut self, offset: f64) -> Self {
        self.mean += offset;
        self
    }
}

/// Estimates the primal objective `E[U(X^π(T))]` for an admissible
/// per-cell strategy.
pub fn estimate_primal_value(
    m: &MarketModel,
    k_set: &ConstraintSet,
    utility: &UtilityFunction,
    pi: &[Vector],
    bundle: &PathBundle,
) -> Result<McEstimate, VerifyError> {
    for (cell, p) in pi.iter().enumerate() {
        if !k_set.contains(p, TOL_MEMBERSHIP) {
            return Err(VerifyError::InadmissibleStrategy { cell });
        }
    }
    let xs = paths::simulate_wealth(m, pi, bundle)?;
    let values: Vec<f64> = (0..bundle.n_paths())
        .map(|p| utility.u(xs.terminal(p)))
        .collect();
    Ok(McEstimate::from_values(&values))
}

/// Estimates the dual objective `x₀y + E[Ũ(Y^{(y,v)}(T))]`.
pub fn estimate_dual_value(
    m: &MarketModel,
    k_set: &ConstraintSet,
    utility: &UtilityFunction,
    y: f64,
    v: &[Vector],
    bundle: &PathBundle,
) -> Result<McEstimate, VerifyError> {
    if !(y > 0.0) {
        return Err(VerifyError::NonPositiveY);
    }
    let ys = paths::simulate_dual(m, y, v, k_set, bundle)?;
    let values: Vec<f64> = (0..bundle.n_paths())
        .map(|p| utility.conjugate(ys.terminal(p)))
        .collect();
    Ok(McEstimate::from_values(&values).shifted(m.x0() * y))
}

/// Outcome of one weak-duality comparison on common random numbers.
#[derive(Debug, Clone)]
pub struct WeakDualityReport {
    pub primal: McEstimate,
    pub dual: McEstimate,
    /// `dual − primal`; nonnegative up to Monte Carlo error by weak duality.
    pub margin: f64,
    pub combined_std_error: f64,
    pub pass: bool,
}

/// Checks `E[U(X^π(T))] ≤ x₀y + E[Ũ(Y^{(y,v)}(T))]` for an admissible pair,
/// within the Monte Carlo confidence band.
pub fn weak_duality_check(
    m: &MarketModel,
    k_set: &ConstraintSet,
    utility: &UtilityFunction,
    pi: &[Vector],
    y: f64,
    v: &[Vector],
    bundle: &PathBundle,
) -> Result<WeakDualityReport, VerifyError> {
    let primal = estimate_primal_value(m, k_set, utility, pi, bundle)?;
    let dual = estimate_dual_value(m, k_set, utility, y, v, bundle)?;
    let margin = dual.mean - primal.mean;
    let combined = (primal.std_error.powi(2) + dual.std_error.powi(2)).sqrt();
    Ok(WeakDualityReport {
        primal,
        dual,
        margin,
        combined_std_error: combined,
        pass: margin >= -MC_CONFIDENCE * combined,
    })
}

/// Draws a per-cell strategy uniformly from `K ∩ unit ball` by rejection.
pub fn sample_admissible_strategy(
    k_set: &ConstraintSet,
    n_cells: usize,
    seed: u64,
    draw: usize,
) -> Vec<Vector> {
    let mut rng = sampler_stream(seed, draw);
    let n = k_set.dim();
    (0..n_cells)
        .map(|_| {
            for _ in 0..10_000 {
                let cand = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                if cand.norm() <= 1.0 && k_set.contains(&cand, 0.0) {
                    return cand;
                }
            }
            Vector::zeros(n)
        })
        .collect()
}

/// Draws a per-cell dual control from the barrier cone: a random
/// nonnegative combination of its generators with a bounded magnitude.
pub fn sample_barrier_control(
    k_set: &ConstraintSet,
    n_cells: usize,
    seed: u64,
    draw: usize,
) -> Vec<Vector> {
    let mut rng = sampler_stream(seed, draw);
    let n = k_set.dim();
    let generators = k_set.barrier_cone_generators();
    (0..n_cells)
        .map(|_| {
            if generators.is_empty() {
                return Vector::zeros(n);
            }
            let mut v = Vector::zeros(n);
            for g in &generators {
                v += rng.random::<f64>() * g;
            }
            let norm = v.norm();
            if norm > 0.0 {
                v *= rng.random_range(0.0..0.3) / norm;
            }
            v
        })
        .collect()
}

/// Nested Monte Carlo certificate of the dual adjoint `p̂₂(t)`.
#[derive(Debug, Clone)]
pub struct AdjointOracleReport {
    /// Variance-weighted aggregate of the per-path normalized deviations;
    /// approximately standard normal when the closed form is correct.
    pub aggregate_z: f64,
    /// Largest per-path deviation relative to the closed-form value.
    pub max_rel_deviation: f64,
    /// Largest per-path normalized deviation.
    pub max_abs_z: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub t_index: usize,
}

impl AdjointOracleReport {
    pub fn pass(&self) -> bool {
        self.aggregate_z.abs() <= MC_CONFIDENCE
    }
}

/// Estimates `E[−Y(T)Ũ′(Y(T)) | F_t] / Y(t)` by resimulating `n_inner`
/// branches from the realized state of each of `n_outer` paths, and
/// compares with the closed-form `p̂₂(t)`.
pub fn adjoint_oracle_p2(
    m: &MarketModel,
    solution: &DualSolution,
    bundle: &PathBundle,
    t_index: usize,
    n_outer: usize,
    n_inner: usize,
) -> Result<AdjointOracleReport, VerifyError> {
    let tables = m.tables()?;
    if tables.is_random() {
        return Err(VerifyError::OracleNeedsDeterministicCoefficients);
    }
    assert!(t_index <= tables.n_steps(), "t_index must be a grid index");
    assert!(n_outer >= 1 && n_outer <= bundle.n_paths());
    if n_outer.saturating_mul(n_inner) > ORACLE_BRANCH_BUDGET {
        return Err(VerifyError::BranchBudgetExceeded {
            requested: n_outer * n_inner,
            cap: ORACLE_BRANCH_BUDGET,
        });
    }

    let utility = solution.utility();
    let seed = bundle.seed();

    struct OuterStat {
        dev: f64,
        se: f64,
        p2: f64,
    }

    let stats: Vec<Result<OuterStat, VerifyError>> = map_paths(n_outer, |outer| {
        let sp = solution.evaluate_path(&tables, bundle, outer)?;
        let y_t = sp.y[t_index];
        let p2_closed = sp.p2[t_index];
        let controls = sp.controls.as_slice();
        let cells = sp.cells.as_slice();

        let mut values = Vec::with_capacity(n_inner);
        for branch in 0..n_inner {
            let mut rng = branch_stream(seed, t_index, outer, branch);
            let mut log_y = y_t.ln();
            for k in t_index..tables.n_steps() {
                let (cell, ctrl) = (&cells[k], &controls[k]);
                let th_sq = ctrl.theta_hat.norm_squared();
                let mut shock = 0.0;
                for a in 0..tables.n_assets {
                    let z: f64 = rng.sample(StandardNormal);
                    shock += ctrl.theta_hat[a] * z * cell.dt.sqrt();
                }
                log_y += -(cell.r + ctrl.support_v + 0.5 * th_sq) * cell.dt - shock;
            }
            let y_term = log_y.exp();
            // −Y(T)Ũ′(Y(T)) = Y(T)·I(Y(T))
            values.push(y_term * utility.inverse_marginal(y_term));
        }
        let est = McEstimate::from_values(&values);
        Ok(OuterStat {
            dev: est.mean / y_t - p2_closed,
            se: est.std_error / y_t,
            p2: p2_closed,
        })
    });

    let mut zs = Vec::with_capacity(n_outer);
    let mut max_rel = 0.0_f64;
    for stat in stats {
        let stat = stat?;
        max_rel = max_rel.max(stat.dev.abs() / stat.p2);
        let z = if stat.dev.abs() <= 1e-9 * stat.p2 {
            0.0
        } else if stat.se > 0.0 {
            stat.dev / stat.se
        } else {
            f64::INFINITY
        };
        zs.push(z);
    }
    let aggregate_z = pairwise_sum(&zs) / (zs.len() as f64).sqrt();
    let max_abs_z = zs.iter().fold(0.0_f64, |a, z| a.max(z.abs()));
    Ok(AdjointOracleReport {
        aggregate_z,
        max_rel_deviation: max_rel,
        max_abs_z,
        n_outer,
        n_inner,
        t_index,
    })
}

/// One verified condition with its worst residual over paths × grid.
#[derive(Debug, Clone)]
pub struct ConditionRow {
    pub name: &'static str,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ConditionRow {
    fn new(name: &'static str, max_residual: f64, tolerance: f64) -> Self {
        let max_residual = max_residual + 0.0; // normalize -0.0 in reports
        let pass = max_residual.is_finite() && max_residual <= tolerance;
        ConditionRow {
            name,
            max_residual,
            tolerance,
            pass,
        }
    }
}

/// Residuals of every optimality condition plus the Monte Carlo value
/// estimates at the solved controls.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub rows: Vec<ConditionRow>,
    pub primal: McEstimate,
    pub dual: McEstimate,
    /// `dual − primal` at the solved controls (common random numbers).
    pub duality_gap: f64,
    /// Standard error of the pathwise-paired gap estimate.
    pub gap_std_error: f64,
    /// Largest one-step residual of the dual adjoint BSDE, relative to `p̂₂`
    /// (not divided by Δt): halves under grid refinement.
    pub bsde_p2_step_max: f64,
    /// Same for the primal adjoint BSDE, relative to `|p̂₁|`.
    pub bsde_p1_step_max: f64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failed_count(&self) -> usize {
        self.rows.iter().filter(|r| !r.pass).count()
    }

    /// One row per condition: `name,max_residual,tolerance,pass`.
    /// Comma separator, `.` decimal, LF line endings, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,max_residual,tolerance,pass\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.name,
                fmt_float(row.max_residual),
                fmt_float(row.tolerance),
                row.pass
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "primal value  {} (se {})\ndual value    {} (se {})\nduality gap   {} (paired se {})\n\n",
            fmt_float(self.primal.mean),
            fmt_float(self.primal.std_error),
            fmt_float(self.dual.mean),
            fmt_float(self.dual.std_error),
            fmt_float(self.duality_gap),
            fmt_float(self.gap_std_error),
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<28} {}  (tol {})  {}\n",
                row.name,
                fmt_float(row.max_residual),
                fmt_float(row.tolerance),
                if row.pass { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

/// 17 significant digits: enough to reproduce the f64 bit pattern.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Normalized deviation for a Monte Carlo assertion. Deviations at the
/// floating-point noise floor count as zero: a deterministic statistic has
/// a sample standard error of a few ulps, and dividing noise by noise
/// would produce a meaningless ratio.
fn z_score(dev: f64, se: f64, scale: f64) -> f64 {
    if dev.abs() <= 1e-9 * scale.abs().max(1e-300) {
        0.0
    } else if se > 0.0 {
        dev.abs() / se
    } else {
        f64::INFINITY
    }
}

/// Per-path reduction state of the condition checks.
#[derive(Debug, Clone, Default)]
struct PathChecks {
    membership: f64,
    static_condition: f64,
    normal_cone: f64,
    orthogonality: f64,
    bsde_p2_rel: f64,
    bsde_p2_rel_dt: f64,
    bsde_p1_rel: f64,
    bsde_p1_rel_dt: f64,
    terminal_p1: f64,
    terminal_p2: f64,
    reverse_map: f64,
    resimulation: f64,
    u_terminal: f64,
    conj_terminal: f64,
    p2y_terminal: f64,
}

/// One-step residuals of both adjoint BSDEs at cell `k`, relative to the
/// running adjoint magnitudes.
///
/// Dual adjoint: `dp₂ = [(r + δ)p₂ + q₂ᵀθ̂]dt + q₂ᵀdW`. Primal adjoint:
/// `dp₁ = −[(r + π̂ᵀσθ)p₁ + q̂₁ᵀσᵀπ̂]dt + q̂₁ᵀdW`, with `p̂₁ = −Y`,
/// `q̂₁ = Yθ̂` and the exact identities `σθ = b − r·1`, `σθ̂ = b − r·1 + v̂`.
fn one_step_residuals(sp: &SolutionPath<'_>, k: usize, increments: &[f64]) -> (f64, f64) {
    let cells = sp.cells.as_slice();
    let controls = sp.controls.as_slice();
    let (cell, ctrl) = (&cells[k], &controls[k]);
    let n = cell.b.len();
    let dw = &increments[k * n..(k + 1) * n];
    let th_dw = ctrl
        .theta_hat
        .iter()
        .zip(dw)
        .map(|(a, b)| a * b)
        .sum::<f64>();
    let th_sq = ctrl.theta_hat.norm_squared();

    let drift2 = (cell.r + ctrl.support_v) * sp.p2[k] + sp.q2_scale[k] * th_sq;
    let res2 = sp.p2[k + 1] - sp.p2[k] - drift2 * cell.dt - sp.q2_scale[k] * th_dw;
    let rel2 = res2.abs() / sp.p2[k];

    let pi_scale = sp.pi_scale[k];
    let pidir_b = ctrl.pi_dir.dot(&cell.b);
    let pidir_sum: f64 = ctrl.pi_dir.iter().sum();
    let pi_sigma_theta = pi_scale * (pidir_b - cell.r * pidir_sum);
    let pidir_sigma_theta_hat = pidir_b - cell.r * pidir_sum + ctrl.pi_dir.dot(&ctrl.v_hat);
    let q1_sigma_pi = sp.y[k] * pi_scale * pidir_sigma_theta_hat;
    let p1_k = -sp.y[k];
    let drift1 = -((cell.r + pi_sigma_theta) * p1_k + q1_sigma_pi);
    let res1 = -sp.y[k + 1] - p1_k - drift1 * cell.dt - sp.y[k] * th_dw;
    let rel1 = res1.abs() / sp.y[k];
    (rel2, rel1)
}

fn check_one_path(
    sp: &SolutionPath<'_>,
    k_set: &ConstraintSet,
    utility: &UtilityFunction,
    increments: &[f64],
    perturb_pi: Option<f64>,
    resimulate: bool,
) -> PathChecks {
    let cells = sp.cells.as_slice();
    let controls = sp.controls.as_slice();
    let n = cells[0].b.len();
    let m_steps = cells.len();
    let mut checks = PathChecks::default();

    let mut pi_buf = Vector::zeros(n);
    for point in 0..=m_steps {
        let cell_idx = point.min(m_steps - 1);
        let (cell, ctrl) = (&cells[cell_idx], &controls[cell_idx]);

        pi_buf.copy_from(&ctrl.pi_dir);
        pi_buf *= sp.pi_scale[point];
        if let Some(offset) = perturb_pi {
            pi_buf.add_scalar_mut(offset);
        }

        // (b) membership of the reconstructed portfolio
        checks.membership = checks.membership.max(k_set.membership_residual(&pi_buf));

        // (d) normal-cone condition: −X̂σ(p̂₁θ + q̂₁) equals −X̂Y v̂ by the
        // reverse-map identity checked below, and positive scalars do not
        // move a vector in or out of a normal cone, so test −v̂ against π̂;
        // the control carries its own δ_K(v̂) (exactly zero on cones)
        let v_dot_pi = ctrl.v_hat.dot(&pi_buf);
        let cone_resid = (ctrl.support_v + v_dot_pi).abs();
        checks.normal_cone = checks.normal_cone.max(cone_resid);
        if k_set.is_cone() {
            checks.orthogonality = checks.orthogonality.max(v_dot_pi.abs());
        }

        // (c) static condition p̂₂ δ_K(v̂) + q̂₂ᵀσ⁻¹v̂ = 0, scaled by p̂₂;
        // σ⁻¹v̂ = θ̂ − θ
        let q2_dot_siv = sp.q2_scale[point]
            * (ctrl.theta_hat.dot(&ctrl.theta_hat) - ctrl.theta_hat.dot(&cell.theta));
        let static_resid = (sp.p2[point] * ctrl.support_v + q2_dot_siv).abs() / sp.p2[point];
        checks.static_condition = checks.static_condition.max(static_resid);
    }

    // discrete one-step residuals of both adjoint BSDEs
    for k in 0..m_steps {
        let (cell, ctrl) = (&cells[k], &controls[k]);
        let (rel2, rel1) = one_step_residuals(sp, k, increments);
        checks.bsde_p2_rel = checks.bsde_p2_rel.max(rel2);
        checks.bsde_p2_rel_dt = checks.bsde_p2_rel_dt.max(rel2 / cell.dt);
        checks.bsde_p1_rel = checks.bsde_p1_rel.max(rel1);
        checks.bsde_p1_rel_dt = checks.bsde_p1_rel_dt.max(rel1 / cell.dt);

        // (h) reverse map v̂ = −σ(q̂₁/p̂₁ + θ): q̂₁/p̂₁ = −θ̂
        let v_rec = &cell.sigma * (&ctrl.theta_hat - &cell.theta);
        let rev = (&v_rec - &ctrl.v_hat).norm() / (1.0 + ctrl.v_hat.norm());
        checks.reverse_map = checks.reverse_map.max(rev);
    }

    // (g) terminal conditions p̂₁(T) = −U′(X̂(T)), p̂₂(T) = −Ũ′(Y(T))
    let x_term = sp.p2[m_steps];
    let y_term = sp.y[m_steps];
    checks.terminal_p1 = (-y_term + utility.marginal(x_term)).abs() / y_term;
    checks.terminal_p2 = (x_term - utility.inverse_marginal(y_term)).abs() / x_term;

    // wealth re-simulation on the same increments (exact for per-cell
    // deterministic portfolios)
    if resimulate {
        let pis = sp.pi_per_cell();
        let steps = paths::wealth_steps(cells, &pis);
        let mut out = vec![0.0; m_steps + 1];
        out[0] = sp.p2[0];
        if paths::run_exp_scheme(&steps, increments, &mut out).is_ok() {
            for k in 0..=m_steps {
                checks.resimulation = checks
                    .resimulation
                    .max((out[k] - sp.p2[k]).abs() / sp.p2[k]);
            }
        } else {
            checks.resimulation = f64::INFINITY;
        }
    }

    checks.u_terminal = utility.u(x_term);
    checks.conj_terminal = utility.conjugate(y_term);
    checks.p2y_terminal = x_term * y_term;
    checks
}

/// Runs every pathwise optimality check of the solved problem over the
/// bundle and assembles the [`VerificationReport`].
///
/// `perturb_pi` offsets the reconstructed portfolio in the condition
/// checks (membership, normal cone, orthogonality); negative tests use it
/// as a tamper switch, and the dynamics themselves stay untouched.
pub fn check_fbsde_residuals(
    m: &MarketModel,
    solution: &DualSolution,
    bundle: &PathBundle,
    perturb_pi: Option<f64>,
) -> Result<VerificationReport, VerifyError> {
    check_fbsde_residuals_with(m, solution, bundle, perturb_pi, TOL_MEMBERSHIP)
}

/// [`check_fbsde_residuals`] with an explicit membership tolerance for the
/// `portfolio_membership` row.
pub fn check_fbsde_residuals_with(
    m: &MarketModel,
    solution: &DualSolution,
    bundle: &PathBundle,
    perturb_pi: Option<f64>,
    membership_tol: f64,
) -> Result<VerificationReport, VerifyError> {
    let tables = m.tables()?;
    let k_set = solution.constraint();
    let utility = solution.utility();
    // the pathwise identity X̂ = wealth under π̂ is exact only when π̂ is
    // constant within cells, i.e. for the power and log solutions
    let resimulate = !matches!(utility, UtilityFunction::NonHara);

    let per_path: Vec<Result<PathChecks, VerifyError>> = map_paths(bundle.n_paths(), |path| {
        let sp = solution.evaluate_path(&tables, bundle, path)?;
        Ok(check_one_path(
            &sp,
            k_set,
            &utility,
            bundle.increments(path),
            perturb_pi,
            resimulate,
        ))
    });

    let mut checks = Vec::with_capacity(per_path.len());
    for c in per_path {
        checks.push(c?);
    }

    let fold = |f: fn(&PathChecks) -> f64| checks.iter().map(f).fold(0.0_f64, f64::max);

    let us: Vec<f64> = checks.iter().map(|c| c.u_terminal).collect();
    let conjs: Vec<f64> = checks.iter().map(|c| c.conj_terminal).collect();
    let gaps: Vec<f64> = checks
        .iter()
        .map(|c| c.conj_terminal - c.u_terminal)
        .collect();
    let p2ys: Vec<f64> = checks.iter().map(|c| c.p2y_terminal).collect();

    let x0 = m.x0();
    let y_hat = solution.y_hat;
    let primal = McEstimate::from_values(&us);
    let dual = McEstimate::from_values(&conjs).shifted(x0 * y_hat);
    let (gap_mean, gap_se) = mean_and_std_error(&gaps);
    let duality_gap = gap_mean + x0 * y_hat;

    // martingale of p̂₂Y: E[p̂₂(T)Y(T)] = x₀ŷ
    let (p2y_mean, p2y_se) = mean_and_std_error(&p2ys);
    let martingale_z = z_score(p2y_mean - x0 * y_hat, p2y_se, x0 * y_hat);
    let gap_z = z_score(duality_gap, gap_se, 1.0 + x0 * y_hat);

    // p̂₂(0) = x₀ is path-independent: take it from path 0
    let sp0 = solution.evaluate_path(&tables, bundle, 0)?;
    let initial_wealth = (sp0.p2[0] - x0).abs() / x0;

    let mut rows = vec![
        ConditionRow::new("initial_wealth_match", initial_wealth, TOL_INITIAL_WEALTH),
        ConditionRow::new(
            "portfolio_membership",
            fold(|c| c.membership),
            membership_tol,
        ),
        ConditionRow::new(
            "static_duality_product",
            fold(|c| c.static_condition),
            TOL_STATIC_CONDITION,
        ),
        ConditionRow::new("normal_cone", fold(|c| c.normal_cone), TOL_NORMAL_CONE),
    ];
    if k_set.is_cone() {
        rows.push(ConditionRow::new(
            "control_orthogonality",
            fold(|c| c.orthogonality),
            TOL_NORMAL_CONE,
        ));
    }
    rows.push(ConditionRow::new(
        "bsde_residual_p2_per_dt",
        fold(|c| c.bsde_p2_rel_dt),
        BSDE_RESIDUAL_CAP,
    ));
    rows.push(ConditionRow::new(
        "bsde_residual_p1_per_dt",
        fold(|c| c.bsde_p1_rel_dt),
        BSDE_RESIDUAL_CAP,
    ));
    rows.push(ConditionRow::new(
        "terminal_condition_p1",
        fold(|c| c.terminal_p1),
        TOL_TERMINAL,
    ));
    rows.push(ConditionRow::new(
        "terminal_condition_p2",
        fold(|c| c.terminal_p2),
        TOL_TERMINAL,
    ));
    rows.push(ConditionRow::new(
        "reverse_map_v",
        fold(|c| c.reverse_map),
        TOL_REVERSE_MAP,
    ));
    if resimulate {
        rows.push(ConditionRow::new(
            "wealth_resimulation",
            fold(|c| c.resimulation),
            TOL_RESIMULATION,
        ));
    }
    rows.push(ConditionRow::new(
        "adjoint_martingale_z",
        martingale_z,
        MC_CONFIDENCE,
    ));
    rows.push(ConditionRow::new(
        "strong_duality_gap_z",
        gap_z,
        MC_CONFIDENCE,
    ));

    Ok(VerificationReport {
        rows,
        primal,
        dual,
        duality_gap,
        gap_std_error: gap_se,
        bsde_p2_step_max: fold(|c| c.bsde_p2_rel),
        bsde_p1_step_max: fold(|c| c.bsde_p1_rel),
    })
}

/// Upper `level`-quantile (e.g. `0.999`) of the one-step adjoint BSDE
/// residuals over all paths and cells, for `(p̂₂, p̂₁)`.
///
/// Used by the grid-refinement check: the quantile has the same `O(Δt)`
/// one-step magnitude as the maximum but concentrates tightly, so its
/// halving factor under `Δt → Δt/2` is sharp.
pub fn bsde_residual_quantile(
    m: &MarketModel,
    solution: &DualSolution,
    bundle: &PathBundle,
    level: f64,
) -> Result<(f64, f64), VerifyError> {
    assert!((0.0..1.0).contains(&level));
    let tables = m.tables()?;
    let per_path: Vec<Result<Vec<(f64, f64)>, VerifyError>> = map_paths(bundle.n_paths(), |path| {
        let sp = solution.evaluate_path(&tables, bundle, path)?;
        let increments = bundle.increments(path);
        Ok((0..tables.n_steps())
            .map(|k| one_step_residuals(&sp, k, increments))
            .collect())
    });
    let mut p2s = Vec::new();
    let mut p1s = Vec::new();
    for r in per_path {
        for (a, b) in r? {
            p2s.push(a);
            p1s.push(b);
        }
    }
    p2s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    p1s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((p2s.len() as f64 * level) as usize).min(p2s.len() - 1);
    Ok((p2s[idx], p1s[idx]))
}

/// Worst deviations of the primal→dual→primal round trip over paths and
/// grid points.
#[derive(Debug, Clone, Copy)]
pub struct RoundTripReport {
    pub y_deviation: f64,
    pub v_deviation: f64,
    pub pi_deviation: f64,
}

impl RoundTripReport {
    pub fn max_deviation(&self) -> f64 {
        self.y_deviation
            .max(self.v_deviation)
            .max(self.pi_deviation)
    }
}

/// Rebuilds `(ŷ, v̂)` from the primal-side processes and the primal control
/// from the rebuilt dual side, and reports the worst round-trip deviation.
pub fn round_trip_check(
    m: &MarketModel,
    solution: &DualSolution,
    bundle: &PathBundle,
    n_paths: usize,
) -> Result<RoundTripReport, VerifyError> {
    let tables = m.tables()?;
    let reports: Vec<Result<RoundTripReport, VerifyError>> = map_paths(n_paths, |path| {
        let sp = solution.evaluate_path(&tables, bundle, path)?;
        let cells = sp.cells.as_slice();
        let controls = sp.controls.as_slice();

        // dual control from the primal adjoints: ŷ = −p̂₁(0),
        // v̂ = −σ(q̂₁/p̂₁ + θ) with p̂₁ = −Y, q̂₁ = Yθ̂
        let y_dev = (-sp.p1(0) - solution.y_hat).abs();
        let mut v_dev = 0.0_f64;
        let mut pi_dev = 0.0_f64;
        for k in 0..cells.len() {
            let (cell, ctrl) = (&cells[k], &controls[k]);
            let q1_over_p1 = -(&ctrl.theta_hat * (sp.q1_scale(k) / sp.y[k]));
            let v_rec = -(&cell.sigma * (&q1_over_p1 + &cell.theta));
            v_dev = v_dev.max((&v_rec - &ctrl.v_hat).norm());

            // primal control from the rebuilt dual side:
            // q̂₂ = σᵀπ̂X̂, p̂₂ = X̂ ⇒ π̂_rec = (σᵀ)⁻¹ q̂₂ / p̂₂
            let pi = sp.pi_vec(k);
            let q2_rec = cell.sigma.transpose() * &pi * sp.x(k);
            let pi_rec = &cell.sigma_inv_t * q2_rec / sp.p2[k];
            pi_dev = pi_dev.max((&pi_rec - &pi).norm());
        }
        Ok(RoundTripReport {
            y_deviation: y_dev,
            v_deviation: v_dev,
            pi_deviation: pi_dev,
        })
    });

    let mut worst = RoundTripReport {
        y_deviation: 0.0,
        v_deviation: 0.0,
        pi_deviation: 0.0,
    };
    for r in reports {
        let r = r?;
        worst.y_deviation = worst.y_deviation.max(r.y_deviation);
        worst.v_deviation = worst.v_deviation.max(r.v_deviation);
        worst.pi_deviation = worst.pi_deviation.max(r.pi_deviation);
    }
    Ok(worst)
}

/// Worst relative deviation between the closed-form wealth `X̂` and an
/// independent re-simulation of the wealth SDE under `π̂` on the same
/// increments.
pub fn resimulation_deviation(
    m: &MarketModel,
    solution: &DualSolution,
    bundle: &PathBundle,
) -> Result<f64, VerifyError> {
    let tables = m.tables()?;
    let devs: Vec<Result<f64, VerifyError>> = map_paths(bundle.n_paths(), |path| {
        let sp = solution.evaluate_path(&tables, bundle, path)?;
        let pis = sp.pi_per_cell();
        let steps = paths::wealth_steps(sp.cells.as_slice(), &pis);
        let mut out = vec![0.0; sp.n_points()];
        out[0] = sp.p2[0];
        if paths::run_exp_scheme(&steps, bundle.increments(path), &mut out).is_err() {
            return Ok(f64::INFINITY);
        }
        let mut worst = 0.0_f64;
        for k in 0..sp.n_points() {
            worst = worst.max((out[k] - sp.p2[k]).abs() / sp.p2[k]);
        }
        Ok(worst)
    });
    let mut worst = 0.0_f64;
    for d in devs {
        worst = worst.max(d?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketModel;
    use crate::paths::generate_paths;
    use crate::solvers::{solve_log, solve_nonhara, solve_power};
    use crate::{Matrix, Vector};
    use approx::assert_relative_eq;

    fn scalar_market(r: f64, b: f64, sigma: f64, steps: usize) -> MarketModel {
        MarketModel::constant(
            1.0,
            1.0,
            steps,
            r,
            Vector::from_element(1, b),
            Matrix::from_element(1, 1, sigma),
        )
        .unwrap()
    }

    #[test]
    fn primal_estimate_of_bank_account_is_deterministic() {
        let m = scalar_market(0.05, 0.10, 0.2, 16);
        let k = ConstraintSet::full_space(1);
        let u = UtilityFunction::Log;
        let bundle = generate_paths(&m, 64, 1).unwrap();
        let est = estimate_primal_value(&m, &k, &u, &vec![Vector::zeros(1); 16], &bundle).unwrap();
        assert_relative_eq!(est.mean, 0.05, epsilon = 1e-12);
        assert!(est.std_error <= 1e-12);
    }

    #[test]
    fn primal_estimator_rejects_inadmissible_strategies() {
        let m = scalar_market(0.05, 0.10, 0.2, 4);
        let k = ConstraintSet::orthant(1);
        let u = UtilityFunction::Log;
        let bundle = generate_paths(&m, 8, 1).unwrap();
        let short = vec![Vector::from_element(1, -0.5); 4];
        assert!(matches!(
            estimate_primal_value(&m, &k, &u, &short, &bundle),
            Err(VerifyError::InadmissibleStrategy { .. })
        ));
    }

    #[test]
    fn log_merton_primal_estimate_matches_closed_form() {
        let m = scalar_market(0.05, 0.10, 0.2, 64);
        let k = ConstraintSet::full_space(1);
        let u = UtilityFunction::Log;
        let bundle = generate_paths(&m, 40_000, 3).unwrap();
        let pi = vec![Vector::from_element(1, 1.25); 64];
        let est = estimate_primal_value(&m, &k, &u, &pi, &bundle).unwrap();
        let closed = 0.05 + 0.5 * 0.0625;
        assert!(
            (est.mean - closed).abs() <= MC_CONFIDENCE * est.std_error,
            "got {} vs {closed} (se {})",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn power_merton_primal_estimate_matches_lognormal_moment() {
        let m = scalar_market(0.05, 0.10, 0.2, 64);
        let k = ConstraintSet::full_space(1);
        let u = UtilityFunction::power(0.5).unwrap();
        let bundle = generate_paths(&m, 40_000, 5).unwrap();
        let pi = vec![Vector::from_element(1, 2.5); 64];
        let est = estimate_primal_value(&m, &k, &u, &pi, &bundle).unwrap();
        // (1/beta) x0^beta exp{beta (r + theta^2/(2(1-beta))) T}
        let closed = 2.0 * (0.5_f64 * (0.05 + 0.0625)).exp();
        assert!(
            (est.mean - closed).abs() <= MC_CONFIDENCE * est.std_error,
            "mc {} vs closed {closed} (se {})",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn dual_estimate_is_convex_in_y_around_optimum() {
        let m = scalar_market(0.05, 0.10, 0.2, 32);
        let k = ConstraintSet::full_space(1);
        let u = UtilityFunction::Log;
        let bundle = generate_paths(&m, 20_000, 5).unwrap();
        let v = vec![Vector::zeros(1); 32];
        let at = |y: f64| estimate_dual_value(&m, &k, &u, y, &v, &bundle).unwrap();
        let (d_opt, d_2y) = (at(1.0), at(2.0));
        // common random numbers make the comparison sharp
        let margin = d_2y.mean - d_opt.mean;
        let se = (d_2y.std_error.powi(2) + d_opt.std_error.powi(2)).sqrt();
        assert!(margin > MC_CONFIDENCE * se, "margin {margin}, se {se}");
    }

    #[test]
    fn dual_estimate_matches_power_closed_form_at_optimum() {
        let m = scalar_market(0.05, 0.10, 0.2, 32);
        let k = ConstraintSet::full_space(1);
        let u = UtilityFunction::power(0.5).unwrap();
        let sol = crate::solvers::solve_power(&m, &k, 0.5).unwrap();
        let bundle = generate_paths(&m, 20_000, 7).unwrap();
        let v_hat: Vec<Vector> = sol
            .controls()
            .unwrap()
            .iter()
            .map(|c| c.v_hat.clone())
            .collect();
        let est = estimate_dual_value(&m, &k, &u, sol.y_hat, &v_hat, &bundle).unwrap();
        let closed = sol.dual_value.unwrap();
        assert!(
            (est.mean - closed).abs() <= MC_CONFIDENCE * est.std_error,
            "mc {} vs closed {closed} (se {})",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn weak_duality_holds_for_random_pairs() {
        let m = scalar_market(0.05, 0.10, 0.2, 16);
        let k = ConstraintSet::orthant(1);
        let u = UtilityFunction::power(0.5).unwrap();
        let bundle = generate_paths(&m, 4_000, 9).unwrap();
        for draw in 0..10 {
            let pi = sample_admissible_strategy(&k, 16, 42, draw);
            let v = sample_barrier_control(&k, 16, 43, draw);
            let y = 0.5 + 0.2 * draw as f64;
            let report = weak_duality_check(&m, &k, &u, &pi, y, &v, &bundle).unwrap();
            assert!(
                report.pass,
                "weak duality violated at draw {draw}: {report:?}"
            );
        }
    }

    #[test]
    fn fbsde_checks_pass_for_all_three_solvers() {
        let m = scalar_market(0.05, 0.10, 0.2, 32);
        let m_bind = scalar_market(0.05, 0.03, 0.2, 32);
        let full = ConstraintSet::full_space(1);
        let orthant = ConstraintSet::orthant(1);
        let bundle = generate_paths(&m, 500, 11).unwrap();

        let cases = vec![
            (m.clone(), solve_power(&m, &full, 0.5).unwrap()),
            (m_bind.clone(), solve_power(&m_bind, &orthant, 0.5).unwrap()),
            (m.clone(), solve_log(&m, &full).unwrap()),
            (m_bind.clone(), solve_log(&m_bind, &orthant).unwrap()),
            (m.clone(), solve_nonhara(&m, &full).unwrap()),
        ];
        for (market, sol) in &cases {
            let report = check_fbsde_residuals(market, sol, &bundle, None).unwrap();
            assert!(
                report.passed(),
                "failed for {:?}:\n{}",
                sol.utility(),
                report.summary()
            );
        }
    }

    #[test]
    fn perturbed_portfolio_fails_normal_cone_condition() {
        let m = scalar_market(0.05, 0.03, 0.2, 16);
        let k = ConstraintSet::orthant(1);
        let sol = solve_power(&m, &k, 0.5).unwrap();
        let bundle = generate_paths(&m, 100, 13).unwrap();
        let report = check_fbsde_residuals(&m, &sol, &bundle, Some(0.5)).unwrap();
        assert!(!report.passed());
        let rows: Vec<_> = report
            .rows
            .iter()
            .filter(|r| !r.pass)
            .map(|r| r.name)
            .collect();
        assert!(rows.contains(&"normal_cone"), "failing rows: {rows:?}");
        assert!(rows.contains(&"control_orthogonality"));
    }

    #[test]
    fn adjoint_oracle_certifies_nonhara_p2_at_midpoint() {
        let m = scalar_market(0.05, 0.10, 0.2, 32);
        let k = ConstraintSet::full_space(1);
        let sol = solve_nonhara(&m, &k).unwrap();
        let bundle = generate_paths(&m, 200, 17).unwrap();
        let report = adjoint_oracle_p2(&m, &sol, &bundle, 16, 200, 400).unwrap();
        assert!(report.pass(), "aggregate z = {}", report.aggregate_z);

        // degenerate t = T: the conditional expectation is the integrand
        let report_t = adjoint_oracle_p2(&m, &sol, &bundle, 32, 50, 10).unwrap();
        assert_eq!(report_t.aggregate_z, 0.0);
        assert!(report_t.max_rel_deviation <= 1e-12);
    }

    #[test]
    fn adjoint_oracle_enforces_branch_budget() {
        let m = scalar_market(0.05, 0.10, 0.2, 8);
        let sol = crate::solvers::solve_log(&m, &ConstraintSet::full_space(1)).unwrap();
        let bundle = generate_paths(&m, 10, 1).unwrap();
        assert!(matches!(
            adjoint_oracle_p2(&m, &sol, &bundle, 4, 10, 2_000_000),
            Err(VerifyError::BranchBudgetExceeded { .. })
        ));
    }

    #[test]
    fn adjoint_oracle_rejects_wrong_closed_form() {
        // falsification power: a power solution solved on a different rate
        // puts p2 off the true conditional expectation
        let m = scalar_market(0.05, 0.10, 0.2, 32);
        let m_wrong = scalar_market(0.08, 0.13, 0.2, 32);
        let k = ConstraintSet::full_space(1);
        let sol_wrong = solve_power(&m_wrong, &k, 0.5).unwrap();
        let bundle = generate_paths(&m, 100, 19).unwrap();
        let report = adjoint_oracle_p2(&m, &sol_wrong, &bundle, 16, 100, 400).unwrap();
        assert!(
            !report.pass(),
            "oracle failed to reject: z = {}",
            report.aggregate_z
        );
    }

    #[test]
    fn round_trip_maps_reproduce_controls() {
        let m = scalar_market(0.05, 0.03, 0.2, 16);
        let k = ConstraintSet::orthant(1);
        let sol = solve_power(&m, &k, 0.5).unwrap();
        let bundle = generate_paths(&m, 64, 23).unwrap();
        let rt = round_trip_check(&m, &sol, &bundle, 64).unwrap();
        assert!(rt.max_deviation() <= 1e-9, "{rt:?}");
    }

    #[test]
    fn two_asset_orthant_solutions_verify() {
        let sigma = Matrix::from_row_slice(2, 2, &[0.2, 0.05, 0.0, 0.3]);
        let b = Vector::from_row_slice(&[0.03, 0.09]);
        let m = MarketModel::constant(1.0, 1.0, 16, 0.05, b, sigma).unwrap();
        let k = ConstraintSet::orthant(2);
        let bundle = generate_paths(&m, 300, 41).unwrap();
        for sol in [
            solve_power(&m, &k, 0.5).unwrap(),
            solve_log(&m, &k).unwrap(),
        ] {
            let report = check_fbsde_residuals(&m, &sol, &bundle, None).unwrap();
            assert!(
                report.passed(),
                "{:?}:\n{}",
                sol.utility(),
                report.summary()
            );
            let ctrl = &sol.controls().unwrap()[0];
            assert!(ctrl.v_hat.min() >= -1e-12, "v_hat = {:?}", ctrl.v_hat);
        }
    }

    #[test]
    fn adjoint_oracle_agrees_for_power_and_log() {
        let m = scalar_market(0.05, 0.10, 0.2, 16);
        let k = ConstraintSet::full_space(1);
        let bundle = generate_paths(&m, 100, 43).unwrap();
        for sol in [
            solve_power(&m, &k, 0.5).unwrap(),
            solve_log(&m, &k).unwrap(),
        ] {
            for t_index in [0, 8, 16] {
                let report = adjoint_oracle_p2(&m, &sol, &bundle, t_index, 50, 300).unwrap();
                assert!(
                    report.pass(),
                    "{:?} t={t_index}: z = {}",
                    sol.utility(),
                    report.aggregate_z
                );
            }
        }
    }

    #[test]
    fn piecewise_constant_coefficients_verify_for_power_and_log() {
        // two coefficient cells with different rates, drifts and vols
        let m = MarketModel::from_cells(
            1.0,
            1.0,
            16,
            &[0.05, 0.02],
            &[Vector::from_element(1, 0.10), Vector::from_element(1, 0.01)],
            &[Matrix::from_element(1, 1, 0.2), Matrix::from_element(1, 1, 0.3)],
        )
        .unwrap();
        let k = ConstraintSet::orthant(1);
        let bundle = generate_paths(&m, 400, 53).unwrap();
        for sol in [
            crate::solvers::solve_power(&m, &k, 0.5).unwrap(),
            crate::solvers::solve_log(&m, &k).unwrap(),
        ] {
            // the second cell has negative excess return: its control binds
            let controls = sol.controls().unwrap();
            assert!(controls[0].v_hat[0].abs() <= 1e-12);
            assert!(controls[15].v_hat[0] > 0.0);
            assert_relative_eq!(
                sol.dual_value.unwrap(),
                sol.primal_value.unwrap(),
                max_relative = 1e-12
            );
            let report = check_fbsde_residuals(&m, &sol, &bundle, None).unwrap();
            assert!(report.passed(), "{:?}:\n{}", sol.utility(), report.summary());
        }
    }

    #[test]
    fn collapsed_random_bands_reproduce_the_deterministic_solution() {
        use crate::market::CoefficientRandomness;
        let det = scalar_market(0.05, 0.10, 0.2, 8);
        let rnd = scalar_market(0.05, 0.10, 0.2, 8)
            .with_randomness(CoefficientRandomness::UniformBands {
                r_band: (0.05, 0.05),
                b_band: (0.10, 0.10),
            })
            .unwrap();
        let k = ConstraintSet::orthant(1);
        let sol_det = crate::solvers::solve_log(&det, &k).unwrap();
        let sol_rnd = crate::solvers::solve_log(&rnd, &k).unwrap();
        let bundle = generate_paths(&det, 50, 59).unwrap();
        let (t_det, t_rnd) = (det.tables().unwrap(), rnd.tables().unwrap());
        for path in 0..50 {
            let a = sol_det.evaluate_path(&t_det, &bundle, path).unwrap();
            let b = sol_rnd.evaluate_path(&t_rnd, &bundle, path).unwrap();
            for k_idx in 0..=8 {
                assert_relative_eq!(a.y[k_idx], b.y[k_idx], max_relative = 1e-12);
                assert_relative_eq!(a.p2[k_idx], b.p2[k_idx], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn log_solution_on_a_polyhedron_verifies() {
        // bounded polyhedron around the origin: exercises the LP support
        // values, the active-set projection and the proximal minimizer
        let k = ConstraintSet::polyhedron(
            Matrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            Vector::from_row_slice(&[1.2, 0.4, 0.4]),
        )
        .unwrap();
        let sigma = Matrix::from_row_slice(2, 2, &[0.25, 0.05, 0.0, 0.2]);
        let b = Vector::from_row_slice(&[0.12, 0.08]);
        let m = MarketModel::constant(1.0, 1.0, 16, 0.03, b, sigma).unwrap();
        let sol = crate::solvers::solve_log(&m, &k).unwrap();
        let bundle = generate_paths(&m, 300, 47).unwrap();
        let report = check_fbsde_residuals(&m, &sol, &bundle, None).unwrap();
        assert!(report.passed(), "{}", report.summary());
        // the unconstrained portfolio violates the budget row, so the
        // constraint must bind with a nonzero control
        let ctrl = &sol.controls().unwrap()[0];
        assert!(ctrl.v_hat.norm() > 1e-6, "expected a binding constraint");
        assert!(ctrl.support_v > 0.0);
    }

    #[test]
    fn random_coefficient_log_solution_verifies() {
        use crate::market::CoefficientRandomness;
        let m = scalar_market(0.05, 0.10, 0.2, 16)
            .with_randomness(CoefficientRandomness::UniformBands {
                r_band: (0.01, 0.08),
                b_band: (0.0, 0.2),
            })
            .unwrap();
        let k = ConstraintSet::orthant(1);
        let sol = crate::solvers::solve_log(&m, &k).unwrap();
        let bundle = generate_paths(&m, 400, 31).unwrap();
        let report = check_fbsde_residuals(&m, &sol, &bundle, None).unwrap();
        assert!(report.passed(), "{}", report.summary());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn random_coefficient_report_is_thread_count_invariant() {
        use crate::market::CoefficientRandomness;
        let m = scalar_market(0.05, 0.10, 0.2, 16)
            .with_randomness(CoefficientRandomness::UniformBands {
                r_band: (0.01, 0.08),
                b_band: (0.0, 0.2),
            })
            .unwrap();
        let k = ConstraintSet::orthant(1);
        let sol = crate::solvers::solve_log(&m, &k).unwrap();
        let bundle = generate_paths(&m, 300, 33).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let multi = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap();
        let a = single
            .install(|| check_fbsde_residuals(&m, &sol, &bundle, None))
            .unwrap();
        let b = multi
            .install(|| check_fbsde_residuals(&m, &sol, &bundle, None))
            .unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn csv_report_shape_is_stable() {
        let m = scalar_market(0.05, 0.10, 0.2, 8);
        let k = ConstraintSet::full_space(1);
        let sol = solve_log(&m, &k).unwrap();
        let bundle = generate_paths(&m, 50, 29).unwrap();
        let report = check_fbsde_residuals(&m, &sol, &bundle, None).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "name,max_residual,tolerance,pass");
        assert!(csv.lines().count() > 10);
        assert!(csv.ends_with('\n'));
    }
}
