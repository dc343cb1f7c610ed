//! Market coefficients, standing assumptions and derived quantities.
//!
//! A [`MarketModel`] holds the short rate, appreciation rates and the
//! volatility matrix as piecewise-constant values on the cells of a time
//! grid; a constant-coefficient market is the single-value special case.
//! [`validate_market`] certifies the strong non-degeneracy of `σσᵀ` and
//! reports boundedness constants, and [`market_price_of_risk`] computes
//! `θ(t) = σ(t)⁻¹ (b(t) − r(t)·1)` cell by cell.

use crate::rng::coefficient_stream;
use crate::{Matrix, Vector};
use rand::RngExt;
use thiserror::Error;

/// Condition-number ceiling beyond which a volatility matrix is treated as
/// numerically singular.
pub const MAX_SIGMA_CONDITION: f64 = 1e12;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("volatility matrix on cell {cell} is not {n}x{n}")]
    NonSquareSigma { cell: usize, n: usize },
    #[error("non-finite coefficient on cell {cell}")]
    NonFiniteCoefficient { cell: usize },
    #[error("time grid must be strictly increasing from 0 to the horizon")]
    BadGrid,
    #[error("initial wealth must be positive and finite")]
    BadInitialWealth,
    #[error("horizon must be positive and finite")]
    BadHorizon,
    #[error("need one coefficient entry per grid cell")]
    LengthMismatch,
    #[error("singular volatility on cell {cell}")]
    SingularVolatility { cell: usize },
    #[error("random coefficient band is empty or not finite")]
    BadRandomBand,
}

/// How the coefficients of a cell are produced for a given path.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientRandomness {
    /// Every path sees the per-cell values stored in the model.
    Deterministic,
    /// `r` and every entry of `b` are redrawn per path and per cell,
    /// uniformly within the given closed bands, from a stream keyed by
    /// `(seed, path)`. Draws are consumed in cell order, independently of
    /// the Brownian increments, so the coefficients of cell `k` are known
    /// at its left endpoint. The volatility stays at the stored values.
    UniformBands {
        r_band: (f64, f64),
        b_band: (f64, f64),
    },
}

/// Piecewise-constant market coefficients on a time grid.
#[derive(Debug, Clone)]
pub struct MarketModel {
    n_assets: usize,
    x0: f64,
    grid: Vec<f64>,
    r: Vec<f64>,
    b: Vec<Vector>,
    sigma: Vec<Matrix>,
    randomness: CoefficientRandomness,
}

impl MarketModel {
    /// Builds a model from an explicit grid and per-cell coefficient values.
    ///
    /// Rejects non-square or non-finite volatility matrices, grids that are
    /// not strictly increasing from `0`, and non-positive initial wealth.
    pub fn new(
        x0: f64,
        grid: Vec<f64>,
        r: Vec<f64>,
        b: Vec<Vector>,
        sigma: Vec<Matrix>,
    ) -> Result<Self, MarketError> {
        if grid.len() < 2 || grid[0] != 0.0 {
            return Err(MarketError::BadGrid);
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !t.is_finite()) {
            return Err(MarketError::BadGrid);
        }
        let horizon = *grid.last().unwrap();
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(MarketError::BadHorizon);
        }
        if !(x0 > 0.0) || !x0.is_finite() {
            return Err(MarketError::BadInitialWealth);
        }
        let cells = grid.len() - 1;
        if r.len() != cells || b.len() != cells || sigma.len() != cells {
            return Err(MarketError::LengthMismatch);
        }
        let n = sigma[0].nrows();
        for (k, s) in sigma.iter().enumerate() {
            if s.nrows() != n || s.ncols() != n {
                return Err(MarketError::NonSquareSigma { cell: k, n });
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(MarketError::NonFiniteCoefficient { cell: k });
            }
        }
        for (k, (rk, bk)) in r.iter().zip(&b).enumerate() {
            if !rk.is_finite() || bk.len() != n || bk.iter().any(|x| !x.is_finite()) {
                return Err(MarketError::NonFiniteCoefficient { cell: k });
            }
        }
        Ok(Self {
            n_assets: n,
            x0,
            grid,
            r,
            b,
            sigma,
            randomness: CoefficientRandomness::Deterministic,
        })
    }

    /// Constant-coefficient market on a uniform grid with `steps` cells.
    pub fn constant(
        x0: f64,
        horizon: f64,
        steps: usize,
        r: f64,
        b: Vector,
        sigma: Matrix,
    ) -> Result<Self, MarketError> {
        Self::from_cells(x0, horizon, steps, &[r], &[b], &[sigma])
    }

    /// Uniform simulation grid with `steps` cells whose coefficients come
    /// from `cells.len()` equal-duration coefficient cells; each step uses
    /// the coefficient cell containing its left endpoint.
    pub fn from_cells(
        x0: f64,
        horizon: f64,
        steps: usize,
        r_cells: &[f64],
        b_cells: &[Vector],
        sigma_cells: &[Matrix],
    ) -> Result<Self, MarketError> {
        if steps == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(MarketError::BadHorizon);
        }
        let n_cells = r_cells.len();
        if n_cells == 0 || b_cells.len() != n_cells || sigma_cells.len() != n_cells {
            return Err(MarketError::LengthMismatch);
        }
        let grid = uniform_grid(horizon, steps);
        let mut r = Vec::with_capacity(steps);
        let mut b = Vec::with_capacity(steps);
        let mut sigma = Vec::with_capacity(steps);
        for k in 0..steps {
            let cell = ((n_cells as f64 * grid[k] / horizon) as usize).min(n_cells - 1);
            r.push(r_cells[cell]);
            b.push(b_cells[cell].clone());
            sigma.push(sigma_cells[cell].clone());
        }
        Self::new(x0, grid, r, b, sigma)
    }

    /// Switches the model to per-path random coefficients.
    pub fn with_randomness(
        mut self,
        randomness: CoefficientRandomness,
    ) -> Result<Self, MarketError> {
        if let CoefficientRandomness::UniformBands { r_band, b_band } = &randomness {
            for (lo, hi) in [r_band, b_band] {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(MarketError::BadRandomBand);
                }
            }
        }
        self.randomness = randomness;
        Ok(self)
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Grid points `0 = t_0 < … < t_M = T`.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Number of grid cells `M`.
    pub fn n_steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn dt(&self, cell: usize) -> f64 {
        self.grid[cell + 1] - self.grid[cell]
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn b(&self) -> &[Vector] {
        &self.b
    }

    pub fn sigma(&self) -> &[Matrix] {
        &self.sigma
    }

    pub fn randomness(&self) -> &CoefficientRandomness {
        &self.randomness
    }

    pub fn is_random(&self) -> bool {
        self.randomness != CoefficientRandomness::Deterministic
    }

    /// True when every cell carries the same coefficient values.
    pub fn has_constant_coefficients(&self) -> bool {
        !self.is_random()
            && self.r.iter().all(|r| *r == self.r[0])
            && self.b.iter().all(|b| *b == self.b[0])
            && self.sigma.iter().all(|s| *s == self.sigma[0])
    }

    /// Precomputes per-cell inverses and the market price of risk.
    pub fn tables(&self) -> Result<MarketTables, MarketError> {
        let mut cells = Vec::with_capacity(self.n_steps());
        for k in 0..self.n_steps() {
            cells.push(CellCoefficients::build(self, k)?);
        }
        Ok(MarketTables {
            n_assets: self.n_assets,
            x0: self.x0,
            grid: self.grid.clone(),
            cells,
            randomness: self.randomness.clone(),
        })
    }
}

/// Uniform grid on `[0, horizon]` with `steps` cells; the last point is the
/// horizon exactly.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=steps)
        .map(|k| horizon * k as f64 / steps as f64)
        .collect();
    grid[0] = 0.0;
    grid[steps] = horizon;
    grid
}

/// Ready-to-use coefficients of one grid cell.
#[derive(Debug, Clone)]
pub struct CellCoefficients {
    pub dt: f64,
    pub r: f64,
    pub b: Vector,
    pub sigma: Matrix,
    pub sigma_inv: Matrix,
    /// `(σᵀ)⁻¹`
    pub sigma_inv_t: Matrix,
    /// `θ = σ⁻¹ (b − r·1)`
    pub theta: Vector,
}

impl CellCoefficients {
    fn build(m: &MarketModel, cell: usize) -> Result<Self, MarketError> {
        let sigma = m.sigma[cell].clone();
        let sigma_inv = invert_sigma(&sigma).ok_or(MarketError::SingularVolatility { cell })?;
        let ones = Vector::from_element(m.n_assets, 1.0);
        let theta = &sigma_inv * (&m.b[cell] - m.r[cell] * &ones);
        Ok(Self {
            dt: m.dt(cell),
            r: m.r[cell],
            b: m.b[cell].clone(),
            sigma_inv_t: sigma_inv.transpose(),
            sigma,
            sigma_inv,
            theta,
        })
    }

    fn redrawn(&self, r: f64, b: Vector, n: usize) -> Self {
        let ones = Vector::from_element(n, 1.0);
        let theta = &self.sigma_inv * (&b - r * &ones);
        Self {
            dt: self.dt,
            r,
            b,
            sigma: self.sigma.clone(),
            sigma_inv: self.sigma_inv.clone(),
            sigma_inv_t: self.sigma_inv_t.clone(),
            theta,
        }
    }
}

fn invert_sigma(sigma: &Matrix) -> Option<Matrix> {
    let inv = sigma.clone().try_inverse()?;
    let cond = sigma.norm() * inv.norm();
    if !cond.is_finite() || cond > MAX_SIGMA_CONDITION {
        return None;
    }
    Some(inv)
}

/// Per-cell coefficient tables shared by simulation, solvers and checks.
#[derive(Debug, Clone)]
pub struct MarketTables {
    pub n_assets: usize,
    pub x0: f64,
    pub grid: Vec<f64>,
    pub cells: Vec<CellCoefficients>,
    randomness: CoefficientRandomness,
}

/// Cell coefficients seen by one path: shared in deterministic mode, owned
/// after per-path redraws in random mode.
pub enum PathCells<'a> {
    Shared(&'a [CellCoefficients]),
    Owned(Vec<CellCoefficients>),
}

impl PathCells<'_> {
    pub fn as_slice(&self) -> &[CellCoefficients] {
        match self {
            PathCells::Shared(cells) => cells,
            PathCells::Owned(cells) => cells,
        }
    }
}

impl MarketTables {
    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn n_steps(&self) -> usize {
        self.cells.len()
    }

    pub fn is_random(&self) -> bool {
        self.randomness != CoefficientRandomness::Deterministic
    }

    /// Coefficients realized by `path` under the model's randomness mode.
    pub fn path_cells(&self, seed: u64, path: usize) -> PathCells<'_> {
        match &self.randomness {
            CoefficientRandomness::Deterministic => PathCells::Shared(&self.cells),
            CoefficientRandomness::UniformBands { r_band, b_band } => {
                let mut rng = coefficient_stream(seed, path);
                let n = self.n_assets;
                let cells = self
                    .cells
                    .iter()
                    .map(|cell| {
                        let r = draw_in(&mut rng, *r_band);
                        let b = Vector::from_fn(n, |_, _| draw_in(&mut rng, *b_band));
                        cell.redrawn(r, b, n)
                    })
                    .collect();
                PathCells::Owned(cells)
            }
        }
    }
}

fn draw_in(rng: &mut impl RngExt, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// One validated invariant with its outcome.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Outcome of [`validate_market`]: the non-degeneracy constant, boundedness
/// constants of the realized coefficient values, and pass/fail per invariant.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Smallest eigenvalue of `σσᵀ` over all cells.
    pub k_min: f64,
    pub sup_abs_r: f64,
    pub sup_abs_b: f64,
    pub sup_abs_sigma: f64,
    pub checks: Vec<CheckRow>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&CheckRow> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Certifies the standing assumptions on a constructed model: `σσᵀ` is
/// uniformly non-degenerate (and numerically invertible) on every cell,
/// coefficients are finite, the initial state is admissible. Boundedness
/// beyond finiteness is reported, not enforced.
pub fn validate_market(m: &MarketModel) -> ValidationReport {
    let mut k_min = f64::INFINITY;
    let mut singular_cell = None;
    for (cell, s) in m.sigma().iter().enumerate() {
        let gram = s * s.transpose();
        let eig = nalgebra::linalg::SymmetricEigen::new(gram);
        let lambda_min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        k_min = k_min.min(lambda_min);
        if singular_cell.is_none() && (lambda_min <= 0.0 || invert_sigma(s).is_none()) {
            singular_cell = Some(cell);
        }
    }
    let sup_abs_r = m.r().iter().fold(0.0_f64, |a, r| a.max(r.abs()));
    let sup_abs_b = m.b().iter().fold(0.0_f64, |a, b| a.max(b.amax()));
    let sup_abs_sigma = m.sigma().iter().fold(0.0_f64, |a, s| a.max(s.amax()));

    let checks = vec![
        CheckRow {
            name: "non_degeneracy".into(),
            pass: singular_cell.is_none() && k_min > 0.0,
            detail: match singular_cell {
                Some(cell) => format!("singular volatility on cell {cell}"),
                None => format!("k = {k_min:e}"),
            },
        },
        CheckRow {
            name: "finite_coefficients".into(),
            pass: true,
            detail: format!(
                "sup|r| = {sup_abs_r:e}, sup|b| = {sup_abs_b:e}, sup|sigma| = {sup_abs_sigma:e}"
            ),
        },
        CheckRow {
            name: "initial_state".into(),
            pass: m.x0() > 0.0 && m.horizon() > 0.0,
            detail: format!("x0 = {}, T = {}", m.x0(), m.horizon()),
        },
    ];
    ValidationReport {
        k_min,
        sup_abs_r,
        sup_abs_b,
        sup_abs_sigma,
        checks,
    }
}

/// The market price of risk `θ(t)` per cell.
#[derive(Debug, Clone)]
pub struct RiskPricePath {
    pub theta: Vec<Vector>,
}

impl RiskPricePath {
    /// Largest relative error of the reconstruction `σθ + r·1 = b` over all
    /// cells.
    pub fn reconstruction_error(&self, m: &MarketModel) -> f64 {
        let ones = Vector::from_element(m.n_assets(), 1.0);
        let mut worst = 0.0_f64;
        for (cell, theta) in self.theta.iter().enumerate() {
            let b_rec = &m.sigma()[cell] * theta + m.r()[cell] * &ones;
            let scale = m.b()[cell].norm().max(1.0);
            worst = worst.max((b_rec - &m.b()[cell]).norm() / scale);
        }
        worst
    }
}

/// Computes `θ(t) = σ(t)⁻¹ (b(t) − r(t)·1)` on every cell.
pub fn market_price_of_risk(m: &MarketModel) -> Result<RiskPricePath, MarketError> {
    let tables = m.tables()?;
    Ok(RiskPricePath {
        theta: tables.cells.into_iter().map(|c| c.theta).collect(),
    })
}
