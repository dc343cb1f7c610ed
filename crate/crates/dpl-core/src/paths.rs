//! Brownian path bundles and exact-in-cell simulation of the wealth and
//! dual state SDEs.
//!
//! Increments are drawn from per-path streams keyed by `(seed, path)`, so
//! a bundle is a pure function of `(grid, n_assets, n_paths, seed)` no
//! matter how the work is scheduled. Both state processes use the
//! exponential scheme, which solves the constant-coefficient SDE exactly
//! within each grid cell and keeps every simulated state strictly positive:
//!
//! * wealth: `X_{k+1} = X_k · exp{(r + πᵀσθ − ½‖σᵀπ‖²)Δt + πᵀσ·dW}`;
//! * dual:   `Y_{k+1} = Y_k · exp{−(r + δ_K(v) + ½‖θ+σ⁻¹v‖²)Δt − (θ+σ⁻¹v)ᵀdW}`.

use crate::constraints::ConstraintSet;
use crate::market::{CellCoefficients, MarketModel, MarketTables};
use crate::rng::path_stream;
use crate::Vector;
use rand_distr::StandardNormal;
use std::io::{self, Read, Write};
use thiserror::Error;

/// Default cap on the materialized increment storage.
pub const DEFAULT_MEMORY_CAP_BYTES: usize = 4 << 30;

/// Guard band for the exponential schemes: a path aborts when its log-state
/// leaves `[-LOG_GUARD, LOG_GUARD]`.
pub const LOG_GUARD: f64 = 700.0;

const MAGIC: &[u8; 4] = b"DPL1";

#[derive(Debug, Error)]
pub enum PathError {
    #[error("requested bundle of {requested} bytes exceeds the memory cap of {cap} bytes")]
    MemoryCap { requested: u128, cap: usize },
    #[error("need at least one path")]
    NoPaths,
    #[error("market error: {0}")]
    Market(#[from] crate::market::MarketError),
    #[error("strategy must supply one portfolio vector per grid cell")]
    StrategyLength,
    #[error("strategy has non-finite entries on cell {cell}")]
    NonFiniteStrategy { cell: usize },
    #[error("log-state of path {path} left the guard band; aborting")]
    Overflow { path: usize },
    #[error("v not in effective domain: support of v is infinite on cell {cell}")]
    InfiniteSupport { cell: usize },
    #[error("grid with an odd number of cells cannot be pair-aggregated")]
    OddGrid,
    #[error("bundle I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("not a DPL1 bundle")]
    BadMagic,
}

/// A time grid plus Brownian increments shared between the primal and dual
/// simulations. Layout is `[path][step][asset]`, units are `√years`.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: Vec<f64>,
    n_assets: usize,
    n_paths: usize,
    seed: u64,
    data: Vec<f64>,
}

impl PathBundle {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// All increments of one path, `n_steps × n_assets` values.
    pub fn increments(&self, path: usize) -> &[f64] {
        let stride = self.n_steps() * self.n_assets;
        &self.data[path * stride..(path + 1) * stride]
    }

    /// The `N` increments of one step of one path.
    pub fn dw(&self, path: usize, step: usize) -> &[f64] {
        let stride = self.n_steps() * self.n_assets;
        let base = path * stride + step * self.n_assets;
        &self.data[base..base + self.n_assets]
    }

    /// Coarsens the bundle by summing adjacent increment pairs, halving the
    /// number of cells. Used for grid-refinement comparisons: the exact
    /// scheme on the coarse grid sees the same Brownian path.
    pub fn aggregate_pairs(&self) -> Result<PathBundle, PathError> {
        let m = self.n_steps();
        if m % 2 != 0 {
            return Err(PathError::OddGrid);
        }
        let grid: Vec<f64> = self.grid.iter().copied().step_by(2).collect();
        let n = self.n_assets;
        let mut data = Vec::with_capacity(self.n_paths * m / 2 * n);
        for path in 0..self.n_paths {
            let inc = self.increments(path);
            for k in 0..m / 2 {
                for a in 0..n {
                    data.push(inc[2 * k * n + a] + inc[(2 * k + 1) * n + a]);
                }
            }
        }
        Ok(PathBundle {
            grid,
            n_assets: n,
            n_paths: self.n_paths,
            seed: self.seed,
            data,
        })
    }

    /// Writes the bundle in the `DPL1` exchange format: magic `DPL1`, then
    /// `n_assets`, `n_steps`, `n_paths` as little-endian `u32`, then the
    /// increments as little-endian `f64` in `[path][step][asset]` order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), PathError> {
        w.write_all(MAGIC)?;
        for dim in [self.n_assets, self.n_steps(), self.n_paths] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Payload of a `DPL1` dump; the grid itself is not part of the format.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleDump {
    pub n_assets: usize,
    pub n_steps: usize,
    pub n_paths: usize,
    pub data: Vec<f64>,
}

/// Reads a `DPL1` dump written by [`PathBundle::write_to`].
pub fn read_bundle_dump<R: Read>(r: &mut R) -> Result<BundleDump, PathError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PathError::BadMagic);
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    let [n_assets, n_steps, n_paths] = dims;
    let mut data = vec![0.0_f64; n_assets * n_steps * n_paths];
    let mut buf = [0u8; 8];
    for x in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *x = f64::from_le_bytes(buf);
    }
    Ok(BundleDump {
        n_assets,
        n_steps,
        n_paths,
        data,
    })
}

/// Draws a bundle of Brownian increments for the model's grid.
///
/// Per-path streams are keyed by `(seed, path)`, so regeneration with the
/// same arguments is bit-identical regardless of thread count.
pub fn generate_paths(m: &MarketModel, n_paths: usize, seed: u64) -> Result<PathBundle, PathError> {
    generate_paths_with_cap(m, n_paths, seed, DEFAULT_MEMORY_CAP_BYTES)
}

/// Same as [`generate_paths`] with an explicit memory cap in bytes.
pub fn generate_paths_with_cap(
    m: &MarketModel,
    n_paths: usize,
    seed: u64,
    cap_bytes: usize,
) -> Result<PathBundle, PathError> {
    if n_paths == 0 {
        return Err(PathError::NoPaths);
    }
    let steps = m.n_steps();
    let n = m.n_assets();
    let requested = n_paths as u128 * steps as u128 * n as u128 * 8;
    if requested > cap_bytes as u128 {
        return Err(PathError::MemoryCap {
            requested,
            cap: cap_bytes,
        });
    }

    let sqrt_dt: Vec<f64> = (0..steps).map(|k| m.dt(k).sqrt()).collect();
    let stride = steps * n;
    let mut data = vec![0.0_f64; n_paths * stride];

    let fill = |path: usize, chunk: &mut [f64]| {
        let mut rng = path_stream(seed, path);
        for k in 0..steps {
            for a in 0..n {
                let z: f64 = rand::RngExt::sample(&mut rng, StandardNormal);
                chunk[k * n + a] = z * sqrt_dt[k];
            }
        }
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(stride)
            .enumerate()
            .for_each(|(path, chunk)| fill(path, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(stride)
            .enumerate()
            .for_each(|(path, chunk)| fill(path, chunk));
    }

    Ok(PathBundle {
        grid: m.grid().to_vec(),
        n_assets: n,
        n_paths,
        seed,
        data,
    })
}

/// Simulated positive state values on the grid, `[path][grid point]`.
#[derive(Debug, Clone)]
pub struct StatePath {
    values: Vec<f64>,
    n_paths: usize,
    n_points: usize,
}

impl StatePath {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn value(&self, path: usize, point: usize) -> f64 {
        self.values[path * self.n_points + point]
    }

    pub fn path_values(&self, path: usize) -> &[f64] {
        &self.values[path * self.n_points..(path + 1) * self.n_points]
    }

    pub fn terminal(&self, path: usize) -> f64 {
        self.value(path, self.n_points - 1)
    }

    pub fn terminals(&self) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.terminal(p)).collect()
    }
}

/// Per-cell exponential update, precomputed so the inner loop is a dot
/// product with the increments.
#[derive(Debug, Clone)]
pub struct ExpStep {
    pub drift_dt: f64,
    pub vol: Vec<f64>,
}

/// Builds the wealth-scheme steps for a fixed portfolio path.
pub fn wealth_steps(cells: &[CellCoefficients], pis: &[Vector]) -> Vec<ExpStep> {
    cells
        .iter()
        .zip(pis)
        .map(|(cell, pi)| {
            let vol = cell.sigma.transpose() * pi;
            let drift = cell.r + pi.dot(&(&cell.sigma * &cell.theta)) - 0.5 * vol.norm_squared();
            ExpStep {
                drift_dt: drift * cell.dt,
                vol: vol.iter().copied().collect(),
            }
        })
        .collect()
}

/// Builds the dual-scheme steps for a control `(v, δ_K(v))` per cell.
pub fn dual_steps(cells: &[CellCoefficients], controls: &[(Vector, f64)]) -> Vec<ExpStep> {
    cells
        .iter()
        .zip(controls)
        .map(|(cell, (v, support))| {
            let theta_v = &cell.theta + &cell.sigma_inv * v;
            let drift = -(cell.r + support + 0.5 * theta_v.norm_squared());
            ExpStep {
                drift_dt: drift * cell.dt,
                vol: theta_v.iter().map(|x| -x).collect(),
            }
        })
        .collect()
}

/// Runs one path of an exponential scheme, filling `out` with the state at
/// every grid point. `out[0]` must hold the initial state.
pub fn run_exp_scheme(steps: &[ExpStep], increments: &[f64], out: &mut [f64]) -> Result<(), ()> {
    let n = steps[0].vol.len();
    let mut log_state = out[0].ln();
    for (k, step) in steps.iter().enumerate() {
        let dw = &increments[k * n..(k + 1) * n];
        let mut shock = 0.0;
        for a in 0..n {
            shock += step.vol[a] * dw[a];
        }
        log_state += step.drift_dt + shock;
        if log_state.abs() > LOG_GUARD {
            return Err(());
        }
        out[k + 1] = log_state.exp();
    }
    Ok(())
}

fn collect_state_paths<F>(bundle: &PathBundle, x0: f64, per_path: F) -> Result<StatePath, PathError>
where
    F: Fn(usize) -> Vec<ExpStep> + Sync + Send,
{
    let n_points = bundle.n_steps() + 1;
    let mut values = vec![0.0_f64; bundle.n_paths() * n_points];

    let fill = |path: usize, out: &mut [f64]| -> Result<(), PathError> {
        let steps = per_path(path);
        out[0] = x0;
        run_exp_scheme(&steps, bundle.increments(path), out)
            .map_err(|_| PathError::Overflow { path })
    };

    let results: Vec<Result<(), PathError>>;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        results = values
            .par_chunks_mut(n_points)
            .enumerate()
            .map(|(path, out)| fill(path, out))
            .collect();
    }
    #[cfg(not(feature = "parallel"))]
    {
        results = values
            .chunks_mut(n_points)
            .enumerate()
            .map(|(path, out)| fill(path, out))
            .collect();
    }
    for r in results {
        r?;
    }
    Ok(StatePath {
        values,
        n_paths: bundle.n_paths(),
        n_points,
    })
}

/// Simulates the wealth process under a per-cell portfolio strategy.
///
/// The strategy is a fraction-of-wealth vector per grid cell; in
/// random-coefficient mode each path sees its own realized coefficients.
pub fn simulate_wealth(
    m: &MarketModel,
    pi: &[Vector],
    bundle: &PathBundle,
) -> Result<StatePath, PathError> {
    if pi.len() != m.n_steps() {
        return Err(PathError::StrategyLength);
    }
    for (cell, p) in pi.iter().enumerate() {
        if p.iter().any(|x| !x.is_finite()) {
            return Err(PathError::NonFiniteStrategy { cell });
        }
    }
    let tables = m.tables()?;
    simulate_wealth_with(&tables, bundle, |_, cells| wealth_steps(cells, pi))
}

/// Wealth simulation with a per-path step builder; used when the strategy
/// itself depends on the path (random coefficients, solution controls).
pub fn simulate_wealth_with<F>(
    tables: &MarketTables,
    bundle: &PathBundle,
    steps_for_path: F,
) -> Result<StatePath, PathError>
where
    F: Fn(usize, &[CellCoefficients]) -> Vec<ExpStep> + Sync + Send,
{
    let x0 = tables.x0;
    let seed = bundle.seed();
    collect_state_paths(bundle, x0, |path| {
        let cells = tables.path_cells(seed, path);
        steps_for_path(path, cells.as_slice())
    })
}

/// Simulates the dual state process for the control `(y, v)`.
///
/// Errors when `δ_K(v)` is infinite on any cell: such a `v` lies outside
/// the effective domain of the dual problem.
pub fn simulate_dual(
    m: &MarketModel,
    y: f64,
    v: &[Vector],
    k_set: &ConstraintSet,
    bundle: &PathBundle,
) -> Result<StatePath, PathError> {
    assert!(y > 0.0, "dual state must start positive");
    if v.len() != m.n_steps() {
        return Err(PathError::StrategyLength);
    }
    let tables = m.tables()?;
    let mut controls = Vec::with_capacity(v.len());
    for (cell, vk) in v.iter().enumerate() {
        match k_set.support(vk).finite() {
            Some(s) => controls.push((vk.clone(), s)),
            None => return Err(PathError::InfiniteSupport { cell }),
        }
    }
    let seed = bundle.seed();
    collect_state_paths(bundle, y, |path| {
        let cells = tables.path_cells(seed, path);
        dual_steps(cells.as_slice(), &controls)
    })
}
