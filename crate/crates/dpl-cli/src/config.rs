//! Experiment configuration: a flat `key = value` text format with dotted
//! section prefixes (`market.*`, `constraint.*`, `utility.*`, `run.*`).
//!
//! One experiment per file; `#` starts a comment; unknown and duplicate
//! keys are rejected. Lists separate entries by whitespace, coefficient
//! cells by `;`, and matrix rows by `,`.

use dpl_core::constraints::ConstraintSet;
use dpl_core::market::{CoefficientRandomness, MarketModel};
use dpl_core::utility::UtilityFunction;
use dpl_core::{Matrix, Vector};
use std::collections::BTreeSet;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct MarketSection {
    pub n_assets: usize,
    pub horizon: f64,
    pub x0: f64,
    /// Per-cell short rate; one entry per coefficient cell.
    pub r: Vec<f64>,
    /// Per-cell appreciation rates, `n_assets` values per cell.
    pub b: Vec<Vec<f64>>,
    /// Per-cell volatility, `n_assets` rows per cell.
    pub sigma: Vec<Vec<Vec<f64>>>,
    pub random: bool,
    pub r_band: Option<(f64, f64)>,
    pub b_band: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSection {
    FullSpace,
    Orthant,
    Box { lower: Vec<f64>, upper: Vec<f64> },
    PolyhedralCone { g: Vec<Vec<f64>> },
    Polyhedron { a: Vec<Vec<f64>>, c: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtilityKind {
    Power,
    Log,
    NonHara,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySection {
    pub kind: UtilityKind,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Candidate {
    Zero,
    Merton,
    Solver,
}

impl Candidate {
    pub fn label(self) -> &'static str {
        match self {
            Candidate::Zero => "zero",
            Candidate::Merton => "merton",
            Candidate::Solver => "solver",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub n_paths: usize,
    pub seed: u64,
    pub steps: usize,
    pub threads: Option<usize>,
    pub memory_cap_mb: Option<usize>,
    pub perturb_pi: Option<f64>,
    pub candidates: Vec<Candidate>,
    pub membership_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub market: MarketSection,
    pub constraint: ConstraintSection,
    pub utility: UtilitySection,
    pub run: RunSection,
}

#[derive(Debug, thiserror::Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

struct RawConfig {
    entries: Vec<(String, String)>,
    seen: BTreeSet<String>,
    used: BTreeSet<String>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {}: expected 'key = value'", lineno + 1));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !seen.insert(key.clone()) {
                return err(format!("duplicate key '{key}'"));
            }
            entries.push((key, value));
        }
        Ok(RawConfig {
            entries,
            seen,
            used: BTreeSet::new(),
        })
    }

    fn get(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
    }

    fn require(&mut self, key: &str) -> Result<String, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError(format!("missing key '{key}'")))
    }

    fn reject_unknown(&self) -> Result<(), ConfigError> {
        for key in &self.seen {
            if !self.used.contains(key) {
                return err(format!("unknown key '{key}'"));
            }
        }
        Ok(())
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse()
        .map_err(|_| ConfigError(format!("key '{key}': '{v}' is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse()
        .map_err(|_| ConfigError(format!("key '{key}': '{v}' is not an integer")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split_whitespace().map(|t| parse_f64(key, t)).collect()
}

fn parse_cells(key: &str, v: &str) -> Result<Vec<Vec<f64>>, ConfigError> {
    v.split(';').map(|cell| parse_list(key, cell)).collect()
}

fn parse_matrix_cells(key: &str, v: &str) -> Result<Vec<Vec<Vec<f64>>>, ConfigError> {
    v.split(';')
        .map(|cell| cell.split(',').map(|row| parse_list(key, row)).collect())
        .collect()
}

fn parse_band(key: &str, v: &str) -> Result<(f64, f64), ConfigError> {
    let vals = parse_list(key, v)?;
    if vals.len() != 2 {
        return err(format!("key '{key}': expected two numbers 'lo hi'"));
    }
    Ok((vals[0], vals[1]))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::parse(text)?;

        let n_assets = parse_usize("market.n_assets", &raw.require("market.n_assets")?)?;
        let horizon = parse_f64("market.horizon", &raw.require("market.horizon")?)?;
        let x0 = parse_f64("market.x0", &raw.require("market.x0")?)?;
        let r = parse_list("market.r", &raw.require("market.r")?)?;
        let b = parse_cells("market.b", &raw.require("market.b")?)?;
        let sigma = parse_matrix_cells("market.sigma", &raw.require("market.sigma")?)?;
        let random = match raw.get("market.random") {
            Some(v) => v
                .parse::<bool>()
                .map_err(|_| ConfigError("market.random must be true or false".into()))?,
            None => false,
        };
        let r_band = raw
            .get("market.r_band")
            .map(|v| parse_band("market.r_band", &v))
            .transpose()?;
        let b_band = raw
            .get("market.b_band")
            .map(|v| parse_band("market.b_band", &v))
            .transpose()?;

        let cells = r.len();
        if b.len() != cells || sigma.len() != cells {
            return err("market.r, market.b and market.sigma must have the same number of cells");
        }
        for cell in &b {
            if cell.len() != n_assets {
                return err("market.b must have n_assets entries per cell");
            }
        }
        for cell in &sigma {
            if cell.len() != n_assets || cell.iter().any(|row| row.len() != n_assets) {
                return err("market.sigma must be n_assets x n_assets per cell");
            }
        }
        if random && (r_band.is_none() || b_band.is_none()) {
            return err("market.random = true needs market.r_band and market.b_band");
        }
        let market = MarketSection {
            n_assets,
            horizon,
            x0,
            r,
            b,
            sigma,
            random,
            r_band,
            b_band,
        };

        let kind = raw.require("constraint.kind")?;
        let constraint = match kind.as_str() {
            "full_space" => ConstraintSection::FullSpace,
            "orthant" => ConstraintSection::Orthant,
            "box" => ConstraintSection::Box {
                lower: parse_list("constraint.lower", &raw.require("constraint.lower")?)?,
                upper: parse_list("constraint.upper", &raw.require("constraint.upper")?)?,
            },
            "polyhedral_cone" => ConstraintSection::PolyhedralCone {
                g: parse_cells("constraint.g", &raw.require("constraint.g")?)?,
            },
            "polyhedron" => ConstraintSection::Polyhedron {
                a: parse_cells("constraint.a", &raw.require("constraint.a")?)?,
                c: parse_list("constraint.c", &raw.require("constraint.c")?)?,
            },
            other => return err(format!("unknown constraint kind '{other}'")),
        };

        let ukind = match raw.require("utility.kind")?.as_str() {
            "power" => UtilityKind::Power,
            "log" => UtilityKind::Log,
            "non_hara" => UtilityKind::NonHara,
            other => return err(format!("unknown utility kind '{other}'")),
        };
        let beta = raw
            .get("utility.beta")
            .map(|v| parse_f64("utility.beta", &v))
            .transpose()?;
        if ukind == UtilityKind::Power && beta.is_none() {
            return err("power utility needs utility.beta");
        }
        let utility = UtilitySection { kind: ukind, beta };

        let n_paths = match raw.get("run.n_paths") {
            Some(v) => parse_usize("run.n_paths", &v)?,
            None => 100_000,
        };
        let seed = match raw.get("run.seed") {
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| ConfigError("run.seed must be a nonnegative integer".into()))?,
            None => 0,
        };
        let steps = match raw.get("run.steps") {
            Some(v) => parse_usize("run.steps", &v)?,
            None => (252.0 * horizon).ceil().max(1.0) as usize,
        };
        let threads = raw
            .get("run.threads")
            .map(|v| parse_usize("run.threads", &v))
            .transpose()?;
        let memory_cap_mb = raw
            .get("run.memory_cap_mb")
            .map(|v| parse_usize("run.memory_cap_mb", &v))
            .transpose()?;
        let perturb_pi = raw
            .get("run.perturb_pi")
            .map(|v| parse_f64("run.perturb_pi", &v))
            .transpose()?;
        let membership_tol = match raw.get("run.membership_tol") {
            Some(v) => parse_f64("run.membership_tol", &v)?,
            None => dpl_core::constraints::MEMBERSHIP_TOL,
        };
        let candidates = match raw.get("run.candidates") {
            Some(v) => v
                .split_whitespace()
                .map(|name| match name {
                    "zero" => Ok(Candidate::Zero),
                    "merton" => Ok(Candidate::Merton),
                    "solver" => Ok(Candidate::Solver),
                    other => err(format!("unknown candidate '{other}'")),
                })
                .collect::<Result<_, _>>()?,
            None => Vec::new(),
        };
        let run = RunSection {
            n_paths,
            seed,
            steps,
            threads,
            memory_cap_mb,
            perturb_pi,
            candidates,
            membership_tol,
        };

        raw.reject_unknown()?;
        Ok(ExperimentConfig {
            market,
            constraint,
            utility,
            run,
        })
    }

    /// Canonical serialization; parsing it back yields an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let m = &self.market;
        let _ = writeln!(s, "market.n_assets = {}", m.n_assets);
        let _ = writeln!(s, "market.horizon = {}", m.horizon);
        let _ = writeln!(s, "market.x0 = {}", m.x0);
        let _ = writeln!(s, "market.r = {}", join(&m.r, " "));
        let _ = writeln!(
            s,
            "market.b = {}",
            m.b.iter()
                .map(|c| join(c, " "))
                .collect::<Vec<_>>()
                .join("; ")
        );
        let _ = writeln!(
            s,
            "market.sigma = {}",
            m.sigma
                .iter()
                .map(|cell| cell
                    .iter()
                    .map(|row| join(row, " "))
                    .collect::<Vec<_>>()
                    .join(", "))
                .collect::<Vec<_>>()
                .join("; ")
        );
        if m.random {
            let _ = writeln!(s, "market.random = true");
        }
        if let Some((lo, hi)) = m.r_band {
            let _ = writeln!(s, "market.r_band = {lo} {hi}");
        }
        if let Some((lo, hi)) = m.b_band {
            let _ = writeln!(s, "market.b_band = {lo} {hi}");
        }
        match &self.constraint {
            ConstraintSection::FullSpace => {
                let _ = writeln!(s, "constraint.kind = full_space");
            }
            ConstraintSection::Orthant => {
                let _ = writeln!(s, "constraint.kind = orthant");
            }
            ConstraintSection::Box { lower, upper } => {
                let _ = writeln!(s, "constraint.kind = box");
                let _ = writeln!(s, "constraint.lower = {}", join(lower, " "));
                let _ = writeln!(s, "constraint.upper = {}", join(upper, " "));
            }
            ConstraintSection::PolyhedralCone { g } => {
                let _ = writeln!(s, "constraint.kind = polyhedral_cone");
                let _ = writeln!(
                    s,
                    "constraint.g = {}",
                    g.iter()
                        .map(|row| join(row, " "))
                        .collect::<Vec<_>>()
                        .join("; ")
                );
            }
            ConstraintSection::Polyhedron { a, c } => {
                let _ = writeln!(s, "constraint.kind = polyhedron");
                let _ = writeln!(
                    s,
                    "constraint.a = {}",
                    a.iter()
                        .map(|row| join(row, " "))
                        .collect::<Vec<_>>()
                        .join("; ")
                );
                let _ = writeln!(s, "constraint.c = {}", join(c, " "));
            }
        }
        let _ = writeln!(
            s,
            "utility.kind = {}",
            match self.utility.kind {
                UtilityKind::Power => "power",
                UtilityKind::Log => "log",
                UtilityKind::NonHara => "non_hara",
            }
        );
        if let Some(beta) = self.utility.beta {
            let _ = writeln!(s, "utility.beta = {beta}");
        }
        let r = &self.run;
        let _ = writeln!(s, "run.n_paths = {}", r.n_paths);
        let _ = writeln!(s, "run.seed = {}", r.seed);
        let _ = writeln!(s, "run.steps = {}", r.steps);
        if let Some(threads) = r.threads {
            let _ = writeln!(s, "run.threads = {threads}");
        }
        if let Some(cap) = r.memory_cap_mb {
            let _ = writeln!(s, "run.memory_cap_mb = {cap}");
        }
        if let Some(p) = r.perturb_pi {
            let _ = writeln!(s, "run.perturb_pi = {p}");
        }
        if !r.candidates.is_empty() {
            let _ = writeln!(
                s,
                "run.candidates = {}",
                r.candidates
                    .iter()
                    .map(|c| c.label())
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
        let _ = writeln!(s, "run.membership_tol = {}", r.membership_tol);
        s
    }

    /// Builds the market model, honoring an optional seed override.
    pub fn build_market(&self) -> Result<MarketModel, ConfigError> {
        let m = &self.market;
        let b_cells: Vec<Vector> =
            m.b.iter()
                .map(|cell| Vector::from_row_slice(cell))
                .collect();
        let sigma_cells: Vec<Matrix> = m
            .sigma
            .iter()
            .map(|cell| {
                let flat: Vec<f64> = cell.iter().flatten().copied().collect();
                Matrix::from_row_slice(m.n_assets, m.n_assets, &flat)
            })
            .collect();
        let mut model = MarketModel::from_cells(
            m.x0,
            m.horizon,
            self.run.steps,
            &m.r,
            &b_cells,
            &sigma_cells,
        )
        .map_err(|e| ConfigError(e.to_string()))?;
        if m.random {
            model = model
                .with_randomness(CoefficientRandomness::UniformBands {
                    r_band: m.r_band.unwrap(),
                    b_band: m.b_band.unwrap(),
                })
                .map_err(|e| ConfigError(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn build_constraint(&self) -> Result<ConstraintSet, ConfigError> {
        let n = self.market.n_assets;
        let set = match &self.constraint {
            ConstraintSection::FullSpace => ConstraintSet::full_space(n),
            ConstraintSection::Orthant => ConstraintSet::orthant(n),
            ConstraintSection::Box { lower, upper } => {
                ConstraintSet::box_set(Vector::from_row_slice(lower), Vector::from_row_slice(upper))
                    .map_err(|e| ConfigError(e.to_string()))?
            }
            ConstraintSection::PolyhedralCone { g } => {
                ConstraintSet::polyhedral_cone(rows_to_matrix(g, n)?)
                    .map_err(|e| ConfigError(e.to_string()))?
            }
            ConstraintSection::Polyhedron { a, c } => {
                ConstraintSet::polyhedron(rows_to_matrix(a, n)?, Vector::from_row_slice(c))
                    .map_err(|e| ConfigError(e.to_string()))?
            }
        };
        if set.dim() != n {
            return err("constraint dimension does not match market.n_assets");
        }
        Ok(set)
    }

    pub fn build_utility(&self) -> Result<UtilityFunction, ConfigError> {
        match self.utility.kind {
            UtilityKind::Power => UtilityFunction::power(self.utility.beta.unwrap())
                .map_err(|e| ConfigError(e.to_string())),
            UtilityKind::Log => Ok(UtilityFunction::Log),
            UtilityKind::NonHara => Ok(UtilityFunction::NonHara),
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], n: usize) -> Result<Matrix, ConfigError> {
    if rows.iter().any(|row| row.len() != n) {
        return err("constraint rows must have n_assets entries");
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), n, &flat))
}

fn join(xs: &[f64], sep: &str) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}
