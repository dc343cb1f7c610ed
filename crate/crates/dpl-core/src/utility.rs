//! Utility functions, their convex conjugates and inverse marginals.
//!
//! Three concrete utilities are implemented in closed form:
//!
//! * power: `U(x) = x^β/β` with `β ∈ (0,1)`;
//! * log: `U(x) = ln x`;
//! * non-HARA: `U(x) = H(x)⁻³/3 + H(x)⁻¹ + x·H(x)` with
//!   `H(x) = (2 / (−1 + √(1+4x)))^{1/2}`, whose marginal utility is `H`
//!   itself and whose inverse marginal is `I(y) = y⁻⁴ + y⁻²`.
//!
//! The conjugate is `Ũ(y) = sup_{x>0} [U(x) − xy]`, and `I = (U′)⁻¹ = −Ũ′`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum UtilityError {
    #[error("power exponent beta must lie in (0,1)")]
    BadExponent,
    #[error("utility evaluation needs a positive argument")]
    NonPositiveArgument,
}

/// Which evaluator of a [`UtilityFunction`] to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluation {
    /// `U(x)`
    Value,
    /// `U′(x)`
    Marginal,
    /// `Ũ(y)`
    Conjugate,
    /// `Ũ′(y)`
    ConjugateMarginal,
    /// `I(y) = (U′)⁻¹(y)`
    InverseMarginal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityFunction {
    Power { beta: f64 },
    Log,
    NonHara,
}

impl UtilityFunction {
    pub fn power(beta: f64) -> Result<Self, UtilityError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(UtilityError::BadExponent);
        }
        Ok(UtilityFunction::Power { beta })
    }

    pub fn name(&self) -> &'static str {
        match self {
            UtilityFunction::Power { .. } => "power",
            UtilityFunction::Log => "log",
            UtilityFunction::NonHara => "non_hara",
        }
    }

    /// `U(x)`, `x > 0`.
    pub fn u(&self, x: f64) -> f64 {
        debug_assert!(x > 0.0);
        match self {
            UtilityFunction::Power { beta } => x.powf(*beta) / beta,
            UtilityFunction::Log => x.ln(),
            UtilityFunction::NonHara => {
                let h = nonhara_h(x);
                h.powi(-3) / 3.0 + h.recip() + x * h
            }
        }
    }

    /// `U′(x)`, `x > 0`.
    pub fn marginal(&self, x: f64) -> f64 {
        debug_assert!(x > 0.0);
        match self {
            UtilityFunction::Power { beta } => x.powf(beta - 1.0),
            UtilityFunction::Log => x.recip(),
            UtilityFunction::NonHara => nonhara_h(x),
        }
    }

    /// `Ũ(y) = sup_{x>0} [U(x) − xy]`, `y > 0`.
    pub fn conjugate(&self, y: f64) -> f64 {
        debug_assert!(y > 0.0);
        match self {
            UtilityFunction::Power { beta } => (1.0 - beta) / beta * y.powf(beta / (beta - 1.0)),
            UtilityFunction::Log => -(1.0 + y.ln()),
            UtilityFunction::NonHara => y.powi(-3) / 3.0 + y.recip(),
        }
    }

    /// `Ũ′(y)`, `y > 0`.
    pub fn conjugate_marginal(&self, y: f64) -> f64 {
        debug_assert!(y > 0.0);
        match self {
            UtilityFunction::Power { beta } => -y.powf(1.0 / (beta - 1.0)),
            UtilityFunction::Log => -y.recip(),
            UtilityFunction::NonHara => -(y.powi(-4) + y.powi(-2)),
        }
    }

    /// Inverse marginal `I(y) = (U′)⁻¹(y) = −Ũ′(y)`, `y > 0`.
    pub fn inverse_marginal(&self, y: f64) -> f64 {
        -self.conjugate_marginal(y)
    }

    /// Checked evaluation of any of the five maps.
    pub fn evaluate(&self, which: Evaluation, arg: f64) -> Result<f64, UtilityError> {
        if !(arg > 0.0) || !arg.is_finite() {
            return Err(UtilityError::NonPositiveArgument);
        }
        Ok(match which {
            Evaluation::Value => self.u(arg),
            Evaluation::Marginal => self.marginal(arg),
            Evaluation::Conjugate => self.conjugate(arg),
            Evaluation::ConjugateMarginal => self.conjugate_marginal(arg),
            Evaluation::InverseMarginal => self.inverse_marginal(arg),
        })
    }
}

/// `H(x) = (2 / (−1 + √(1+4x)))^{1/2}` of the non-HARA utility, `x > 0`.
pub fn nonhara_h(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    (2.0 / ((1.0 + 4.0 * x).sqrt() - 1.0)).sqrt()
}

/// Residual of the inverse identity `H(x)⁻⁴ + H(x)⁻² = x`.
pub fn nonhara_h_identity(x: f64) -> f64 {
    let h = nonhara_h(x);
    (h.powi(-4) + h.powi(-2) - x).abs()
}

/// Outcome of the standing-assumption check on a utility function.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// Is `x ↦ x·U′(x)` non-decreasing along the grid?
    pub marginal_times_x_nondecreasing: bool,
    /// Witness `(β₀, γ)` with `β₀·U′(x) ≥ U′(γx)` on the grid, if found.
    pub witness: Option<(f64, f64)>,
    /// Largest relative risk aversion `−x·U″(x)/U′(x)` seen on the grid.
    pub max_relative_risk_aversion: f64,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.marginal_times_x_nondecreasing && self.witness.is_some()
    }
}

/// Grid certificate for the standing assumption: (i) `x·U′(x)` is
/// non-decreasing; (ii) some `β₀ ∈ (0,1)`, `γ ∈ (1,∞)` satisfy
/// `β₀·U′(x) ≥ U′(γx)` on the grid, searched over a small lattice.
///
/// Falsification power only: a pass is evidence, not a proof.
pub fn check_assumption(u: &UtilityFunction, grid: &[f64]) -> AssumptionReport {
    assert!(
        grid.windows(2).all(|w| w[0] < w[1]) && grid[0] > 0.0,
        "grid must be sorted positive"
    );

    let slack = 1e-12;
    let mut nondecreasing = true;
    for w in grid.windows(2) {
        let lhs = w[0] * u.marginal(w[0]);
        let rhs = w[1] * u.marginal(w[1]);
        if rhs < lhs * (1.0 - 1e-12) - slack {
            nondecreasing = false;
        }
    }

    let beta_lattice = [0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95];
    let gamma_lattice = [1.25, 1.5, 2.0, 3.0, 5.0];
    let mut witness = None;
    'search: for &beta0 in &beta_lattice {
        for &gamma in &gamma_lattice {
            if grid
                .iter()
                .all(|&x| beta0 * u.marginal(x) >= u.marginal(gamma * x) - slack)
            {
                witness = Some((beta0, gamma));
                break 'search;
            }
        }
    }

    let mut max_rra = 0.0_f64;
    for &x in grid {
        let h = 1e-5 * x;
        let upp = (u.marginal(x + h) - u.marginal(x - h)) / (2.0 * h);
        max_rra = max_rra.max(-x * upp / u.marginal(x));
    }

    AssumptionReport {
        marginal_times_x_nondecreasing: nondecreasing,
        witness,
        max_relative_risk_aversion: max_rra,
    }
}

/// Log-spaced grid on `[lo, hi]`, endpoints included.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && points >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}
