//! Small dense linear-programming core.
//!
//! Problems are stated as `min c'x` subject to equality rows `A x = b` and
//! per-variable bounds `l <= x <= u` (either side may be infinite). Some
//! variables may additionally be restricted to `{0, 1}`; those are handled
//! by [`solve_milp`] with best-first branch-and-bound over LP relaxations.

mod milp;
mod simplex;

use std::collections::BTreeSet;

use thiserror::Error;

pub use milp::{solve_milp, solve_milp_with, BranchStats, MilpOptions, MAX_BINARIES};
pub use simplex::{solve_lp, solve_lp_with, SimplexOptions};

/// Pivot elements smaller than this are treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-10;
/// Primal feasibility tolerance.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;
/// Binaries within this distance of 0 or 1 are integral.
pub const INTEGRALITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("variable {var}: lower bound {lower} exceeds upper bound {upper}")]
    InvalidBounds { var: usize, lower: f64, upper: f64 },
    #[error("binary variable {var} has bounds [{lower}, {upper}] outside [0, 1]")]
    BinaryBounds { var: usize, lower: f64, upper: f64 },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("{count} binary variables exceed the supported maximum of {max}")]
    TooManyBinaries { count: usize, max: usize },
    #[error("branch-and-bound node limit of {limit} exhausted before proving optimality")]
    NodeLimit { limit: usize },
    #[error("simplex iteration limit of {limit} reached")]
    IterationLimit { limit: usize },
}

/// One sparse equality row `sum coef * x[var] = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub binaries: BTreeSet<usize>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Adds a continuous variable and returns its index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    /// Adds a `{0, 1}` variable and returns its index.
    pub fn add_binary(&mut self, cost: f64) -> usize {
        let idx = self.add_var(cost, 0.0, 1.0);
        self.binaries.insert(idx);
        idx
    }

    pub fn add_row(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.rows.push(Row { terms, rhs });
        self.rows.len() - 1
    }

    /// Structural checks done before any solve.
    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::DimensionMismatch(format!(
                "{n} objective coefficients, {} lower and {} upper bounds",
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite("objective"));
        }
        for (var, (&lower, &upper)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lower.is_nan()
                || upper.is_nan()
                || lower > upper
                || lower == f64::INFINITY
                || upper == f64::NEG_INFINITY
            {
                return Err(LpError::InvalidBounds { var, lower, upper });
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::NonFinite("row right-hand side"));
            }
            for &(var, coef) in &row.terms {
                if var >= n {
                    return Err(LpError::DimensionMismatch(format!(
                        "row {r} references variable {var} but only {n} exist"
                    )));
                }
                if !coef.is_finite() {
                    return Err(LpError::NonFinite("row coefficient"));
                }
            }
        }
        for &var in &self.binaries {
            if var >= n {
                return Err(LpError::DimensionMismatch(format!(
                    "binary index {var} but only {n} variables exist"
                )));
            }
            let (lower, upper) = (self.lower[var], self.upper[var]);
            if lower < 0.0 || upper > 1.0 {
                return Err(LpError::BinaryBounds { var, lower, upper });
            }
        }
        Ok(())
    }

    /// `c'x`.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest absolute equality-row violation at `x`.
    pub fn max_row_violation(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|row| {
                let lhs: f64 = row.terms.iter().map(|&(j, a)| a * x[j]).sum();
                (lhs - row.rhs).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest absolute bound violation at `x`.
    pub fn max_bound_violation(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub status: Status,
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Simplex iterations (summed over all nodes for a MILP).
    pub iterations: usize,
    /// Phase-two objective after every iteration of the last LP solved.
    pub objective_trace: Vec<f64>,
    /// Present for [`solve_milp`] results.
    pub branching: Option<BranchStats>,
}

impl SolveOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}
