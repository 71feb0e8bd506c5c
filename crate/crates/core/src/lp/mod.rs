//! Linear programming.
//!
//! [`solve_lp`] is a dense bounded-variable revised simplex. Every row gets a
//! logical (slack) variable so that constraints become `A x + s = b`, with the
//! slack bounds encoding the row sense:
//!
//! | sense | slack bounds |
//! |-------|--------------|
//! | `<=`  | `[0, +inf)`  |
//! | `>=`  | `(-inf, 0]`  |
//! | `=`   | `[0, 0]`     |
//!
//! Dual multipliers follow the minimization convention: `>=` rows carry
//! nonnegative duals, `<=` rows nonpositive duals, `=` rows are free. The dual
//! objective is `b^T y + sum_j d_j * x_j` over nonbasic structural columns at
//! their bounds, where `d` are the reduced costs in [`LpSolution`].

mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use simplex::{Basis, VarStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    Malformed(String),
    #[error("simplex failed to converge after {iterations} iterations")]
    NumericalFailure { iterations: usize },
}

/// Tolerances shared by the LP and MIP solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Maximum allowed constraint / bound violation of a reported solution.
    pub feasibility: f64,
    /// Relative tolerance on primal/dual objective agreement.
    pub duality: f64,
    /// Smallest admissible pivot element.
    pub pivot: f64,
    /// Reduced-cost threshold for pricing.
    pub optimality: f64,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    /// Iteration cap is `iteration_factor * (rows + cols)`.
    pub iteration_factor: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-9,
            duality: 1e-7,
            pivot: 1e-10,
            optimality: 1e-9,
            bland_after: 1000,
            iteration_factor: 50,
        }
    }
}

/// `min c^T x` subject to dense rows and variable bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub senses: Vec<Sense>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// New program over `objective.len()` variables in `[0, +inf)`.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            rows: Vec::new(),
            senses: Vec::new(),
            rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) -> &mut Self {
        self.rows.push(coeffs);
        self.senses.push(sense);
        self.rhs.push(rhs);
        self
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        let m = self.rows.len();
        if self.senses.len() != m || self.rhs.len() != m {
            return Err(LpError::Malformed(format!(
                "{m} rows but {} senses and {} rhs entries",
                self.senses.len(),
                self.rhs.len()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Malformed("bound vectors do not match objective length".into()));
        }
        if let Some(i) = self.rows.iter().position(|r| r.len() != n) {
            return Err(LpError::Malformed(format!("row {i} has wrong length")));
        }
        let finite = |v: &f64| v.is_finite();
        if !self.objective.iter().all(finite)
            || !self.rhs.iter().all(finite)
            || !self.rows.iter().flatten().all(finite)
        {
            return Err(LpError::Malformed("non-finite coefficient".into()));
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] == f64::INFINITY
                || self.upper[j] == f64::NEG_INFINITY
            {
                return Err(LpError::Malformed(format!("invalid bounds on variable {j}")));
            }
        }
        Ok(())
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for (i, row) in self.rows.iter().enumerate() {
            let lhs = crate::linalg::dot(row, x);
            let r = self.rhs[i];
            let viol = match self.senses[i] {
                Sense::Ge => r - lhs,
                Sense::Le => lhs - r,
                Sense::Eq => (lhs - r).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// One multiplier per row (see module docs for the sign convention).
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Final basis, usable as a warm start for a related program.
    pub basis: Option<Basis>,
}

impl LpSolution {
    /// Dual objective value `b^T y + sum_j d_j x_j`.
    pub fn dual_objective(&self, lp: &LinearProgram) -> f64 {
        let by: f64 = crate::linalg::dot(&lp.rhs, &self.duals);
        let dx: f64 = crate::linalg::dot(&self.reduced_costs, &self.primal);
        by + dx
    }
}

/// Solves `lp` from the all-slack basis.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_lp_with(lp, &Tolerances::default(), None)
}

/// Solves `lp`, optionally starting from `warm`. An unusable warm basis
/// (wrong dimensions or singular) silently falls back to the slack basis.
pub fn solve_lp_with(
    lp: &LinearProgram,
    tol: &Tolerances,
    warm: Option<&Basis>,
) -> Result<LpSolution, LpError> {
    lp.validate()?;
    for j in 0..lp.num_vars() {
        if lp.lower[j] > lp.upper[j] {
            return Ok(infeasible(lp, 0));
        }
    }
    simplex::Simplex::new(lp, tol, warm).run()
}

fn infeasible(lp: &LinearProgram, iterations: usize) -> LpSolution {
    LpSolution {
        status: LpStatus::Infeasible,
        primal: vec![0.0; lp.num_vars()],
        duals: vec![0.0; lp.num_rows()],
        reduced_costs: vec![0.0; lp.num_vars()],
        objective: f64::INFINITY,
        iterations,
        basis: None,
    }
}
