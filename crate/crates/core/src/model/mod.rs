//! Two-stage stochastic programs in standard form.
//!
//! `min_{x in X} c^T x + sum_w p^w Q^w(x)` with
//! `Q^w(x) = kappa^w + min { q^T y : W y (sense) h - T x, y >= 0 }`.
//! Second-stage variables are always nonnegative; `kappa^w` is a constant
//! offset carried by the scenario (the EV model stores its revenue term there).

pub mod ev;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Matrix};
use crate::lp::{solve_lp, LinearProgram, LpError, LpSolution, LpStatus, Sense};

pub use ev::{
    ev_to_standard_form, generate_demand_scenarios, generate_ev_instance, DemandShape, EvInstance,
    InstanceFile,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("recourse problem of scenario {0} is infeasible")]
    RecourseInfeasible(usize),
    #[error("recourse problem of scenario {0} is unbounded")]
    RecourseUnbounded(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// First-stage data: cost vector and the feasible set `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    pub cost: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub senses: Vec<Sense>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
}

impl FirstStage {
    pub fn dim(&self) -> usize {
        self.cost.len()
    }

    pub fn integer_vars(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.integer[j]).collect()
    }

    /// True when `x` lies in `X` within `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let lp = LinearProgram {
            objective: self.cost.clone(),
            rows: self.rows.clone(),
            senses: self.senses.clone(),
            rhs: self.rhs.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        };
        lp.max_violation(x) <= tol
            && self
                .integer_vars()
                .iter()
                .all(|&j| (x[j] - x[j].round()).abs() <= tol)
    }
}

/// One realization `(W, h, T, q)` with its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub w: Matrix,
    pub senses: Vec<Sense>,
    pub h: Vec<f64>,
    pub t: Matrix,
    pub q: Vec<f64>,
    pub probability: f64,
    /// Constant added to the recourse value.
    pub constant: f64,
    /// A valid lower bound on `Q^w(x)` over `X`, if known.
    pub recourse_lower_bound: Option<f64>,
}

impl Scenario {
    /// `h - T x`
    pub fn rhs_at(&self, x: &[f64]) -> Vec<f64> {
        let tx = self.t.mul_vec(x);
        self.h.iter().zip(&tx).map(|(h, t)| h - t).collect()
    }

    /// The recourse LP at first-stage point `x` (without the constant).
    pub fn recourse_lp(&self, x: &[f64]) -> LinearProgram {
        let mut lp = LinearProgram::new(self.q.clone());
        let rhs = self.rhs_at(x);
        for r in 0..self.w.rows() {
            lp.add_row(self.w.row(r).to_vec(), self.senses[r], rhs[r]);
        }
        lp
    }
}

/// Optimal recourse of one scenario at a fixed first-stage point.
#[derive(Debug, Clone, PartialEq)]
pub struct Recourse {
    /// `Q^w(x)`, including the scenario constant.
    pub value: f64,
    /// Optimal duals of the recourse rows.
    pub duals: Vec<f64>,
    /// Dual objective `pi^T (h - T x) + constant`.
    pub dual_value: f64,
    pub primal: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageProblem {
    pub first_stage: FirstStage,
    pub scenarios: Vec<Scenario>,
}

impl TwoStageProblem {
    pub fn n1(&self) -> usize {
        self.first_stage.dim()
    }

    pub fn n2(&self) -> usize {
        self.scenarios.first().map_or(0, |s| s.q.len())
    }

    pub fn num_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    pub fn recourse_rows(&self) -> usize {
        self.scenarios.first().map_or(0, |s| s.w.rows())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fs = &self.first_stage;
        let n1 = fs.dim();
        let bad = |msg: String| Err(ModelError::Invalid(msg));
        if fs.lower.len() != n1 || fs.upper.len() != n1 || fs.integer.len() != n1 {
            return bad("first-stage bound/integrality vectors do not match cost".into());
        }
        if fs.senses.len() != fs.rows.len() || fs.rhs.len() != fs.rows.len() {
            return bad("first-stage row metadata mismatch".into());
        }
        if fs.rows.iter().any(|r| r.len() != n1) {
            return bad("first-stage row length mismatch".into());
        }
        if self.scenarios.is_empty() {
            return bad("at least one scenario is required".into());
        }
        let n2 = self.n2();
        let rows = self.recourse_rows();
        for (k, s) in self.scenarios.iter().enumerate() {
            if s.q.len() != n2 || s.w.cols() != n2 || s.w.rows() != rows {
                return bad(format!("scenario {k}: W/q dimensions differ from scenario 0"));
            }
            if s.t.rows() != rows || s.t.cols() != n1 || s.h.len() != rows || s.senses.len() != rows
            {
                return bad(format!("scenario {k}: T/h dimensions inconsistent"));
            }
            if !(s.probability >= 0.0) {
                return bad(format!("scenario {k}: negative probability"));
            }
        }
        let total: f64 = self.scenarios.iter().map(|s| s.probability).sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("probabilities sum to {total}"));
        }
        Ok(())
    }

    /// Solves the recourse problem of scenario `w` at `x`.
    pub fn recourse(&self, w: usize, x: &[f64]) -> Result<Recourse, ModelError> {
        let s = &self.scenarios[w];
        let lp = s.recourse_lp(x);
        let sol: LpSolution = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(ModelError::RecourseInfeasible(w)),
            LpStatus::Unbounded => return Err(ModelError::RecourseUnbounded(w)),
        }
        // Second-stage variables sit at lower bound 0, so bound duals add nothing.
        let dual_value = dot(&sol.duals, &lp.rhs) + s.constant;
        Ok(Recourse {
            value: sol.objective + s.constant,
            dual_value,
            duals: sol.duals,
            primal: sol.primal,
            iterations: sol.iterations,
        })
    }

    /// `c^T x + sum_w p^w Q^w(x)`
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, ModelError> {
        let mut total = dot(&self.first_stage.cost, x);
        for (w, s) in self.scenarios.iter().enumerate() {
            total += s.probability * self.recourse(w, x)?.value;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TwoStageProblem {
        // x in {0,1,2}, cost 1; recourse: min 3y s.t. y >= d - x.
        let first_stage = FirstStage {
            cost: vec![1.0],
            rows: vec![],
            senses: vec![],
            rhs: vec![],
            lower: vec![0.0],
            upper: vec![2.0],
            integer: vec![true],
        };
        let scenario = |d: f64| Scenario {
            w: Matrix::from_rows(&[vec![1.0]]),
            senses: vec![Sense::Ge],
            h: vec![d],
            t: Matrix::from_rows(&[vec![1.0]]),
            q: vec![3.0],
            probability: 0.5,
            constant: 0.0,
            recourse_lower_bound: Some(0.0),
        };
        TwoStageProblem {
            first_stage,
            scenarios: vec![scenario(1.0), scenario(2.0)],
        }
    }

    #[test]
    fn recourse_and_evaluation() {
        let p = tiny();
        p.validate().unwrap();
        let r = p.recourse(1, &[0.0]).unwrap();
        assert_eq!(r.value, 6.0);
        assert!((r.dual_value - r.value).abs() < 1e-12);
        assert_eq!(r.duals, vec![3.0]);
        assert_eq!(p.evaluate(&[1.0]).unwrap(), 1.0 + 0.5 * 3.0);
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        let mut p = tiny();
        p.scenarios[0].probability = 0.4;
        assert!(matches!(p.validate(), Err(ModelError::Invalid(_))));
    }

    #[test]
    fn membership_checks_integrality() {
        let p = tiny();
        assert!(p.first_stage.contains(&[1.0], 1e-9));
        assert!(!p.first_stage.contains(&[0.5], 1e-9));
        assert!(!p.first_stage.contains(&[3.0], 1e-9));
    }
}
