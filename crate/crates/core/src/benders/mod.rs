//! The Benders loop: master MIP over `(x, theta)`, scenario subproblems,
//! bounds, and optimality cuts, with a pluggable cut selector.

mod select;

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::dot;
use crate::lp::{Basis, LinearProgram, LpError, Sense};
use crate::milp::{solve_mip_with, MipOptions, MipStatus, MixedIntegerProgram};
use crate::model::{ModelError, Recourse, TwoStageProblem};

pub use select::{CutSelector, Selection};

/// `epsilon` in the gap denominator.
pub const GAP_EPS: f64 = 1e-8;
/// Cuts with violation at or below this are considered satisfied.
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BendersError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("master problem is unbounded (no cuts and no theta lower bound)")]
    MasterUnbounded,
    #[error("master problem is infeasible")]
    MasterInfeasible,
    #[error("time limit reached before any incumbent was found")]
    NoIncumbent,
}

/// `(UB - LB) / (|UB| + eps)`, clamped at zero.
pub fn relative_gap(ub: f64, lb: f64) -> f64 {
    if !ub.is_finite() || !lb.is_finite() {
        return f64::INFINITY;
    }
    ((ub - lb) / (ub.abs() + GAP_EPS)).max(0.0)
}

/// One optimality cut `theta^w >= intercept - coeffs . x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub scenario: usize,
    /// `pi^T h + kappa`
    pub intercept: f64,
    /// `pi^T T`
    pub coeffs: Vec<f64>,
    pub born_iter: usize,
    pub dual: Vec<f64>,
    /// `pi^T h` without the scenario constant.
    pub dual_rhs: f64,
}

impl Cut {
    pub fn from_recourse(problem: &TwoStageProblem, scenario: usize, rec: &Recourse, t: usize) -> Self {
        let s = &problem.scenarios[scenario];
        let dual_rhs = dot(&rec.duals, &s.h);
        Self {
            scenario,
            intercept: dual_rhs + s.constant,
            coeffs: s.t.tmul_vec(&rec.duals),
            born_iter: t,
            dual: rec.duals.clone(),
            dual_rhs,
        }
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.intercept - dot(&self.coeffs, x)
    }
}

/// A row of the master: either a single-scenario cut or the
/// probability-weighted aggregate over all scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledCut {
    /// `None` for an aggregated single cut.
    pub scenario: Option<usize>,
    pub intercept: f64,
    pub coeffs: Vec<f64>,
    pub born_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TimingMode {
    #[default]
    WallClock,
    /// Charges `seconds_per_unit` per simplex iteration and per B&B node.
    Proxy { seconds_per_unit: f64 },
}

impl TimingMode {
    pub const DEFAULT_PROXY_UNIT: f64 = 1e-4;

    pub fn proxy() -> Self {
        Self::Proxy {
            seconds_per_unit: Self::DEFAULT_PROXY_UNIT,
        }
    }

    pub fn is_proxy(&self) -> bool {
        matches!(self, Self::Proxy { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BendersConfig {
    pub eps_tol: f64,
    pub t_max: usize,
    pub time_limit_s: Option<f64>,
    pub timing: TimingMode,
    /// Relative gap for each master MIP solve.
    pub master_gap_tol: f64,
    /// Drop cuts whose coefficients hash equal to one already pooled.
    pub dedup: bool,
    /// Use the scenario's known recourse lower bound for `theta`.
    pub theta_lower_bound: bool,
}

impl Default for BendersConfig {
    fn default() -> Self {
        Self {
            eps_tol: 0.01,
            t_max: 500,
            time_limit_s: None,
            timing: TimingMode::WallClock,
            master_gap_tol: 0.0,
            dedup: false,
            theta_lower_bound: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    IterationLimit,
    TimeLimit,
}

/// Statistics of one iteration, in loop order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub lb: f64,
    /// UB of this iteration's master point.
    pub ub_raw: f64,
    /// Best UB so far.
    pub ub: f64,
    /// Gap against the best UB.
    pub gap: f64,
    pub master_time: f64,
    /// Cuts in the master when it was solved.
    pub master_cuts: usize,
    pub cuts_added: usize,
    pub cum_cuts: usize,
    pub selected: Vec<usize>,
    pub aggregate: bool,
    pub master_nodes: usize,
    pub master_lp_iterations: usize,
    /// Largest relative primal/dual mismatch over this iteration's subproblems.
    pub max_duality_residual: f64,
    /// Clock reading at the end of the iteration.
    pub elapsed: f64,
}

/// Full algorithm state after the most recent iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BendersState {
    pub t: usize,
    pub pool: Vec<PooledCut>,
    pub lb: f64,
    pub ub: f64,
    pub gap: f64,
    pub history: Vec<IterationRecord>,
    pub x_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub candidates: Vec<Cut>,
    /// `Q^w(x_hat)` per scenario.
    pub recourse: Vec<f64>,
    /// `NC^w`: how often each scenario was selected so far.
    pub selection_counts: Vec<usize>,
    /// First-stage point attaining the best UB.
    pub best_x: Vec<f64>,
    pub theta_lower: Vec<f64>,
    pub t_max: usize,
}

impl BendersState {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.history.last()
    }

    pub fn total_master_time(&self) -> f64 {
        self.history.iter().map(|h| h.master_time).sum()
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BendersOutcome {
    pub termination: Termination,
    pub x: Vec<f64>,
    pub objective: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub iterations: usize,
    /// Cuts in the master at its final solve.
    pub master_cuts: usize,
    pub total_cuts: usize,
    pub time: f64,
    pub master_time: f64,
}

enum Clock {
    Wall(Instant),
    Proxy { unit: f64, units: u64 },
}

impl Clock {
    fn new(mode: TimingMode) -> Self {
        match mode {
            TimingMode::WallClock => Clock::Wall(Instant::now()),
            TimingMode::Proxy { seconds_per_unit } => Clock::Proxy {
                unit: seconds_per_unit,
                units: 0,
            },
        }
    }

    fn now(&self) -> f64 {
        match self {
            Clock::Wall(start) => start.elapsed().as_secs_f64(),
            Clock::Proxy { unit, units } => *units as f64 * unit,
        }
    }

    fn charge(&mut self, work: usize) {
        if let Clock::Proxy { units, .. } = self {
            *units += work as u64;
        }
    }
}

/// Step-wise Benders driver. Each [`Engine::iterate`] solves the master and
/// all subproblems; [`Engine::apply`] then adds the chosen cuts.
pub struct Engine<'p> {
    problem: &'p TwoStageProblem,
    cfg: BendersConfig,
    state: BendersState,
    master: MixedIntegerProgram,
    master_basis: Option<Basis>,
    seen: HashSet<(Option<usize>, Vec<i64>)>,
    clock: Clock,
    timed_out: bool,
    /// The last master solve stopped before finding any point.
    master_incomplete: bool,
}

impl<'p> Engine<'p> {
    pub fn new(problem: &'p TwoStageProblem, cfg: BendersConfig) -> Result<Self, BendersError> {
        problem.validate()?;
        let fs = &problem.first_stage;
        let (n1, ns) = (problem.n1(), problem.num_scenarios());
        let theta_lower: Vec<f64> = problem
            .scenarios
            .iter()
            .map(|s| match s.recourse_lower_bound {
                Some(l) if cfg.theta_lower_bound => l,
                _ => f64::NEG_INFINITY,
            })
            .collect();

        let mut objective = fs.cost.clone();
        objective.extend(problem.scenarios.iter().map(|s| s.probability));
        let mut lp = LinearProgram::new(objective);
        for j in 0..n1 {
            lp.set_bounds(j, fs.lower[j], fs.upper[j]);
        }
        for (k, &l) in theta_lower.iter().enumerate() {
            lp.set_bounds(n1 + k, l, f64::INFINITY);
        }
        for (r, row) in fs.rows.iter().enumerate() {
            let mut full = row.clone();
            full.resize(n1 + ns, 0.0);
            lp.add_row(full, fs.senses[r], fs.rhs[r]);
        }
        let master = MixedIntegerProgram::new(lp, fs.integer_vars());

        let state = BendersState {
            t: 0,
            pool: Vec::new(),
            lb: f64::NEG_INFINITY,
            ub: f64::INFINITY,
            gap: f64::INFINITY,
            history: Vec::new(),
            x_hat: Vec::new(),
            theta_hat: Vec::new(),
            candidates: Vec::new(),
            recourse: Vec::new(),
            selection_counts: vec![0; ns],
            best_x: Vec::new(),
            theta_lower,
            t_max: cfg.t_max,
        };
        Ok(Self {
            problem,
            cfg,
            state,
            master,
            master_basis: None,
            seen: HashSet::new(),
            clock: Clock::new(cfg.timing),
            timed_out: false,
            master_incomplete: false,
        })
    }

    pub fn state(&self) -> &BendersState {
        &self.state
    }

    pub fn problem(&self) -> &'p TwoStageProblem {
        self.problem
    }

    pub fn config(&self) -> &BendersConfig {
        &self.cfg
    }

    pub fn elapsed(&self) -> f64 {
        self.clock.now()
    }

    /// Solves the current master and every subproblem, then refreshes bounds
    /// and the candidate cuts. A master that runs out of time without a point
    /// leaves the state untouched once an incumbent exists.
    pub fn iterate(&mut self) -> Result<(), BendersError> {
        let t = self.state.t + 1;
        let n1 = self.problem.n1();
        let master_cuts = self.state.pool.len();

        let mut opts = MipOptions {
            gap_tol: self.cfg.master_gap_tol,
            ..MipOptions::default()
        };
        if let (Some(limit), Clock::Wall(_)) = (self.cfg.time_limit_s, &self.clock) {
            let remaining = (limit - self.clock.now()).max(0.0);
            opts.time_limit = Some(std::time::Duration::from_secs_f64(remaining));
        }
        let before = self.clock.now();
        let wall = Instant::now();
        let sol = solve_mip_with(&self.master, &opts, self.master_basis.as_ref())?;
        self.clock.charge(sol.lp_iterations + sol.nodes_explored);
        let master_time = match self.clock {
            Clock::Wall(_) => wall.elapsed().as_secs_f64(),
            Clock::Proxy { .. } => self.clock.now() - before,
        };
        match sol.status {
            MipStatus::Optimal => {}
            MipStatus::Unbounded => return Err(BendersError::MasterUnbounded),
            MipStatus::Infeasible => return Err(BendersError::MasterInfeasible),
            MipStatus::TimeLimit => {
                self.timed_out = true;
                if !sol.has_incumbent() {
                    if !self.state.ub.is_finite() {
                        return Err(BendersError::NoIncumbent);
                    }
                    // Keep the previous iterate; the run stops on the time limit.
                    self.master_incomplete = true;
                    return Ok(());
                }
            }
        }
        self.master_basis = sol.root_basis.clone();

        let x_hat = sol.primal[..n1].to_vec();
        let theta_hat = sol.primal[n1..].to_vec();
        let lb = sol.best_bound.max(self.state.lb);

        let problem = self.problem;
        let results: Vec<Result<Recourse, ModelError>> = (0..problem.num_scenarios())
            .into_par_iter()
            .map(|w| problem.recourse(w, &x_hat))
            .collect();
        let mut recs = Vec::with_capacity(results.len());
        for r in results {
            recs.push(r?);
        }
        self.clock.charge(recs.iter().map(|r| r.iterations).sum());

        let ub_raw = dot(&problem.first_stage.cost, &x_hat)
            + problem
                .scenarios
                .iter()
                .zip(&recs)
                .map(|(s, r)| s.probability * r.value)
                .sum::<f64>();
        if ub_raw < self.state.ub {
            self.state.ub = ub_raw;
            self.state.best_x = x_hat.clone();
        }
        self.state.lb = lb;
        self.state.gap = relative_gap(self.state.ub, lb);
        let max_duality_residual = recs
            .iter()
            .map(|r| (r.value - r.dual_value).abs() / (1.0 + r.value.abs()))
            .fold(0.0, f64::max);

        self.state.candidates = recs
            .iter()
            .enumerate()
            .map(|(w, r)| Cut::from_recourse(problem, w, r, t))
            .collect();
        self.state.recourse = recs.iter().map(|r| r.value).collect();
        self.state.x_hat = x_hat;
        self.state.theta_hat = theta_hat;
        self.state.t = t;
        self.state.history.push(IterationRecord {
            t,
            lb,
            ub_raw,
            ub: self.state.ub,
            gap: self.state.gap,
            master_time,
            master_cuts,
            cuts_added: 0,
            cum_cuts: master_cuts,
            selected: Vec::new(),
            aggregate: false,
            master_nodes: sol.nodes_explored,
            master_lp_iterations: sol.lp_iterations,
            max_duality_residual,
            elapsed: self.clock.now(),
        });
        Ok(())
    }

    /// Violation `cut(x_hat) - theta_hat^w` of this iteration's candidate for `w`.
    pub fn violation(&self, w: usize) -> f64 {
        self.state.candidates[w].value_at(&self.state.x_hat) - self.state.theta_hat[w]
    }

    /// Adds the selected candidates to the master. Returns the number of rows added.
    pub fn apply(&mut self, selection: &Selection) -> usize {
        assert!(self.state.t > 0, "apply called before iterate");
        if self.master_incomplete {
            return 0;
        }
        let before = self.state.pool.len();
        match selection {
            Selection::Scenarios(ws) => {
                for &w in ws {
                    self.state.selection_counts[w] += 1;
                    let cut = &self.state.candidates[w];
                    let pooled = PooledCut {
                        scenario: Some(w),
                        intercept: cut.intercept,
                        coeffs: cut.coeffs.clone(),
                        born_iter: cut.born_iter,
                    };
                    self.push_cut(pooled);
                }
            }
            Selection::Aggregate => {
                let n1 = self.problem.n1();
                let mut coeffs = vec![0.0; n1];
                let mut intercept = 0.0;
                for (cut, s) in self.state.candidates.iter().zip(&self.problem.scenarios) {
                    intercept += s.probability * cut.intercept;
                    for (c, a) in coeffs.iter_mut().zip(&cut.coeffs) {
                        *c += s.probability * a;
                    }
                }
                self.push_cut(PooledCut {
                    scenario: None,
                    intercept,
                    coeffs,
                    born_iter: self.state.t,
                });
            }
        }
        let added = self.state.pool.len() - before;
        let cum = self.state.pool.len();
        if let Some(rec) = self.state.history.last_mut() {
            rec.cuts_added = added;
            rec.cum_cuts = cum;
            match selection {
                Selection::Scenarios(ws) => rec.selected = ws.clone(),
                Selection::Aggregate => rec.aggregate = true,
            }
            rec.elapsed = self.clock.now();
        }
        added
    }

    fn push_cut(&mut self, cut: PooledCut) {
        if self.cfg.dedup {
            let mut key: Vec<i64> = cut.coeffs.iter().map(|c| quantize(*c)).collect();
            key.push(quantize(cut.intercept));
            if !self.seen.insert((cut.scenario, key)) {
                return;
            }
        }
        let (n1, ns) = (self.problem.n1(), self.problem.num_scenarios());
        let mut row = cut.coeffs.clone();
        row.resize(n1 + ns, 0.0);
        match cut.scenario {
            Some(w) => row[n1 + w] = 1.0,
            None => {
                for (k, s) in self.problem.scenarios.iter().enumerate() {
                    row[n1 + k] = s.probability;
                }
            }
        }
        self.master.base.add_row(row, Sense::Ge, cut.intercept);
        self.master_basis = self.master_basis.take().map(|b| b.with_new_rows(1));
        self.state.pool.push(cut);
    }

    /// Termination status after the latest iteration, if the loop should stop.
    pub fn termination(&self) -> Option<Termination> {
        if self.state.t == 0 {
            return None;
        }
        if self.state.gap < self.cfg.eps_tol {
            Some(Termination::Converged)
        } else if self.timed_out || self.cfg.time_limit_s.is_some_and(|l| self.clock.now() >= l) {
            Some(Termination::TimeLimit)
        } else if self.state.t >= self.cfg.t_max {
            Some(Termination::IterationLimit)
        } else {
            None
        }
    }

    pub fn outcome(&self) -> BendersOutcome {
        let last = self.state.history.last();
        BendersOutcome {
            termination: self.termination().unwrap_or(Termination::IterationLimit),
            x: self.state.best_x.clone(),
            objective: self.state.ub,
            lower_bound: self.state.lb,
            gap: self.state.gap,
            iterations: self.state.t,
            master_cuts: last.map_or(0, |h| h.master_cuts),
            total_cuts: self.state.pool.len(),
            time: self.clock.now(),
            master_time: self.state.total_master_time(),
        }
    }

    pub fn into_state(self) -> BendersState {
        self.state
    }
}

fn quantize(v: f64) -> i64 {
    (v * 1e9).round() as i64
}

/// A finished run: summary plus the final state (which carries the trace).
#[derive(Debug, Clone)]
pub struct BendersRun {
    pub outcome: BendersOutcome,
    pub state: BendersState,
}

/// Runs the loop to termination with the given selector.
pub fn run_benders(
    problem: &TwoStageProblem,
    selector: &mut CutSelector,
    cfg: &BendersConfig,
) -> Result<BendersRun, BendersError> {
    let mut engine = Engine::new(problem, *cfg)?;
    loop {
        engine.iterate()?;
        let selection = selector.select(&engine);
        engine.apply(&selection);
        if let Some(term) = engine.termination() {
            log::debug!(
                "benders stopped after {} iterations: {:?}, gap {:.3e}",
                engine.state.t,
                term,
                engine.state.gap
            );
            break;
        }
    }
    Ok(BendersRun {
        outcome: engine.outcome(),
        state: engine.into_state(),
    })
}

pub const TRACE_HEADER: &str = "t,LB,UB,Gap,T_MP,cuts_added,cum_cuts,selected";

/// Writes one CSV row per iteration; `selected` lists scenario indices
/// separated by `;` (or `aggregate`).
pub fn write_trace_csv<W: Write>(mut out: W, history: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for h in history {
        let selected = if h.aggregate {
            "aggregate".to_string()
        } else {
            h.selected.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(";")
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            h.t, h.lb, h.ub, h.gap, h.master_time, h.cuts_added, h.cum_cuts, selected
        )?;
    }
    Ok(())
}
