use serde::{Deserialize, Serialize};

use super::{infeasible, LinearProgram, LpError, LpSolution, LpStatus, Sense, Tolerances};
use crate::linalg::Lu;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

/// Status of every structural column followed by every row slack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    pub status: Vec<VarStatus>,
}

impl Basis {
    /// Extends a basis to `extra` appended rows whose slacks become basic.
    pub fn with_new_rows(&self, extra: usize) -> Self {
        let mut status = self.status.clone();
        status.extend(std::iter::repeat_n(VarStatus::Basic, extra));
        Self { status }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

enum Ratio {
    Flip,
    Pivot { slot: Slot, to_upper: bool },
    Unbounded,
}

/// Position of a basic variable: either a structural kernel column or the
/// slack of a row outside the kernel.
#[derive(Clone, Copy)]
enum Slot {
    Struct(usize),
    Slack(usize),
}

pub(super) struct Simplex<'a> {
    lp: &'a LinearProgram,
    tol: &'a Tolerances,
    m: usize,
    n: usize,
    /// Column-major copy of the constraint matrix.
    cols: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    status: Vec<VarStatus>,
    value: Vec<f64>,
    /// Basic structural columns.
    bstruct: Vec<usize>,
    /// Rows whose slack is nonbasic; `krows.len() == bstruct.len()`.
    krows: Vec<usize>,
    in_kernel: Vec<bool>,
    lu: Option<Lu>,
    iterations: usize,
    degenerate_run: usize,
    bland: bool,
    resets: usize,
}

impl<'a> Simplex<'a> {
    pub(super) fn new(lp: &'a LinearProgram, tol: &'a Tolerances, warm: Option<&Basis>) -> Self {
        let m = lp.num_rows();
        let n = lp.num_vars();
        let mut cols = vec![0.0; n * m];
        for (i, row) in lp.rows.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                cols[j * m + i] = a;
            }
        }
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        for s in &lp.senses {
            let (l, u) = match s {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            lower.push(l);
            upper.push(u);
        }
        let mut s = Self {
            lp,
            tol,
            m,
            n,
            cols,
            lower,
            upper,
            status: Vec::new(),
            value: vec![0.0; n + m],
            bstruct: Vec::new(),
            krows: Vec::new(),
            in_kernel: vec![false; m],
            lu: None,
            iterations: 0,
            degenerate_run: 0,
            bland: false,
            resets: 0,
        };
        if !warm.is_some_and(|b| s.install(&b.status)) {
            s.slack_basis();
        }
        s
    }

    fn nonbasic_status(&self, j: usize) -> VarStatus {
        if self.lower[j].is_finite() {
            VarStatus::AtLower
        } else if self.upper[j].is_finite() {
            VarStatus::AtUpper
        } else {
            VarStatus::Free
        }
    }

    fn slack_basis(&mut self) {
        let status: Vec<VarStatus> = (0..self.n + self.m)
            .map(|j| if j < self.n { self.nonbasic_status(j) } else { VarStatus::Basic })
            .collect();
        let ok = self.install(&status);
        debug_assert!(ok);
    }

    /// Adopts `status` as the current basis. Returns false if it is unusable.
    fn install(&mut self, status: &[VarStatus]) -> bool {
        if status.len() != self.n + self.m {
            return false;
        }
        let mut st = status.to_vec();
        for (j, s) in st.iter_mut().enumerate() {
            *s = match *s {
                VarStatus::AtLower if !self.lower[j].is_finite() => self.nonbasic_status(j),
                VarStatus::AtUpper if !self.upper[j].is_finite() => self.nonbasic_status(j),
                VarStatus::Free if self.lower[j].is_finite() || self.upper[j].is_finite() => {
                    self.nonbasic_status(j)
                }
                other => other,
            };
        }
        let bstruct: Vec<usize> = (0..self.n).filter(|&j| st[j] == VarStatus::Basic).collect();
        let krows: Vec<usize> = (0..self.m)
            .filter(|&i| st[self.n + i] != VarStatus::Basic)
            .collect();
        if bstruct.len() != krows.len() {
            return false;
        }
        self.status = st;
        self.bstruct = bstruct;
        self.krows = krows;
        self.in_kernel = vec![false; self.m];
        for &r in &self.krows {
            self.in_kernel[r] = true;
        }
        for j in 0..self.n + self.m {
            self.value[j] = match self.status[j] {
                VarStatus::AtLower => self.lower[j],
                VarStatus::AtUpper => self.upper[j],
                VarStatus::Free | VarStatus::Basic => 0.0,
            };
        }
        self.factor()
    }

    #[inline]
    fn a(&self, i: usize, j: usize) -> f64 {
        self.cols[j * self.m + i]
    }

    fn factor(&mut self) -> bool {
        let k = self.bstruct.len();
        let mut kernel = vec![0.0; k * k];
        for (r, &row) in self.krows.iter().enumerate() {
            for (c, &col) in self.bstruct.iter().enumerate() {
                kernel[r * k + c] = self.a(row, col);
            }
        }
        self.lu = Lu::factor(k, kernel, 1e-13);
        self.lu.is_some()
    }

    /// Solves `B w = v`. Returns kernel-column coefficients and per-row
    /// coefficients for basic slacks (entries of kernel rows are unused).
    fn ftran(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lu = self.lu.as_ref().expect("factored basis");
        let vr: Vec<f64> = self.krows.iter().map(|&r| v[r]).collect();
        let ws = lu.solve(&vr);
        let mut wslack = vec![0.0; self.m];
        for i in 0..self.m {
            if self.in_kernel[i] {
                continue;
            }
            let mut s = v[i];
            for (c, &col) in self.bstruct.iter().enumerate() {
                s -= self.a(i, col) * ws[c];
            }
            wslack[i] = s;
        }
        (ws, wslack)
    }

    /// Solves `y^T B = c_B^T` given costs of basic slacks (per row) and of
    /// kernel columns.
    fn btran(&self, slack_cost: &[f64], struct_cost: &[f64]) -> Vec<f64> {
        let lu = self.lu.as_ref().expect("factored basis");
        let mut y = vec![0.0; self.m];
        for i in 0..self.m {
            if !self.in_kernel[i] {
                y[i] = slack_cost[i];
            }
        }
        let rhs: Vec<f64> = self
            .bstruct
            .iter()
            .zip(struct_cost)
            .map(|(&col, &c)| {
                let mut s = c;
                for i in 0..self.m {
                    if !self.in_kernel[i] && y[i] != 0.0 {
                        s -= y[i] * self.a(i, col);
                    }
                }
                s
            })
            .collect();
        let yr = lu.solve_transpose(&rhs);
        for (r, &row) in self.krows.iter().enumerate() {
            y[row] = yr[r];
        }
        y
    }

    fn compute_basics(&mut self) {
        let mut v = self.lp.rhs.clone();
        for j in 0..self.n {
            if self.status[j] != VarStatus::Basic && self.value[j] != 0.0 {
                let x = self.value[j];
                for (i, vi) in v.iter_mut().enumerate() {
                    *vi -= self.cols[j * self.m + i] * x;
                }
            }
        }
        for i in 0..self.m {
            if self.status[self.n + i] != VarStatus::Basic {
                v[i] -= self.value[self.n + i];
            }
        }
        let (ws, wslack) = self.ftran(&v);
        for (c, &col) in self.bstruct.iter().enumerate() {
            self.value[col] = ws[c];
        }
        for i in 0..self.m {
            if !self.in_kernel[i] {
                self.value[self.n + i] = wslack[i];
            }
        }
    }

    fn primal_tol(&self) -> f64 {
        0.1 * self.tol.feasibility
    }

    /// Phase-1 cost of a basic variable: -1 below its lower bound, +1 above
    /// its upper bound.
    fn infeasibility_cost(&self, j: usize) -> f64 {
        let t = self.primal_tol();
        if self.value[j] < self.lower[j] - t {
            -1.0
        } else if self.value[j] > self.upper[j] + t {
            1.0
        } else {
            0.0
        }
    }

    fn column_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            crate::linalg::dot(&self.cols[j * self.m..(j + 1) * self.m], y)
        } else {
            y[j - self.n]
        }
    }

    fn reset(&mut self) -> Result<(), LpError> {
        self.resets += 1;
        if self.resets > 3 {
            return Err(LpError::NumericalFailure {
                iterations: self.iterations,
            });
        }
        self.slack_basis();
        Ok(())
    }

    pub(super) fn run(mut self) -> Result<LpSolution, LpError> {
        let cap = self.tol.iteration_factor * (self.m + self.n).max(1);
        loop {
            if self.iterations > cap {
                return Err(LpError::NumericalFailure {
                    iterations: self.iterations,
                });
            }
            if self.lu.is_none() && !self.factor() {
                self.reset()?;
                continue;
            }
            self.compute_basics();

            let phase1_slack: Vec<f64> = (0..self.m)
                .map(|i| if self.in_kernel[i] { 0.0 } else { self.infeasibility_cost(self.n + i) })
                .collect();
            let phase1_struct: Vec<f64> =
                self.bstruct.iter().map(|&j| self.infeasibility_cost(j)).collect();
            let phase = if phase1_slack.iter().chain(&phase1_struct).any(|&c| c != 0.0) {
                Phase::One
            } else {
                Phase::Two
            };
            let y = match phase {
                Phase::One => self.btran(&phase1_slack, &phase1_struct),
                Phase::Two => {
                    let sc: Vec<f64> = self.bstruct.iter().map(|&j| self.lp.objective[j]).collect();
                    self.btran(&vec![0.0; self.m], &sc)
                }
            };

            let Some((q, dq)) = self.price(phase, &y) else {
                return Ok(match phase {
                    Phase::One => infeasible(self.lp, self.iterations),
                    Phase::Two => self.finish(&y),
                });
            };
            let dir = if dq < 0.0 { 1.0 } else { -1.0 };
            let colq: Vec<f64> = if q < self.n {
                self.cols[q * self.m..(q + 1) * self.m].to_vec()
            } else {
                let mut e = vec![0.0; self.m];
                e[q - self.n] = 1.0;
                e
            };
            let (ws, wslack) = self.ftran(&colq);
            let (ratio, step) = self.ratio_test(phase, q, dir, &ws, &wslack);
            self.iterations += 1;
            match ratio {
                Ratio::Unbounded => {
                    if phase == Phase::Two {
                        return Ok(LpSolution {
                            status: LpStatus::Unbounded,
                            primal: self.value[..self.n].to_vec(),
                            duals: vec![0.0; self.m],
                            reduced_costs: vec![0.0; self.n],
                            objective: f64::NEG_INFINITY,
                            iterations: self.iterations,
                            basis: None,
                        });
                    }
                    // Cannot happen in exact arithmetic; restart from scratch.
                    self.reset()?;
                    continue;
                }
                Ratio::Flip => {
                    self.status[q] = if dir > 0.0 { VarStatus::AtUpper } else { VarStatus::AtLower };
                    self.value[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Ratio::Pivot { slot, to_upper } => {
                    self.pivot(q, slot, to_upper);
                    if !self.factor() {
                        self.reset()?;
                        continue;
                    }
                }
            }
            if step <= 1e-12 {
                self.degenerate_run += 1;
                if self.degenerate_run >= self.tol.bland_after {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
            }
        }
    }

    /// Chooses the entering variable: Dantzig's rule, or the lowest eligible
    /// index once Bland's rule is active.
    fn price(&self, phase: Phase, y: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.n + self.m {
            let st = self.status[j];
            if st == VarStatus::Basic {
                continue;
            }
            let cost = match phase {
                Phase::One => 0.0,
                Phase::Two if j < self.n => self.lp.objective[j],
                Phase::Two => 0.0,
            };
            let d = cost - self.column_dot(j, y);
            let movable = self.upper[j] > self.lower[j];
            let eligible = match st {
                VarStatus::AtLower => movable && d < -self.tol.optimality,
                VarStatus::AtUpper => movable && d > self.tol.optimality,
                VarStatus::Free => d.abs() > self.tol.optimality,
                VarStatus::Basic => false,
            };
            if !eligible {
                continue;
            }
            if self.bland {
                return Some((j, d));
            }
            if best.is_none_or(|(_, bd)| d.abs() > bd.abs()) {
                best = Some((j, d));
            }
        }
        best
    }

    /// Bounded ratio test with a Harris two-pass choice (textbook minimum
    /// ratio with lowest-index ties under Bland's rule).
    fn ratio_test(
        &self,
        phase: Phase,
        q: usize,
        dir: f64,
        ws: &[f64],
        wslack: &[f64],
    ) -> (Ratio, f64) {
        let ptol = self.primal_tol();
        // (slot, var index, |delta|, exact distance, to_upper)
        let mut cands: Vec<(Slot, usize, f64, f64, bool)> = Vec::new();
        let mut consider = |slot: Slot, j: usize, w: f64| {
            if w.abs() < self.tol.pivot {
                return;
            }
            let delta = -dir * w;
            let x = self.value[j];
            let (l, u) = (self.lower[j], self.upper[j]);
            let below = x < l - ptol;
            let above = x > u + ptol;
            if phase == Phase::One && below {
                if delta > 0.0 {
                    cands.push((slot, j, delta, l - x, false));
                }
            } else if phase == Phase::One && above {
                if delta < 0.0 {
                    cands.push((slot, j, -delta, x - u, true));
                }
            } else if delta < 0.0 {
                if l.is_finite() {
                    cands.push((slot, j, -delta, x - l, false));
                }
            } else if u.is_finite() {
                cands.push((slot, j, delta, u - x, true));
            }
        };
        for (c, &col) in self.bstruct.iter().enumerate() {
            consider(Slot::Struct(c), col, ws[c]);
        }
        for i in 0..self.m {
            if !self.in_kernel[i] {
                consider(Slot::Slack(i), self.n + i, wslack[i]);
            }
        }
        let range = self.upper[q] - self.lower[q];

        let chosen = if self.bland {
            let mut best: Option<(usize, f64)> = None;
            for (idx, c) in cands.iter().enumerate() {
                let r = (c.3 / c.2).max(0.0);
                let better = match best {
                    None => true,
                    Some((bi, br)) => r < br || (r == br && c.1 < cands[bi].1),
                };
                if better {
                    best = Some((idx, r));
                }
            }
            best
        } else {
            let bound = cands
                .iter()
                .map(|c| (c.3 + ptol) / c.2)
                .fold(f64::INFINITY, f64::min);
            let mut best: Option<(usize, f64)> = None;
            for (idx, c) in cands.iter().enumerate() {
                let r = (c.3 / c.2).max(0.0);
                if r <= bound && best.is_none_or(|(bi, _)| c.2 > cands[bi].2) {
                    best = Some((idx, r));
                }
            }
            best
        };

        match chosen {
            Some((_, r)) if range.is_finite() && range <= r => (Ratio::Flip, range),
            Some((idx, r)) => {
                let c = cands[idx];
                (Ratio::Pivot { slot: c.0, to_upper: c.4 }, r)
            }
            None if range.is_finite() => (Ratio::Flip, range),
            None => (Ratio::Unbounded, f64::INFINITY),
        }
    }

    fn pivot(&mut self, q: usize, slot: Slot, to_upper: bool) {
        let leaving = match slot {
            Slot::Struct(c) => self.bstruct[c],
            Slot::Slack(i) => self.n + i,
        };
        self.status[leaving] = if to_upper { VarStatus::AtUpper } else { VarStatus::AtLower };
        self.value[leaving] = if to_upper { self.upper[leaving] } else { self.lower[leaving] };
        self.status[q] = VarStatus::Basic;

        // Leaving side.
        match slot {
            Slot::Struct(c) => {
                self.bstruct.remove(c);
            }
            Slot::Slack(i) => {
                self.in_kernel[i] = true;
                insert_sorted(&mut self.krows, i);
            }
        }
        // Entering side.
        if q < self.n {
            insert_sorted(&mut self.bstruct, q);
        } else {
            let row = q - self.n;
            self.in_kernel[row] = false;
            self.krows.retain(|&r| r != row);
        }
        self.lu = None;
    }

    fn finish(&self, y: &[f64]) -> LpSolution {
        let primal = self.value[..self.n].to_vec();
        let mut duals = y.to_vec();
        for (i, d) in duals.iter_mut().enumerate() {
            match self.lp.senses[i] {
                Sense::Ge => *d = d.max(0.0),
                Sense::Le => *d = d.min(0.0),
                Sense::Eq => {}
            }
        }
        let reduced_costs: Vec<f64> = (0..self.n)
            .map(|j| {
                if self.status[j] == VarStatus::Basic {
                    0.0
                } else {
                    self.lp.objective[j] - self.column_dot(j, &duals)
                }
            })
            .collect();
        let objective = crate::linalg::dot(&self.lp.objective, &primal);
        LpSolution {
            status: LpStatus::Optimal,
            primal,
            duals,
            reduced_costs,
            objective,
            iterations: self.iterations,
            basis: Some(Basis {
                status: self.status.clone(),
            }),
        }
    }
}

fn insert_sorted(v: &mut Vec<usize>, x: usize) {
    let pos = v.partition_point(|&e| e < x);
    v.insert(pos, x);
}
