//! Best-bound-first branch-and-bound over [`crate::lp`] relaxations.
//!
//! Branching picks the most fractional integer variable (lowest index on
//! ties); open nodes are ordered by LP bound, then creation order. Children
//! warm-start from their parent's optimal basis.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, TwoStageProblem};
use crate::lp::{solve_lp_with, Basis, LinearProgram, LpError, LpStatus, Tolerances};

#[derive(Debug, Clone, PartialEq)]
pub struct MixedIntegerProgram {
    pub base: LinearProgram,
    pub integer_vars: Vec<usize>,
}

impl MixedIntegerProgram {
    pub fn new(base: LinearProgram, integer_vars: Vec<usize>) -> Self {
        Self { base, integer_vars }
    }

    pub fn validate(&self) -> Result<(), LpError> {
        self.base.validate()?;
        for &j in &self.integer_vars {
            if j >= self.base.num_vars() {
                return Err(LpError::Malformed(format!("integer index {j} out of range")));
            }
            if !self.base.lower[j].is_finite() || !self.base.upper[j].is_finite() {
                return Err(LpError::Malformed(format!(
                    "integer variable {j} must have finite bounds"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MipStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Stopped by the time limit; `primal` holds the incumbent if one exists.
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipSolution {
    pub status: MipStatus,
    /// Incumbent (empty when none was found).
    pub primal: Vec<f64>,
    /// Incumbent objective (`+inf` when none was found).
    pub objective: f64,
    pub best_bound: f64,
    pub nodes_explored: usize,
    /// Total simplex iterations over all node relaxations.
    pub lp_iterations: usize,
    /// Root relaxation basis, for warm-starting a related master.
    pub root_basis: Option<Basis>,
}

impl MipSolution {
    pub fn has_incumbent(&self) -> bool {
        !self.primal.is_empty()
    }

    /// `(objective - best_bound) / max(|objective|, 1e-10)`.
    pub fn relative_gap(&self) -> f64 {
        if !self.has_incumbent() {
            return f64::INFINITY;
        }
        ((self.objective - self.best_bound) / self.objective.abs().max(1e-10)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MipOptions {
    pub time_limit: Option<Duration>,
    pub gap_tol: f64,
    pub integrality_tol: f64,
    /// Absolute pruning slack, scaled by `1 + |incumbent|`.
    pub abs_tol: f64,
    pub lp: Tolerances,
}

impl Default for MipOptions {
    fn default() -> Self {
        Self {
            time_limit: None,
            gap_tol: 0.0,
            integrality_tol: 1e-6,
            abs_tol: 1e-9,
            lp: Tolerances::default(),
        }
    }
}

struct Node {
    bound: f64,
    id: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    primal: Vec<f64>,
    basis: Option<Basis>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound, then smallest id, on top.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Solves `mip` with the given time limit (seconds, `None` for no limit) and
/// relative gap tolerance.
pub fn solve_mip(
    mip: &MixedIntegerProgram,
    time_limit_s: Option<f64>,
    gap_tol: f64,
) -> Result<MipSolution, LpError> {
    let opts = MipOptions {
        time_limit: time_limit_s.map(Duration::from_secs_f64),
        gap_tol,
        ..MipOptions::default()
    };
    solve_mip_with(mip, &opts, None)
}

pub fn solve_mip_with(
    mip: &MixedIntegerProgram,
    opts: &MipOptions,
    warm: Option<&Basis>,
) -> Result<MipSolution, LpError> {
    mip.validate()?;
    let start = Instant::now();
    let mut lp = mip.base.clone();
    for &j in &mip.integer_vars {
        lp.lower[j] = lp.lower[j].ceil();
        lp.upper[j] = lp.upper[j].floor();
    }

    let mut lp_iterations = 0;
    let mut nodes_explored = 1;
    let root = solve_lp_with(&lp, &opts.lp, warm)?;
    lp_iterations += root.iterations;
    let mut out = MipSolution {
        status: MipStatus::Infeasible,
        primal: Vec::new(),
        objective: f64::INFINITY,
        best_bound: f64::INFINITY,
        nodes_explored,
        lp_iterations,
        root_basis: root.basis.clone(),
    };
    match root.status {
        LpStatus::Infeasible => return Ok(out),
        LpStatus::Unbounded => {
            out.status = MipStatus::Unbounded;
            out.best_bound = f64::NEG_INFINITY;
            out.objective = f64::NEG_INFINITY;
            return Ok(out);
        }
        LpStatus::Optimal => {}
    }

    let mut heap = BinaryHeap::new();
    let mut next_id = 1;
    heap.push(Node {
        bound: root.objective,
        id: 0,
        lower: lp.lower.clone(),
        upper: lp.upper.clone(),
        primal: root.primal,
        basis: root.basis,
    });

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let prune_slack = |inc: f64| (opts.gap_tol * inc.abs()).max(opts.abs_tol * (1.0 + inc.abs()));

    let mut open_bound = f64::INFINITY;
    // Smallest bound among children discarded against an incumbent.
    let mut pruned_bound = f64::INFINITY;
    while let Some(node) = heap.pop() {
        if let Some((inc, _)) = &incumbent {
            if node.bound >= inc - prune_slack(*inc) {
                // Best-first: every remaining node is at least as bad.
                open_bound = node.bound;
                break;
            }
        }
        if opts.time_limit.is_some_and(|t| start.elapsed() > t) {
            let best_bound = node
                .bound
                .min(pruned_bound)
                .min(incumbent.as_ref().map_or(f64::INFINITY, |i| i.0));
            out.status = MipStatus::TimeLimit;
            out.best_bound = best_bound;
            out.nodes_explored = nodes_explored;
            out.lp_iterations = lp_iterations;
            if let Some((obj, x)) = incumbent {
                out.objective = obj;
                out.primal = x;
            }
            return Ok(out);
        }

        let branch = most_fractional(&node.primal, &mip.integer_vars, opts.integrality_tol);
        let Some(var) = branch else {
            // Integral relaxation: new incumbent (bound < incumbent by the check above).
            let mut x = node.primal;
            for &j in &mip.integer_vars {
                x[j] = x[j].round();
            }
            incumbent = Some((node.bound, x));
            continue;
        };

        let value = node.primal[var];
        for down in [true, false] {
            let mut lower = node.lower.clone();
            let mut upper = node.upper.clone();
            if down {
                upper[var] = value.floor();
            } else {
                lower[var] = value.ceil();
            }
            lp.lower.clone_from(&lower);
            lp.upper.clone_from(&upper);
            let sol = solve_lp_with(&lp, &opts.lp, node.basis.as_ref())?;
            nodes_explored += 1;
            lp_iterations += sol.iterations;
            if sol.status != LpStatus::Optimal {
                continue;
            }
            if let Some((inc, _)) = &incumbent {
                if sol.objective >= inc - prune_slack(*inc) {
                    pruned_bound = pruned_bound.min(sol.objective);
                    continue;
                }
            }
            heap.push(Node {
                bound: sol.objective,
                id: next_id,
                lower,
                upper,
                primal: sol.primal,
                basis: sol.basis,
            });
            next_id += 1;
        }
    }

    out.nodes_explored = nodes_explored;
    out.lp_iterations = lp_iterations;
    match incumbent {
        Some((obj, x)) => {
            out.status = MipStatus::Optimal;
            out.objective = obj;
            out.best_bound = open_bound.min(pruned_bound).min(obj);
            out.primal = x;
        }
        None => {
            out.status = MipStatus::Infeasible;
        }
    }
    Ok(out)
}

/// Builds the deterministic equivalent `min c^T x + sum_w p^w (q^T y^w + kappa^w)`
/// with one copy of the recourse block per scenario and solves it as one MIP.
/// The returned `primal` holds only the first-stage part `x`.
pub fn solve_extensive_form(
    problem: &TwoStageProblem,
    time_limit_s: Option<f64>,
    gap_tol: f64,
) -> Result<MipSolution, ModelError> {
    problem.validate()?;
    let fs = &problem.first_stage;
    let (n1, n2) = (problem.n1(), problem.n2());
    let n = n1 + n2 * problem.num_scenarios();

    let mut objective = fs.cost.clone();
    for s in &problem.scenarios {
        objective.extend(s.q.iter().map(|q| s.probability * q));
    }
    let mut lp = LinearProgram::new(objective);
    for j in 0..n1 {
        lp.set_bounds(j, fs.lower[j], fs.upper[j]);
    }
    for (r, row) in fs.rows.iter().enumerate() {
        let mut full = row.clone();
        full.resize(n, 0.0);
        lp.add_row(full, fs.senses[r], fs.rhs[r]);
    }
    for (k, s) in problem.scenarios.iter().enumerate() {
        let offset = n1 + k * n2;
        for r in 0..s.w.rows() {
            // W y + T x (sense) h
            let mut full = vec![0.0; n];
            full[..n1].copy_from_slice(s.t.row(r));
            full[offset..offset + n2].copy_from_slice(s.w.row(r));
            lp.add_row(full, s.senses[r], s.h[r]);
        }
    }
    let constant: f64 = problem.scenarios.iter().map(|s| s.probability * s.constant).sum();
    let mip = MixedIntegerProgram::new(lp, fs.integer_vars());
    let mut sol = solve_mip(&mip, time_limit_s, gap_tol)?;
    sol.objective += constant;
    sol.best_bound += constant;
    sol.primal.truncate(n1);
    Ok(sol)
}

fn most_fractional(x: &[f64], integer_vars: &[usize], tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &j in integer_vars {
        let frac = x[j] - x[j].floor();
        let dist = frac.min(1.0 - frac);
        if dist <= tol {
            continue;
        }
        match best {
            Some((bj, bd)) if dist < bd || (dist == bd && j > bj) => {}
            _ => best = Some((j, dist)),
        }
    }
    best.map(|(j, _)| j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{solve_lp, Sense};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_binary() {
        let mut lp = LinearProgram::new(vec![-1.0]);
        lp.set_bounds(0, 0.0, 1.0);
        let sol = solve_mip(&MixedIntegerProgram::new(lp, vec![0]), None, 0.0).unwrap();
        assert_eq!(sol.status, MipStatus::Optimal);
        assert_eq!(sol.primal, vec![1.0]);
        assert_eq!(sol.objective, -1.0);
    }

    #[test]
    fn one_row_knapsack() {
        let mut lp = LinearProgram::new(vec![-3.0, -2.0]);
        lp.set_bounds(0, 0.0, 1.0).set_bounds(1, 0.0, 1.0);
        lp.add_row(vec![1.0, 1.0], Sense::Le, 1.0);
        let sol = solve_mip(&MixedIntegerProgram::new(lp, vec![0, 1]), None, 0.0).unwrap();
        assert_eq!(sol.primal, vec![1.0, 0.0]);
        assert_eq!(sol.objective, -3.0);
    }

    #[test]
    fn infeasible_integer_program() {
        // 2x = 1 has no integer solution.
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.set_bounds(0, 0.0, 3.0);
        lp.add_row(vec![2.0], Sense::Eq, 1.0);
        let sol = solve_mip(&MixedIntegerProgram::new(lp, vec![0]), None, 0.0).unwrap();
        assert_eq!(sol.status, MipStatus::Infeasible);
        assert!(!sol.has_incumbent());
    }

    #[test]
    fn unbounded_integer_bounds_rejected() {
        let lp = LinearProgram::new(vec![1.0]);
        let err = solve_mip(&MixedIntegerProgram::new(lp, vec![0]), None, 0.0).unwrap_err();
        assert!(matches!(err, LpError::Malformed(_)));
    }

    /// Exhaustive oracle: enumerate every integer assignment and solve the
    /// remaining continuous LP.
    fn enumerate(mip: &MixedIntegerProgram) -> Option<f64> {
        let ints = &mip.integer_vars;
        let mut assign: Vec<i64> = ints.iter().map(|&j| mip.base.lower[j] as i64).collect();
        let mut best: Option<f64> = None;
        loop {
            let mut lp = mip.base.clone();
            for (k, &j) in ints.iter().enumerate() {
                lp.lower[j] = assign[k] as f64;
                lp.upper[j] = assign[k] as f64;
            }
            let sol = solve_lp(&lp).unwrap();
            if sol.status == LpStatus::Optimal {
                best = Some(best.map_or(sol.objective, |b: f64| b.min(sol.objective)));
            }
            let mut k = 0;
            loop {
                if k == ints.len() {
                    return best;
                }
                if (assign[k] as f64) < mip.base.upper[ints[k]] {
                    assign[k] += 1;
                    break;
                }
                assign[k] = mip.base.lower[ints[k]] as i64;
                k += 1;
            }
        }
    }

    fn random_mip(rng: &mut ChaCha8Rng, n_int: usize, n_cont: usize, domain: i64) -> MixedIntegerProgram {
        let n = n_int + n_cont;
        let obj = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut lp = LinearProgram::new(obj);
        for j in 0..n {
            let ub = if j < n_int { (domain - 1) as f64 } else { rng.random_range(1.0..5.0) };
            lp.set_bounds(j, 0.0, ub);
        }
        for _ in 0..rng.random_range(1..=4) {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let sense = if rng.random_bool(0.5) { Sense::Le } else { Sense::Ge };
            let rhs = rng.random_range(-3.0..6.0);
            lp.add_row(row, sense, rhs);
        }
        MixedIntegerProgram::new(lp, (0..n_int).collect())
    }

    #[test]
    fn six_integers_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..25 {
            let mip = random_mip(&mut rng, 6, 2, 3);
            let sol = solve_mip(&mip, None, 0.0).unwrap();
            match enumerate(&mip) {
                Some(best) => {
                    assert_eq!(sol.status, MipStatus::Optimal, "case {case}");
                    assert!((sol.objective - best).abs() <= 1e-7 * (1.0 + best.abs()), "case {case}");
                    for &j in &mip.integer_vars {
                        assert_eq!(sol.primal[j], sol.primal[j].round());
                    }
                    assert!(mip.base.max_violation(&sol.primal) <= 1e-6);
                }
                None => assert_eq!(sol.status, MipStatus::Infeasible, "case {case}"),
            }
        }
    }

    #[test]
    fn eight_integers_domain_four_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for case in 0..4 {
            let mip = random_mip(&mut rng, 8, 1, 4);
            let sol = solve_mip(&mip, None, 0.0).unwrap();
            match enumerate(&mip) {
                Some(best) => assert!(
                    (sol.objective - best).abs() <= 1e-7 * (1.0 + best.abs()),
                    "case {case}"
                ),
                None => assert_eq!(sol.status, MipStatus::Infeasible),
            }
        }
    }

    #[test]
    fn deterministic_node_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mip = random_mip(&mut rng, 6, 2, 4);
        let a = solve_mip(&mip, None, 0.0).unwrap();
        let b = solve_mip(&mip, None, 0.0).unwrap();
        assert_eq!(a.nodes_explored, b.nodes_explored);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.primal, b.primal);
    }

    #[test]
    fn gap_tolerance_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let mip = random_mip(&mut rng, 6, 2, 4);
            let exact = solve_mip(&mip, None, 0.0).unwrap();
            let loose = solve_mip(&mip, None, 0.05).unwrap();
            if exact.status == MipStatus::Optimal {
                assert!(loose.objective - exact.objective <= 0.05 * loose.objective.abs() + 1e-9);
                assert!(loose.nodes_explored <= exact.nodes_explored);
                assert!(loose.best_bound <= exact.objective + 1e-9 * (1.0 + exact.objective.abs()));
            }
        }
    }

    #[test]
    fn zero_time_limit_reports_time_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut saw_limit = false;
        for _ in 0..10 {
            let mip = random_mip(&mut rng, 6, 2, 4);
            let sol = solve_mip(&mip, Some(0.0), 0.0).unwrap();
            let exact = solve_mip(&mip, None, 0.0).unwrap();
            if sol.status == MipStatus::TimeLimit {
                saw_limit = true;
                // Reported bound stays a valid lower bound.
                assert!(sol.best_bound <= exact.objective + 1e-9);
                if sol.has_incumbent() {
                    assert!(sol.best_bound <= sol.objective);
                }
            }
        }
        assert!(saw_limit);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn best_bound_never_exceeds_optimum(seed in proptest::prelude::any::<u64>(), gap in 0.0f64..0.2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mip = random_mip(&mut rng, 5, 2, 4);
            let exact = solve_mip(&mip, None, 0.0).unwrap();
            let loose = solve_mip(&mip, None, gap).unwrap();
            if exact.status == MipStatus::Optimal {
                proptest::prop_assert!(loose.best_bound <= exact.objective + 1e-9 * (1.0 + exact.objective.abs()));
                proptest::prop_assert!(exact.best_bound <= exact.objective);
                proptest::prop_assert!(loose.relative_gap() <= gap + 1e-9);
            }
        }
    }

    mod extensive_form {
        use super::*;
        use crate::linalg::Matrix;
        use crate::model::{ev_to_standard_form, generate_ev_instance, DemandShape, FirstStage, Scenario};

        #[test]
        fn recourse_free_instance_equals_first_stage_mip() {
            let mut lp = LinearProgram::new(vec![-3.0, -2.0]);
            lp.set_bounds(0, 0.0, 1.0).set_bounds(1, 0.0, 1.0);
            lp.add_row(vec![1.0, 1.0], Sense::Le, 1.0);
            let direct = solve_mip(&MixedIntegerProgram::new(lp.clone(), vec![0, 1]), None, 0.0).unwrap();
            let problem = TwoStageProblem {
                first_stage: FirstStage {
                    cost: lp.objective.clone(),
                    rows: lp.rows.clone(),
                    senses: lp.senses.clone(),
                    rhs: lp.rhs.clone(),
                    lower: lp.lower.clone(),
                    upper: lp.upper.clone(),
                    integer: vec![true, true],
                },
                scenarios: vec![Scenario {
                    w: Matrix::from_rows(&[vec![1.0]]),
                    senses: vec![Sense::Ge],
                    h: vec![0.0],
                    t: Matrix::zeros(1, 2),
                    q: vec![0.0],
                    probability: 1.0,
                    constant: 0.0,
                    recourse_lower_bound: Some(0.0),
                }],
            };
            let ef = solve_extensive_form(&problem, None, 0.0).unwrap();
            assert_eq!(ef.status, MipStatus::Optimal);
            assert_eq!(ef.objective, direct.objective);
            assert_eq!(ef.primal, direct.primal);
        }

        #[test]
        fn two_by_three_ev_matches_lattice_enumeration() {
            for seed in 0..2 {
                let inst = generate_ev_instance(seed, 2, 3).with_scenarios(seed + 50, 2, DemandShape::Normal);
                let problem = ev_to_standard_form(&inst);
                let ef = solve_extensive_form(&problem, None, 0.0).unwrap();
                assert_eq!(ef.status, MipStatus::Optimal);

                // Enumerate (y, z) with z_i <= M_i y_i, recourse by direct LP.
                let choices = |i: usize| {
                    let mut v = vec![(0.0, 0.0)];
                    v.extend((0..=inst.max_chargers[i]).map(|z| (1.0, f64::from(z))));
                    v
                };
                let mut best = f64::INFINITY;
                for (y0, z0) in choices(0) {
                    for (y1, z1) in choices(1) {
                        let x = [y0, y1, z0, z1];
                        best = best.min(problem.evaluate(&x).unwrap());
                    }
                }
                assert!(
                    (ef.objective - best).abs() <= 1e-7 * (1.0 + best.abs()),
                    "seed {seed}: ef {} enum {best}",
                    ef.objective
                );
                let at_x = problem.evaluate(&ef.primal).unwrap();
                assert!((at_x - ef.objective).abs() <= 1e-7 * (1.0 + best.abs()));
            }
        }
    }
}
