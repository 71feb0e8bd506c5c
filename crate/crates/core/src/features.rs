//! Policy inputs: 19 global features shared by every candidate cut and 5
//! local features per cut, concatenated into one vector per candidate.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::benders::{BendersState, Cut, GAP_EPS};
use crate::linalg::{dot, norm2};
use crate::model::TwoStageProblem;

pub const GLOBAL_DIM: usize = 19;
pub const LOCAL_DIM: usize = 5;
pub const STATE_DIM: usize = GLOBAL_DIM + LOCAL_DIM;

pub const FEATURE_NAMES: [&str; STATE_DIM] = [
    "t", "lb", "ub", "gap", "d_lb", "d_ub", "d_gap", "rho_gap", "rho_lb", "rho_ub", "v_mean",
    "v_max", "k_prev", "c_cum", "t_mp", "q_mean", "q_max", "q_min", "q_std", "v", "pi_norm",
    "intercept_abs", "coeff_norm", "nc",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Magnitudes through `sign(x) ln(1 + |x|)`, `t` and `C_cum` over `T_max`.
    #[default]
    SignedLog,
    Raw,
}

pub fn signed_log(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalFeatures {
    pub t: f64,
    pub lb: f64,
    pub ub: f64,
    pub gap: f64,
    pub d_lb: f64,
    pub d_ub: f64,
    pub d_gap: f64,
    pub rho_gap: f64,
    pub rho_lb: f64,
    pub rho_ub: f64,
    pub v_mean: f64,
    pub v_max: f64,
    pub k_prev: f64,
    pub c_cum: f64,
    pub t_mp: f64,
    pub q_mean: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub q_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutFeatures {
    pub violation: f64,
    pub dual_norm: f64,
    pub intercept_abs: f64,
    pub coeff_norm: f64,
    pub times_selected: f64,
}

/// `pi^T (h - T x) + kappa - theta^w`; positive when the cut is violated.
pub fn violation(cut: &Cut, x_hat: &[f64], theta_hat: &[f64]) -> f64 {
    cut.value_at(x_hat) - theta_hat[cut.scenario]
}

pub fn global_features(state: &BendersState, problem: &TwoStageProblem) -> GlobalFeatures {
    let n = state.history.len();
    let cur = state.history.last().expect("global features need a solved iteration");
    let probs: Vec<f64> = problem.scenarios.iter().map(|s| s.probability).collect();

    let (mut d_lb, mut d_ub, mut d_gap, mut rho_gap, mut rho_lb, mut rho_ub) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut k_prev = 0.0;
    if n >= 2 {
        let prev = &state.history[n - 2];
        d_lb = cur.lb - prev.lb;
        d_ub = prev.ub_raw - cur.ub_raw;
        d_gap = prev.gap - cur.gap;
        rho_gap = d_gap / (prev.gap + GAP_EPS);
        rho_lb = d_lb / (prev.lb.abs() + GAP_EPS);
        rho_ub = d_ub / (prev.ub_raw.abs() + GAP_EPS);
        k_prev = prev.cuts_added as f64;
    }

    let v: Vec<f64> = state
        .candidates
        .iter()
        .map(|c| violation(c, &state.x_hat, &state.theta_hat))
        .collect();
    let v_mean = dot(&probs, &v);
    let v_max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let q = &state.recourse;
    let q_mean = dot(&probs, q);
    let q_max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let q_min = q.iter().copied().fold(f64::INFINITY, f64::min);
    let q_var: f64 = probs.iter().zip(q).map(|(p, q)| p * (q - q_mean).powi(2)).sum();

    GlobalFeatures {
        t: state.t as f64,
        lb: cur.lb,
        ub: cur.ub_raw,
        gap: cur.gap,
        d_lb,
        d_ub,
        d_gap,
        rho_gap,
        rho_lb,
        rho_ub,
        v_mean,
        v_max,
        k_prev,
        c_cum: state.pool.len() as f64,
        t_mp: cur.master_time,
        q_mean,
        q_max,
        q_min,
        q_std: q_var.max(0.0).sqrt(),
    }
}

pub fn cut_features(state: &BendersState, cut: &Cut) -> CutFeatures {
    CutFeatures {
        violation: violation(cut, &state.x_hat, &state.theta_hat),
        dual_norm: norm2(&cut.dual),
        intercept_abs: cut.dual_rhs.abs(),
        coeff_norm: norm2(&cut.coeffs),
        times_selected: state.selection_counts[cut.scenario] as f64,
    }
}

impl GlobalFeatures {
    pub fn to_vec(&self, norm: Normalization, t_max: usize) -> Vec<f64> {
        let raw = [
            self.t,
            self.lb,
            self.ub,
            self.gap,
            self.d_lb,
            self.d_ub,
            self.d_gap,
            self.rho_gap,
            self.rho_lb,
            self.rho_ub,
            self.v_mean,
            self.v_max,
            self.k_prev,
            self.c_cum,
            self.t_mp,
            self.q_mean,
            self.q_max,
            self.q_min,
            self.q_std,
        ];
        if norm == Normalization::Raw {
            return raw.to_vec();
        }
        let scale = t_max.max(1) as f64;
        let mut out = raw.to_vec();
        out[0] = self.t / scale;
        out[13] = self.c_cum / scale;
        for k in [1, 2, 4, 5, 10, 11, 14, 15, 16, 17, 18] {
            out[k] = signed_log(raw[k]);
        }
        out
    }
}

impl CutFeatures {
    pub fn to_vec(&self, norm: Normalization) -> Vec<f64> {
        let raw = [
            self.violation,
            self.dual_norm,
            self.intercept_abs,
            self.coeff_norm,
            self.times_selected,
        ];
        match norm {
            Normalization::Raw => raw.to_vec(),
            Normalization::SignedLog => {
                let mut out: Vec<f64> = raw[..4].iter().map(|&x| signed_log(x)).collect();
                out.push(raw[4]);
                out
            }
        }
    }
}

/// One state vector per candidate cut of the latest iteration.
pub fn build_state(state: &BendersState, problem: &TwoStageProblem, norm: Normalization) -> Vec<Vec<f64>> {
    let global = global_features(state, problem).to_vec(norm, state.t_max);
    state
        .candidates
        .iter()
        .map(|cut| {
            let mut v = global.clone();
            v.extend(cut_features(state, cut).to_vec(norm));
            v
        })
        .collect()
}

pub fn write_feature_header<W: Write>(mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,scenario,{}", FEATURE_NAMES.join(","))
}

/// Appends one row per candidate for iteration `t`.
pub fn write_feature_rows<W: Write>(mut out: W, t: usize, states: &[Vec<f64>]) -> std::io::Result<()> {
    for (w, s) in states.iter().enumerate() {
        let cells: Vec<String> = s.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{t},{w},{}", cells.join(","))?;
    }
    Ok(())
}
