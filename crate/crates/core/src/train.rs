//! REINFORCE training of the cut-selection policy.
//!
//! Every episode is one Benders run driven by stochastic selection; after it
//! finishes the policy takes one Adam ascent step on `sum_t G_t log P(A_t|s_t)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::benders::{BendersConfig, BendersError, Engine, Selection, Termination, TimingMode};
use crate::features::build_state;
use crate::lp::LpError;
use crate::model::{ModelError, TwoStageProblem};
use crate::policy::{
    logprob_gradient, sample_without_replacement, softmax, ActionSample, Adam, Mlp, Policy, WeightedStep,
    DEFAULT_HIDDEN,
};

/// Gaps are floored here before taking logarithms.
pub const GAP_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Benders(#[from] BendersError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl TrainError {
    fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::Benders(BendersError::Lp(LpError::NumericalFailure { .. }))
                | TrainError::Benders(BendersError::Model(ModelError::Lp(LpError::NumericalFailure { .. })))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub t_ref: f64,
    pub gamma: f64,
    pub timing: TimingMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.001,
            lambda: 0.001,
            t_ref: 0.1,
            gamma: 0.99,
            timing: TimingMode::WallClock,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TrainError::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.t_ref > 0.0) {
            return Err(TrainError::Config(format!("t_ref must be positive, got {}", self.t_ref)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub t_max: usize,
    pub episodes: usize,
    pub learning_rate: f64,
    pub eps_tol: f64,
    pub seed: u64,
    pub hidden: [usize; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 5,
            t_max: 500,
            episodes: 200,
            learning_rate: 1e-3,
            eps_tol: 0.01,
            seed: 0,
            hidden: [DEFAULT_HIDDEN; 2],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.k == 0 {
            return Err(TrainError::Config("k must be at least 1".into()));
        }
        if self.episodes == 0 {
            return Err(TrainError::Config("episodes must be at least 1".into()));
        }
        if self.t_max == 0 {
            return Err(TrainError::Config("t_max must be at least 1".into()));
        }
        Ok(())
    }

    pub fn benders(&self, timing: TimingMode) -> BendersConfig {
        BendersConfig {
            eps_tol: self.eps_tol,
            t_max: self.t_max,
            timing,
            ..BendersConfig::default()
        }
    }
}

/// `alpha (log gap_prev - log gap_now) - beta master_time / t_ref - lambda`.
pub fn step_reward(gap_prev: f64, gap_now: f64, master_time: f64, cfg: &RewardConfig) -> f64 {
    let f = gap_prev.max(GAP_FLOOR).ln() - gap_now.max(GAP_FLOOR).ln();
    cfg.alpha * f + cfg.beta * (-master_time / cfg.t_ref) - cfg.lambda
}

/// `G_t = r_t + gamma G_{t+1}`, with every reward counted.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// An environment in which the policy picks `k` of the current candidates.
pub trait SelectionEnv {
    /// Starts an episode and returns the first candidate states.
    fn reset(&mut self) -> Result<Vec<Vec<f64>>, TrainError>;
    /// Applies an ordered selection; returns the reward and the next states,
    /// or `None` when the episode is over.
    fn step(&mut self, action: &[usize]) -> Result<(f64, Option<Vec<Vec<f64>>>), TrainError>;
    /// Gap after the latest step, if the environment has one.
    fn gap(&self) -> f64 {
        0.0
    }
    /// Master solve time of the latest step.
    fn master_time(&self) -> f64 {
        0.0
    }
    /// Clock reading for the episode so far.
    fn elapsed(&self) -> f64 {
        0.0
    }
    fn termination(&self) -> Option<Termination> {
        None
    }
}

/// Benders episodes on one problem. The reward of step `t` follows the
/// training loop literally: it uses `Gap_{t-1}`, `Gap_t` and the master time
/// of iteration `t` (with `F_1 = 0`).
pub struct BendersEnv<'p> {
    problem: &'p TwoStageProblem,
    cfg: BendersConfig,
    reward: RewardConfig,
    policy_norm: crate::features::Normalization,
    engine: Option<Engine<'p>>,
    prev_gap: Option<f64>,
}

impl<'p> BendersEnv<'p> {
    pub fn new(problem: &'p TwoStageProblem, cfg: BendersConfig, reward: RewardConfig, policy: &Policy) -> Self {
        Self {
            problem,
            cfg,
            reward,
            policy_norm: policy.normalization,
            engine: None,
            prev_gap: None,
        }
    }

    pub fn engine(&self) -> Option<&Engine<'p>> {
        self.engine.as_ref()
    }

    pub fn into_engine(self) -> Option<Engine<'p>> {
        self.engine
    }

    fn states(&self) -> Vec<Vec<f64>> {
        let e = self.engine.as_ref().expect("episode started");
        build_state(e.state(), self.problem, self.policy_norm)
    }
}

impl SelectionEnv for BendersEnv<'_> {
    fn reset(&mut self) -> Result<Vec<Vec<f64>>, TrainError> {
        let mut engine = Engine::new(self.problem, self.cfg)?;
        engine.iterate()?;
        self.engine = Some(engine);
        self.prev_gap = None;
        Ok(self.states())
    }

    fn step(&mut self, action: &[usize]) -> Result<(f64, Option<Vec<Vec<f64>>>), TrainError> {
        let engine = self.engine.as_mut().expect("reset before step");
        let gap = engine.state().gap;
        let master_time = engine.state().last().map_or(0.0, |h| h.master_time);
        let reward = step_reward(self.prev_gap.unwrap_or(gap), gap, master_time, &self.reward);
        self.prev_gap = Some(gap);
        engine.apply(&Selection::Scenarios(action.to_vec()));
        if engine.termination().is_some() {
            return Ok((reward, None));
        }
        engine.iterate()?;
        Ok((reward, Some(self.states())))
    }

    fn gap(&self) -> f64 {
        self.engine.as_ref().map_or(f64::INFINITY, |e| e.state().gap)
    }

    fn master_time(&self) -> f64 {
        self.engine
            .as_ref()
            .and_then(|e| e.state().last())
            .map_or(0.0, |h| h.master_time)
    }

    fn elapsed(&self) -> f64 {
        self.engine.as_ref().map_or(0.0, |e| e.elapsed())
    }

    fn termination(&self) -> Option<Termination> {
        self.engine.as_ref().and_then(|e| e.termination())
    }
}

/// One-step environment with fixed candidate states; picking `favored`
/// first pays 1, anything else pays 0.
pub struct BanditEnv {
    pub states: Vec<Vec<f64>>,
    pub favored: usize,
}

impl BanditEnv {
    /// `n` candidates whose feature vectors differ only in the last entry.
    pub fn new(n: usize, favored: usize, dim: usize) -> Self {
        let states = (0..n)
            .map(|i| {
                let mut s = vec![0.5; dim];
                s[dim - 1] = i as f64;
                s
            })
            .collect();
        Self { states, favored }
    }
}

impl SelectionEnv for BanditEnv {
    fn reset(&mut self) -> Result<Vec<Vec<f64>>, TrainError> {
        Ok(self.states.clone())
    }

    fn step(&mut self, action: &[usize]) -> Result<(f64, Option<Vec<Vec<f64>>>), TrainError> {
        let reward = if action.first() == Some(&self.favored) { 1.0 } else { 0.0 };
        Ok((reward, None))
    }
}

/// Per-step record of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub states: Vec<Vec<f64>>,
    pub action: ActionSample,
    pub reward: f64,
    pub gap: f64,
    pub master_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
    pub returns: Vec<f64>,
    pub termination: Option<Termination>,
    pub final_gap: f64,
    pub elapsed: f64,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Rolls out one episode with stochastic selection of `k` candidates.
pub fn run_env_episode<E: SelectionEnv + ?Sized>(
    env: &mut E,
    policy: &Policy,
    k: usize,
    gamma: f64,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeTrace, TrainError> {
    let mut steps = Vec::new();
    let mut states = env.reset()?;
    loop {
        let gap = env.gap();
        let master_time = env.master_time();
        let probs = softmax(&policy.net.forward(&states));
        let action = sample_without_replacement(&probs, k, rng);
        let (reward, next) = env.step(&action.indices)?;
        steps.push(StepRecord {
            states,
            action,
            reward,
            gap,
            master_time,
        });
        match next {
            Some(s) if steps.len() < max_steps => states = s,
            _ => break,
        }
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    Ok(EpisodeTrace {
        returns: returns_to_go(&rewards, gamma),
        steps,
        termination: env.termination(),
        final_gap: env.gap(),
        elapsed: env.elapsed(),
    })
}

/// One Benders episode on `problem` with stochastic selection.
pub fn run_episode(
    problem: &TwoStageProblem,
    policy: &Policy,
    reward: &RewardConfig,
    tcfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeTrace, TrainError> {
    let mut env = BendersEnv::new(problem, tcfg.benders(reward.timing), *reward, policy);
    run_env_episode(&mut env, policy, tcfg.k, reward.gamma, tcfg.t_max, rng)
}

/// Gradient of `sum_t G_t log P(A_t|s_t)` for a finished episode.
pub fn episode_gradient(net: &Mlp, trace: &EpisodeTrace) -> Vec<f64> {
    let steps: Vec<WeightedStep> = trace
        .steps
        .iter()
        .zip(&trace.returns)
        .map(|(s, &g)| WeightedStep {
            states: &s.states,
            indices: &s.action.indices,
            weight: g,
        })
        .collect();
    logprob_gradient(net, &steps)
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub total_reward: f64,
    pub steps: usize,
    pub final_gap: f64,
    pub elapsed_time: f64,
}

pub const CURVE_HEADER: &str = "episode,total_reward,steps,final_gap,elapsed_time";

pub fn write_curve_csv<W: Write>(mut out: W, curve: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for c in curve {
        writeln!(
            out,
            "{},{},{},{},{}",
            c.episode, c.total_reward, c.steps, c.final_gap, c.elapsed_time
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub policy: Policy,
    pub optimizer: Adam,
    pub curve: Vec<CurvePoint>,
    /// Episodes dropped after a numerical failure.
    pub discarded: usize,
}

/// Trains from a fresh policy seeded by `tcfg.seed` on a single problem.
pub fn train(problem: &TwoStageProblem, tcfg: &TrainConfig, reward: &RewardConfig) -> Result<TrainResult, TrainError> {
    train_with(&[problem], tcfg, reward, |_, _, _| {})
}

/// Trains on `problems` in round-robin order, calling `on_episode` after every
/// update with the episode number (1-based).
pub fn train_with<F>(
    problems: &[&TwoStageProblem],
    tcfg: &TrainConfig,
    reward: &RewardConfig,
    mut on_episode: F,
) -> Result<TrainResult, TrainError>
where
    F: FnMut(usize, &Policy, &Adam),
{
    tcfg.validate()?;
    reward.validate()?;
    if problems.is_empty() {
        return Err(TrainError::Config("no training problem given".into()));
    }
    let policy = Policy {
        net: Mlp::init(crate::features::STATE_DIM, tcfg.hidden, tcfg.seed),
        normalization: crate::features::Normalization::SignedLog,
    };
    let mut envs: Vec<BendersEnv> = problems
        .iter()
        .map(|p| BendersEnv::new(p, tcfg.benders(reward.timing), *reward, &policy))
        .collect();
    let mut refs: Vec<&mut dyn SelectionEnv> = envs.iter_mut().map(|e| e as &mut dyn SelectionEnv).collect();
    train_envs(&mut refs, policy, tcfg, reward.gamma, &mut on_episode)
}

/// REINFORCE over arbitrary environments.
pub fn train_envs(
    envs: &mut [&mut dyn SelectionEnv],
    mut policy: Policy,
    tcfg: &TrainConfig,
    gamma: f64,
    on_episode: &mut dyn FnMut(usize, &Policy, &Adam),
) -> Result<TrainResult, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(policy.net.params.len(), tcfg.learning_rate);
    let mut curve = Vec::with_capacity(tcfg.episodes);
    let mut discarded = 0;
    for episode in 1..=tcfg.episodes {
        let env = &mut *envs[(episode - 1) % envs.len()];
        let trace = match run_env_episode(env, &policy, tcfg.k, gamma, tcfg.t_max, &mut rng) {
            Ok(t) => t,
            Err(e) if e.is_numerical() => {
                log::warn!("episode {episode} discarded: {e}");
                discarded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let grad = episode_gradient(&policy.net, &trace);
        adam.ascend(&mut policy.net.params, &grad);
        let point = CurvePoint {
            episode,
            total_reward: trace.total_reward(),
            steps: trace.steps.len(),
            final_gap: trace.final_gap,
            elapsed_time: trace.elapsed,
        };
        log::debug!(
            "episode {episode}: reward {:.5} steps {} gap {:.3e}",
            point.total_reward,
            point.steps,
            point.final_gap
        );
        curve.push(point);
        on_episode(episode, &policy, &adam);
    }
    Ok(TrainResult {
        policy,
        optimizer: adam,
        curve,
        discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ev_to_standard_form, generate_ev_instance, DemandShape};
    use crate::policy::logits_log_prob;
    use crate::benders::{run_benders, CutSelector};
    use proptest::prelude::*;

    fn rcfg() -> RewardConfig {
        RewardConfig {
            timing: TimingMode::proxy(),
            ..RewardConfig::default()
        }
    }

    fn small_problem(seed: u64) -> TwoStageProblem {
        let inst = generate_ev_instance(seed, 2, 3).with_scenarios(seed + 7, 5, DemandShape::Normal);
        ev_to_standard_form(&inst)
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let r = step_reward(0.2, 0.1, cfg.t_ref, &cfg);
        assert!((r - (0.01 * 2f64.ln() - 0.001 - 0.001)).abs() < 1e-15);
        assert!((r - 0.0049315).abs() < 1e-7);
        assert_eq!(step_reward(0.3, 0.3, 0.0, &cfg), -cfg.lambda);
        assert!(step_reward(0.01, 0.1, 0.0, &cfg) < 0.0);
        assert!(step_reward(0.5, 0.0, 0.0, &cfg).is_finite());
    }

    #[test]
    fn returns_examples() {
        assert_eq!(returns_to_go(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
        assert_eq!(returns_to_go(&[1.0, 2.0, 3.0], 1.0), vec![6.0, 5.0, 3.0]);
        assert_eq!(returns_to_go(&[-0.25], 0.9), vec![-0.25]);
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig { gamma: 0.0, ..rcfg() }.validate().is_err());
        assert!(RewardConfig { t_ref: 0.0, ..rcfg() }.validate().is_err());
        assert!(TrainConfig { k: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { episodes: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn loose_tolerance_gives_one_step_episode() {
        let p = small_problem(1);
        let tcfg = TrainConfig { eps_tol: 1.0, k: 2, ..TrainConfig::default() };
        let mut e = Engine::new(&p, tcfg.benders(TimingMode::proxy())).unwrap();
        e.iterate().unwrap();
        if e.state().gap < 1.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let trace = run_episode(&p, &Policy::new(0), &rcfg(), &tcfg, &mut rng).unwrap();
            assert_eq!(trace.steps.len(), 1);
        }
    }

    #[test]
    fn episodes_are_deterministic_and_log_probs_replay() {
        let p = small_problem(2);
        let tcfg = TrainConfig { k: 2, t_max: 200, ..TrainConfig::default() };
        let policy = Policy::new(3);
        let a = run_episode(&p, &policy, &rcfg(), &tcfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = run_episode(&p, &policy, &rcfg(), &tcfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.steps.len() <= 200);
        for s in &a.steps {
            let replay = logits_log_prob(&policy.net.forward(&s.states), &s.action.indices);
            assert!((replay - s.action.log_prob).abs() <= 1e-9);
        }
    }

    #[test]
    fn untrained_policy_still_converges_like_multi_cut() {
        let p = small_problem(4);
        let tcfg = TrainConfig { k: 2, t_max: 200, ..TrainConfig::default() };
        let trace = run_episode(&p, &Policy::new(1), &rcfg(), &tcfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(trace.termination, Some(Termination::Converged));
        assert!(trace.final_gap < tcfg.eps_tol);
        let multi = run_benders(&p, &mut CutSelector::SelectAll, &tcfg.benders(TimingMode::proxy())).unwrap();
        assert!(multi.outcome.gap < tcfg.eps_tol);
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let p = small_problem(5);
        let tcfg = TrainConfig { k: 2, episodes: 3, learning_rate: 0.0, t_max: 100, seed: 4, ..TrainConfig::default() };
        let out = train(&p, &tcfg, &rcfg()).unwrap();
        assert_eq!(out.policy.net, Mlp::init(crate::features::STATE_DIM, tcfg.hidden, 4));
        assert_eq!(out.curve.len(), 3);
    }

    #[test]
    fn single_episode_applies_exactly_one_update() {
        let p = small_problem(6);
        let tcfg = TrainConfig { k: 2, episodes: 1, t_max: 100, seed: 2, ..TrainConfig::default() };
        let mut calls = 0;
        let out = train_with(&[&p], &tcfg, &rcfg(), |_, _, _| calls += 1).unwrap();
        assert_eq!(calls, 1);
        assert_eq!(out.optimizer.step, 1);
    }

    #[test]
    fn update_is_adam_applied_to_the_analytic_gradient() {
        let p = small_problem(7);
        let tcfg = TrainConfig { k: 2, episodes: 1, t_max: 100, seed: 5, ..TrainConfig::default() };
        let out = train(&p, &tcfg, &rcfg()).unwrap();
        // Replay the same episode and step by hand.
        let start = Policy {
            net: Mlp::init(crate::features::STATE_DIM, tcfg.hidden, 5),
            normalization: crate::features::Normalization::SignedLog,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.set_stream(1);
        let trace = run_episode(&p, &start, &rcfg(), &tcfg, &mut rng).unwrap();
        let grad = episode_gradient(&start.net, &trace);
        let mut params = start.net.params.clone();
        Adam::new(params.len(), tcfg.learning_rate).ascend(&mut params, &grad);
        assert_eq!(params, out.policy.net.params);
    }

    #[test]
    fn bandit_learns_the_favoured_arm() {
        let mut env = BanditEnv::new(3, 2, crate::features::STATE_DIM);
        let tcfg = TrainConfig { k: 1, episodes: 500, seed: 11, ..TrainConfig::default() };
        let policy = Policy::new(11);
        let out = train_envs(&mut [&mut env], policy, &tcfg, 0.99, &mut |_, _, _| {}).unwrap();
        let probs = softmax(&out.policy.net.forward(&env.states));
        assert!(probs[2] > 0.9, "{probs:?}");
    }

    #[test]
    fn proxy_training_is_reproducible() {
        let p = small_problem(8);
        let tcfg = TrainConfig { k: 2, episodes: 3, t_max: 100, seed: 6, ..TrainConfig::default() };
        let a = train(&p, &tcfg, &rcfg()).unwrap();
        let b = train(&p, &tcfg, &rcfg()).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.curve, b.curve);
        let mut ca = Vec::new();
        write_curve_csv(&mut ca, &a.curve).unwrap();
        let text = String::from_utf8(ca).unwrap();
        assert!(text.starts_with(CURVE_HEADER));
        assert_eq!(text.lines().count(), 4);
    }

    proptest! {
        #[test]
        fn returns_satisfy_the_recursion(
            rewards in proptest::collection::vec(-10.0f64..10.0, 1..40),
            gamma in 0.01f64..=1.0,
        ) {
            let g = returns_to_go(&rewards, gamma);
            let n = rewards.len();
            prop_assert_eq!(g[n - 1], rewards[n - 1]);
            for t in 0..n - 1 {
                prop_assert_eq!(g[t], rewards[t] + gamma * g[t + 1]);
            }
        }

        #[test]
        fn returns_are_linear(
            pair in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20),
            gamma in 0.01f64..=1.0,
            c in -3.0f64..3.0,
        ) {
            let a: Vec<f64> = pair.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pair.iter().map(|p| p.1).collect();
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + c * y).collect();
            let (ga, gb, gm) = (returns_to_go(&a, gamma), returns_to_go(&b, gamma), returns_to_go(&mix, gamma));
            for t in 0..a.len() {
                prop_assert!((gm[t] - (ga[t] + c * gb[t])).abs() <= 1e-9 * (1.0 + gm[t].abs()));
            }
        }
    }
}
