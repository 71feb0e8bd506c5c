use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Engine, VIOLATION_TOL};
use crate::features::build_state;
use crate::policy::{greedy_top_k, sample_without_replacement, softmax, ActionSample, Policy};

/// Which candidates to add after an iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// Add the candidate of each listed scenario, in order.
    Scenarios(Vec<usize>),
    /// Add one probability-weighted aggregate of all candidates.
    Aggregate,
}

pub enum CutSelector {
    /// Every violated candidate (multi-cut).
    SelectAll,
    /// One aggregated cut per iteration (single-cut).
    Aggregate,
    RandomK { k: usize, rng: ChaCha8Rng },
    PolicyStochastic {
        policy: Policy,
        k: usize,
        rng: ChaCha8Rng,
        /// Samples drawn so far, one per iteration.
        samples: Vec<ActionSample>,
    },
    PolicyGreedy { policy: Policy, k: usize },
}

impl CutSelector {
    pub fn random_k(k: usize, seed: u64) -> Self {
        Self::RandomK {
            k,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn policy_stochastic(policy: Policy, k: usize, seed: u64) -> Self {
        Self::PolicyStochastic {
            policy,
            k,
            rng: ChaCha8Rng::seed_from_u64(seed),
            samples: Vec::new(),
        }
    }

    pub fn policy_greedy(policy: Policy, k: usize) -> Self {
        Self::PolicyGreedy { policy, k }
    }

    pub fn select(&mut self, engine: &Engine<'_>) -> Selection {
        let state = engine.state();
        let n = state.candidates.len();
        match self {
            Self::SelectAll => Selection::Scenarios(
                (0..n).filter(|&w| engine.violation(w) > VIOLATION_TOL).collect(),
            ),
            Self::Aggregate => Selection::Aggregate,
            Self::RandomK { k, rng } => {
                let mut picked = sample(rng, n, (*k).min(n)).into_vec();
                picked.sort_unstable();
                Selection::Scenarios(picked)
            }
            Self::PolicyStochastic {
                policy,
                k,
                rng,
                samples,
            } => {
                let states = build_state(state, engine.problem(), policy.normalization);
                let probs = softmax(&policy.net.forward(&states));
                let s = sample_without_replacement(&probs, *k, rng);
                let picked = s.indices.clone();
                samples.push(s);
                Selection::Scenarios(picked)
            }
            Self::PolicyGreedy { policy, k } => {
                let states = build_state(state, engine.problem(), policy.normalization);
                Selection::Scenarios(greedy_top_k(&policy.net.forward(&states), *k))
            }
        }
    }
}
