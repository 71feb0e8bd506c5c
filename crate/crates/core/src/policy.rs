//! Cut-selection policy: a shared two-hidden-layer ReLU MLP scores every
//! candidate, a softmax turns scores into probabilities, and `K` cuts are drawn
//! sequentially without replacement.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Normalization, STATE_DIM};

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
}

/// Weights of `z = W3 relu(W2 relu(W1 s + b1) + b2) + b3`, stored flat in the
/// order `W1, b1, W2, b2, W3, b3` with row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub params: Vec<f64>,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

/// Per-candidate activations kept for the backward pass.
struct Cache {
    pre1: Vec<f64>,
    h1: Vec<f64>,
    pre2: Vec<f64>,
    h2: Vec<f64>,
    z: f64,
}

impl Mlp {
    pub fn num_params(input_dim: usize, hidden: [usize; 2]) -> usize {
        let [h1, h2] = hidden;
        h1 * input_dim + h1 + h2 * h1 + h2 + h2 + 1
    }

    pub fn zeros(input_dim: usize, hidden: [usize; 2]) -> Self {
        Self {
            input_dim,
            hidden,
            params: vec![0.0; Self::num_params(input_dim, hidden)],
        }
    }

    /// Every weight and bias uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(input_dim: usize, hidden: [usize; 2], seed: u64) -> Self {
        let mut net = Self::zeros(input_dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = net.offsets();
        let fan_in = [
            (o.w1, o.b1, input_dim),
            (o.b1, o.w2, input_dim),
            (o.w2, o.b2, hidden[0]),
            (o.b2, o.w3, hidden[0]),
            (o.w3, o.b3, hidden[1]),
            (o.b3, o.end, hidden[1]),
        ];
        for (start, stop, fan) in fan_in {
            let bound = (1.0 / fan as f64).sqrt();
            for p in &mut net.params[start..stop] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    fn offsets(&self) -> Offsets {
        let [h1, h2] = self.hidden;
        let w1 = 0;
        let b1 = w1 + h1 * self.input_dim;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + h2;
        Offsets {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            end: b3 + 1,
        }
    }

    fn forward_cached(&self, s: &[f64]) -> Cache {
        assert_eq!(s.len(), self.input_dim, "state width mismatch");
        let [h1n, h2n] = self.hidden;
        let o = self.offsets();
        let p = &self.params;
        let mut pre1 = p[o.b1..o.w2].to_vec();
        for (r, out) in pre1.iter_mut().enumerate() {
            let row = &p[o.w1 + r * self.input_dim..o.w1 + (r + 1) * self.input_dim];
            *out += row.iter().zip(s).map(|(w, x)| w * x).sum::<f64>();
        }
        let h1: Vec<f64> = pre1.iter().map(|&v| v.max(0.0)).collect();
        let mut pre2 = p[o.b2..o.w3].to_vec();
        for (r, out) in pre2.iter_mut().enumerate() {
            let row = &p[o.w2 + r * h1n..o.w2 + (r + 1) * h1n];
            *out += row.iter().zip(&h1).map(|(w, x)| w * x).sum::<f64>();
        }
        let h2: Vec<f64> = pre2.iter().map(|&v| v.max(0.0)).collect();
        let z = p[o.b3] + p[o.w3..o.w3 + h2n].iter().zip(&h2).map(|(w, x)| w * x).sum::<f64>();
        Cache { pre1, h1, pre2, h2, z }
    }

    pub fn logit(&self, s: &[f64]) -> f64 {
        self.forward_cached(s).z
    }

    /// One logit per candidate state.
    pub fn forward(&self, states: &[Vec<f64>]) -> Vec<f64> {
        states.iter().map(|s| self.logit(s)).collect()
    }

    /// Adds `dz * d z / d params` for input `s` into `grad`.
    fn backward(&self, s: &[f64], cache: &Cache, dz: f64, grad: &mut [f64]) {
        let [h1n, h2n] = self.hidden;
        let o = self.offsets();
        let p = &self.params;
        grad[o.b3] += dz;
        let mut dpre2 = vec![0.0; h2n];
        for k in 0..h2n {
            grad[o.w3 + k] += dz * cache.h2[k];
            if cache.pre2[k] > 0.0 {
                dpre2[k] = dz * p[o.w3 + k];
            }
        }
        let mut dh1 = vec![0.0; h1n];
        for (r, &d) in dpre2.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[o.b2 + r] += d;
            let base = o.w2 + r * h1n;
            for c in 0..h1n {
                grad[base + c] += d * cache.h1[c];
                dh1[c] += d * p[base + c];
            }
        }
        for r in 0..h1n {
            if cache.pre1[r] <= 0.0 || dh1[r] == 0.0 {
                continue;
            }
            let d = dh1[r];
            grad[o.b1 + r] += d;
            let base = o.w1 + r * self.input_dim;
            for (g, x) in grad[base..base + self.input_dim].iter_mut().zip(s) {
                *g += d * x;
            }
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of an empty vector");
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// An ordered draw of distinct candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    pub indices: Vec<usize>,
    /// `sum_i log pi(a_i) - log(1 - sum_{j<i} pi(a_j))`
    pub log_prob: f64,
    /// Renormalized probability of each pick at the time it was made.
    pub step_probs: Vec<f64>,
}

/// Renormalized probability of each pick, `pi(a_i) / (1 - sum_{j<i} pi(a_j))`.
/// The denominator is summed over the remaining indices, which equals
/// `1 - sum_{j<i} pi(a_j)` but cannot cancel to zero.
pub fn step_probabilities(probs: &[f64], indices: &[usize]) -> Vec<f64> {
    let mut remaining = vec![true; probs.len()];
    indices
        .iter()
        .map(|&a| {
            let mass: f64 = probs.iter().zip(&remaining).filter(|(_, r)| **r).map(|(p, _)| p).sum();
            remaining[a] = false;
            probs[a] / mass
        })
        .collect()
}

/// Joint log-probability of picking `indices` in order without replacement.
pub fn sequence_log_prob(probs: &[f64], indices: &[usize]) -> f64 {
    step_probabilities(probs, indices).iter().map(|q| q.ln()).sum()
}

/// Draws `k` distinct indices sequentially, renormalizing over the remaining
/// ones after each pick. With `k >= probs.len()` every index is returned in
/// descending probability order (ties by index).
pub fn sample_without_replacement<R: Rng + ?Sized>(probs: &[f64], k: usize, rng: &mut R) -> ActionSample {
    let n = probs.len();
    let indices: Vec<usize> = if k >= n {
        let mut all: Vec<usize> = (0..n).collect();
        all.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        all
    } else {
        let mut taken = vec![false; n];
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let mass: f64 = (0..n).filter(|&j| !taken[j]).map(|j| probs[j]).sum();
            let u = rng.random::<f64>() * mass;
            let mut acc = 0.0;
            let mut pick = None;
            for j in (0..n).filter(|&j| !taken[j]) {
                acc += probs[j];
                pick = Some(j);
                if u < acc {
                    break;
                }
            }
            let j = pick.expect("at least one index remains");
            taken[j] = true;
            out.push(j);
        }
        out
    };
    let step_probs = step_probabilities(probs, &indices);
    ActionSample {
        log_prob: step_probs.iter().map(|q| q.ln()).sum(),
        indices,
        step_probs,
    }
}

/// Indices of the `k` largest logits, ties broken by lowest index.
pub fn greedy_top_k(logits: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// `d/dz log P(indices)` for logits `z`, via the masked-softmax form
/// `log P = sum_i z_{a_i} - logsumexp_{remaining}(z)`.
pub fn logprob_logit_gradient(logits: &[f64], indices: &[usize]) -> Vec<f64> {
    let n = logits.len();
    let mut grad = vec![0.0; n];
    let mut remaining = vec![true; n];
    for &a in indices {
        let m = (0..n)
            .filter(|&j| remaining[j])
            .map(|j| logits[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = (0..n)
            .map(|j| if remaining[j] { (logits[j] - m).exp() } else { 0.0 })
            .collect();
        let s: f64 = e.iter().sum();
        for j in 0..n {
            grad[j] -= e[j] / s;
        }
        grad[a] += 1.0;
        remaining[a] = false;
    }
    grad
}

/// Joint log-probability from logits in the masked-softmax form.
pub fn logits_log_prob(logits: &[f64], indices: &[usize]) -> f64 {
    let n = logits.len();
    let mut remaining = vec![true; n];
    let mut lp = 0.0;
    for &a in indices {
        let m = (0..n)
            .filter(|&j| remaining[j])
            .map(|j| logits[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = (0..n).filter(|&j| remaining[j]).map(|j| (logits[j] - m).exp()).sum();
        lp += logits[a] - m - s.ln();
        remaining[a] = false;
    }
    lp
}

/// One decision: candidate states, the chosen ordered indices, and the weight
/// `G_t` multiplying its log-probability.
#[derive(Debug, Clone, Copy)]
pub struct WeightedStep<'a> {
    pub states: &'a [Vec<f64>],
    pub indices: &'a [usize],
    pub weight: f64,
}

/// Gradient of `sum_t G_t log P(A_t | s_t)` with respect to the flat parameters.
pub fn logprob_gradient(net: &Mlp, steps: &[WeightedStep<'_>]) -> Vec<f64> {
    let mut grad = vec![0.0; net.params.len()];
    for step in steps {
        if step.weight == 0.0 {
            continue;
        }
        let caches: Vec<Cache> = step.states.iter().map(|s| net.forward_cached(s)).collect();
        let logits: Vec<f64> = caches.iter().map(|c| c.z).collect();
        let dz = logprob_logit_gradient(&logits, step.indices);
        for ((s, cache), d) in step.states.iter().zip(&caches).zip(dz) {
            if d != 0.0 {
                net.backward(s, cache, step.weight * d, &mut grad);
            }
        }
    }
    grad
}

/// Adam, used for gradient ascent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// `params += lr * m_hat / (sqrt(v_hat) + eps)`
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] += self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// A network together with the feature normalization it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub net: Mlp,
    pub normalization: Normalization,
}

impl Policy {
    pub fn new(seed: u64) -> Self {
        Self {
            net: Mlp::init(STATE_DIM, [DEFAULT_HIDDEN; 2], seed),
            normalization: Normalization::SignedLog,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// On-disk policy checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub normalization: Normalization,
    pub layers: Vec<LayerShape>,
    pub params: Vec<f64>,
    pub episodes: usize,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "rlbd-policy";

    pub fn new(policy: &Policy, episodes: usize, optimizer: Option<&Adam>) -> Self {
        let [h1, h2] = policy.net.hidden;
        let d = policy.net.input_dim;
        let shape = |name: &str, rows, cols| LayerShape {
            name: name.into(),
            rows,
            cols,
        };
        Self {
            format: Self::FORMAT.into(),
            version: 1,
            input_dim: d,
            hidden: policy.net.hidden,
            normalization: policy.normalization,
            layers: vec![
                shape("w1", h1, d),
                shape("b1", h1, 1),
                shape("w2", h2, h1),
                shape("b2", h2, 1),
                shape("w3", 1, h2),
                shape("b3", 1, 1),
            ],
            params: policy.net.params.clone(),
            episodes,
            optimizer: optimizer.cloned(),
        }
    }

    pub fn policy(&self) -> Result<Policy, PolicyError> {
        if self.format != Self::FORMAT {
            return Err(PolicyError::Invalid(format!("unexpected format '{}'", self.format)));
        }
        let expected = Mlp::num_params(self.input_dim, self.hidden);
        if self.params.len() != expected {
            return Err(PolicyError::Invalid(format!(
                "expected {expected} parameters, found {}",
                self.params.len()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(PolicyError::Invalid("non-finite parameter".into()));
        }
        Ok(Policy {
            net: Mlp {
                input_dim: self.input_dim,
                hidden: self.hidden,
                params: self.params.clone(),
            },
            normalization: self.normalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Self = serde_json::from_str(&text)?;
        ckpt.policy()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_states(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    /// Straight-line re-evaluation with explicit matrices.
    fn reference_logit(net: &Mlp, s: &[f64]) -> f64 {
        let [h1, h2] = net.hidden;
        let d = net.input_dim;
        let p = &net.params;
        let w1 = |r: usize, c: usize| p[r * d + c];
        let b1 = |r: usize| p[h1 * d + r];
        let off2 = h1 * d + h1;
        let w2 = |r: usize, c: usize| p[off2 + r * h1 + c];
        let b2 = |r: usize| p[off2 + h2 * h1 + r];
        let off3 = off2 + h2 * h1 + h2;
        let a1: Vec<f64> = (0..h1)
            .map(|r| (b1(r) + (0..d).map(|c| w1(r, c) * s[c]).sum::<f64>()).max(0.0))
            .collect();
        let a2: Vec<f64> = (0..h2)
            .map(|r| (b2(r) + (0..h1).map(|c| w2(r, c) * a1[c]).sum::<f64>()).max(0.0))
            .collect();
        p[off3 + h2] + (0..h2).map(|c| p[off3 + c] * a2[c]).sum::<f64>()
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let net = Mlp::zeros(STATE_DIM, [64, 64]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_states(&mut rng, 3, STATE_DIM);
        assert_eq!(net.forward(&s), vec![0.0; 3]);
    }

    #[test]
    fn forward_matches_reference_and_shares_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..5 {
            let net = Mlp::init(STATE_DIM, [64, 64], seed);
            let mut s = random_states(&mut rng, 4, STATE_DIM);
            s[3] = s[1].clone();
            let z = net.forward(&s);
            for (zi, si) in z.iter().zip(&s) {
                let r = reference_logit(&net, si);
                assert!((zi - r).abs() <= 1e-12 * (1.0 + r.abs()));
            }
            assert_eq!(z[1], z[3]);
        }
    }

    #[test]
    fn init_is_bounded_by_fan_in() {
        let net = Mlp::init(24, [64, 64], 9);
        let b1 = (1.0f64 / 24.0).sqrt();
        assert!(net.params[..64 * 24 + 64].iter().all(|p| p.abs() <= b1));
        let b2 = (1.0f64 / 64.0).sqrt();
        assert!(net.params[64 * 24 + 64..].iter().all(|p| p.abs() <= b2));
        assert_eq!(net, Mlp::init(24, [64, 64], 9));
    }

    #[test]
    fn softmax_examples() {
        assert!(softmax(&[0.0, 0.0, 0.0]).iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[100.3, 98.8, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let extreme = softmax(&[700.0, -700.0, 0.0]);
        assert!(extreme.iter().all(|p| p.is_finite()));
        assert!((extreme.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn joint_probability_formula() {
        let p = [0.5, 0.3, 0.2];
        assert!((sequence_log_prob(&p, &[0, 1]).exp() - 0.3).abs() < 1e-15);
        assert!((sequence_log_prob(&p, &[1, 0]).exp() - 0.3 * (0.5 / 0.7)).abs() < 1e-15);
    }

    #[test]
    fn sampling_law_matches_analytic_pairs() {
        let probs = [0.4, 0.3, 0.2, 0.1];
        let mut counts = [[0usize; 4]; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        for _ in 0..n {
            let s = sample_without_replacement(&probs, 2, &mut rng);
            counts[s.indices[0]][s.indices[1]] += 1;
        }
        for a in 0..4 {
            for b in 0..4 {
                if a == b {
                    assert_eq!(counts[a][b], 0);
                    continue;
                }
                // Independent enumeration of the ordered-pair law.
                let analytic = probs[a] * probs[b] / (1.0 - probs[a]);
                let freq = counts[a][b] as f64 / n as f64;
                assert!((freq - analytic).abs() <= 0.01, "({a},{b}) {freq} vs {analytic}");
            }
        }
    }

    #[test]
    fn full_draw_is_sorted_by_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_without_replacement(&[0.2, 0.5, 0.3], 5, &mut rng);
        assert_eq!(s.indices, vec![1, 2, 0]);
        // 0.5 * (0.3 / 0.5) * (0.2 / 0.2)
        assert!((s.log_prob - 0.3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(greedy_top_k(&[3.0, 1.0, 2.0], 2), vec![0, 2]);
        assert_eq!(greedy_top_k(&[1.0; 4], 2), vec![0, 1]);
        assert_eq!(greedy_top_k(&[0.5, 0.1, 0.9], 3), vec![2, 0, 1]);
    }

    #[test]
    fn zero_weights_and_single_candidate_give_zero_gradient() {
        let net = Mlp::init(STATE_DIM, [8, 8], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let states = random_states(&mut rng, 4, STATE_DIM);
        let g = logprob_gradient(&net, &[WeightedStep { states: &states, indices: &[1, 2], weight: 0.0 }]);
        assert!(g.iter().all(|&v| v == 0.0));
        let one = random_states(&mut rng, 1, STATE_DIM);
        let g = logprob_gradient(&net, &[WeightedStep { states: &one, indices: &[0], weight: 3.0 }]);
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(logits_log_prob(&net.forward(&one), &[0]), 0.0);
    }

    fn objective(net: &Mlp, steps: &[(Vec<Vec<f64>>, Vec<usize>, f64)]) -> f64 {
        steps
            .iter()
            .map(|(s, a, g)| g * sequence_log_prob(&softmax(&net.forward(s)), a))
            .sum()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..10 {
            let net = Mlp::init(6, [5, 4], case);
            let steps: Vec<(Vec<Vec<f64>>, Vec<usize>, f64)> = (0..3)
                .map(|_| {
                    let n = rng.random_range(2..6);
                    let states = random_states(&mut rng, n, 6);
                    let k = rng.random_range(1..=n);
                    let mut order: Vec<usize> = (0..n).collect();
                    for i in 0..n {
                        let j = rng.random_range(i..n);
                        order.swap(i, j);
                    }
                    order.truncate(k);
                    (states, order, rng.random_range(-2.0..2.0))
                })
                .collect();
            let weighted: Vec<WeightedStep> = steps
                .iter()
                .map(|(s, a, g)| WeightedStep { states: s, indices: a, weight: *g })
                .collect();
            let grad = logprob_gradient(&net, &weighted);
            let h = 1e-5;
            for k in 0..net.params.len() {
                let mut plus = net.clone();
                plus.params[k] += h;
                let mut minus = net.clone();
                minus.params[k] -= h;
                let fd = (objective(&plus, &steps) - objective(&minus, &steps)) / (2.0 * h);
                let tol = 1e-4 * grad[k].abs().max(fd.abs()) + 1e-7;
                assert!((grad[k] - fd).abs() <= tol, "case {case} param {k}: {} vs {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut params = vec![1.0, -1.0, 0.0];
        let mut adam = Adam::new(3, 1e-3);
        adam.ascend(&mut params, &[2.0, -0.5, 0.0]);
        assert!((params[0] - (1.0 + 1e-3)).abs() < 1e-9);
        assert!((params[1] - (-1.0 - 1e-3)).abs() < 1e-9);
        assert_eq!(params[2], 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let policy = Policy::new(5);
        let adam = Adam::new(policy.net.params.len(), 1e-3);
        let ckpt = Checkpoint::new(&policy, 7, Some(&adam));
        let dir = std::env::temp_dir().join(format!("rlbd-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.policy().unwrap(), policy);
        std::fs::remove_dir_all(dir).ok();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_sums_to_one(z in proptest::collection::vec(-700.0f64..700.0, 1..12)) {
            let p = softmax(&z);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn sampled_sequences_are_distinct_with_consistent_log_prob(
            z in proptest::collection::vec(-5.0f64..5.0, 1..10),
            k in 1usize..10,
            seed in any::<u64>(),
        ) {
            let p = softmax(&z);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_without_replacement(&p, k, &mut rng);
            let mut sorted = s.indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), s.indices.len());
            prop_assert_eq!(s.indices.len(), k.min(z.len()));
            prop_assert!(s.log_prob <= 1e-12 && s.log_prob.is_finite());
            let masked = logits_log_prob(&z, &s.indices);
            prop_assert!((masked - s.log_prob).abs() <= 1e-9);
            let from_steps: f64 = s.step_probs.iter().map(|q| q.ln()).sum();
            prop_assert!((from_steps - s.log_prob).abs() <= 1e-9);
        }

        #[test]
        fn greedy_is_affine_invariant(
            z in proptest::collection::vec(-50i32..50, 1..10),
            a in 1i32..1000,
            scale_exp in -8i32..8,
            b in -1000i32..1000,
            k in 1usize..10,
        ) {
            // Integer logits and a power-of-two scale keep the transform exact,
            // including ties.
            let k = k.min(z.len());
            let a = f64::from(a) * 2f64.powi(scale_exp);
            let z: Vec<f64> = z.into_iter().map(f64::from).collect();
            let t: Vec<f64> = z.iter().map(|v| a * v + f64::from(b)).collect();
            prop_assert_eq!(greedy_top_k(&z, k), greedy_top_k(&t, k));
        }
    }
}
