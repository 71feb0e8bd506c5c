//! Two-stage stochastic EV charging-station location model.
//!
//! First stage: open station `i` (`y_i` binary) and install `z_i` chargers
//! (`0 <= z_i <= M_i y_i`, integer). Second stage, per demand scenario: serve
//! `x_ij` units of site `j` from station `i`, leave `u_j` unmet, subject to
//! `sum_i x_ij + u_j = d_j` and `sum_j x_ij <= C_i z_i`. Cost is
//! `sum c_ij x_ij + sum p_j u_j - sum r_j d_j`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FirstStage, ModelError, Scenario, TwoStageProblem};
use crate::linalg::Matrix;
use crate::lp::Sense;

pub const OPEN_COST: (f64, f64) = (80.0, 300.0);
pub const CHARGER_COST: (f64, f64) = (5.0, 40.0);
pub const TRANSPORT_COST: (f64, f64) = (1.0, 80.0);
pub const PENALTY: (f64, f64) = (30.0, 120.0);
pub const REVENUE: (f64, f64) = (5.0, 60.0);
pub const CAPACITY: (f64, f64) = (40.0, 120.0);
pub const MAX_CHARGERS: (u32, u32) = (10, 80);
pub const DEMAND_MEAN: (f64, f64) = (20.0, 100.0);
pub const DEMAND_CV: f64 = 0.1;
/// Skew-normal shape used for the skewed demand families.
pub const SKEW_SHAPE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DemandShape {
    #[default]
    Normal,
    LeftSkewed,
    RightSkewed,
}

impl std::str::FromStr for DemandShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "normal" => Ok(Self::Normal),
            "left_skewed" | "left" => Ok(Self::LeftSkewed),
            "right_skewed" | "right" => Ok(Self::RightSkewed),
            other => Err(format!("unknown demand shape '{other}'")),
        }
    }
}

impl std::fmt::Display for DemandShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Normal => "normal",
            Self::LeftSkewed => "left_skewed",
            Self::RightSkewed => "right_skewed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvInstance {
    pub seed: u64,
    pub n_stations: usize,
    pub n_sites: usize,
    /// `f_i`
    pub open_cost: Vec<f64>,
    /// `b_i`
    pub charger_cost: Vec<f64>,
    /// `c_ij`, indexed `[station][site]`.
    pub transport_cost: Vec<Vec<f64>>,
    /// `p_j`
    pub penalty: Vec<f64>,
    /// `r_j`
    pub revenue: Vec<f64>,
    /// `C_i`
    pub capacity: Vec<f64>,
    /// `M_i`
    pub max_chargers: Vec<u32>,
    /// `mu_j`
    pub demand_mean: Vec<f64>,
    /// `sigma_j`
    pub demand_std: Vec<f64>,
    pub shape: DemandShape,
    pub demand_seed: Option<u64>,
    /// `d^w_j`, indexed `[scenario][site]`.
    pub demands: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
}

/// Samples every model parameter uniformly from its range. Scenarios are
/// attached separately with [`EvInstance::with_scenarios`].
pub fn generate_ev_instance(seed: u64, n_stations: usize, n_sites: usize) -> EvInstance {
    assert!(n_stations >= 1 && n_sites >= 1, "instance needs at least one station and site");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |(lo, hi): (f64, f64), n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..=hi)).collect()
    };
    let open_cost = uniform(OPEN_COST, n_stations);
    let charger_cost = uniform(CHARGER_COST, n_stations);
    let transport_cost = (0..n_stations)
        .map(|_| uniform(TRANSPORT_COST, n_sites))
        .collect();
    let penalty = uniform(PENALTY, n_sites);
    let revenue = uniform(REVENUE, n_sites);
    let capacity = uniform(CAPACITY, n_stations);
    let demand_mean = uniform(DEMAND_MEAN, n_sites);
    let max_chargers = (0..n_stations)
        .map(|_| rng.random_range(MAX_CHARGERS.0..=MAX_CHARGERS.1))
        .collect();
    let demand_std = demand_mean.iter().map(|m| DEMAND_CV * m).collect();
    EvInstance {
        seed,
        n_stations,
        n_sites,
        open_cost,
        charger_cost,
        transport_cost,
        penalty,
        revenue,
        capacity,
        max_chargers,
        demand_mean,
        demand_std,
        shape: DemandShape::Normal,
        demand_seed: None,
        demands: Vec::new(),
        probabilities: Vec::new(),
    }
}

/// Draws `n_scenarios` demand vectors, truncated at zero. Skewed shapes are
/// skew-normal with shape `+-SKEW_SHAPE`, moment-matched to `(mu_j, sigma_j)`.
pub fn generate_demand_scenarios(
    seed: u64,
    instance: &EvInstance,
    n_scenarios: usize,
    shape: DemandShape,
) -> Vec<Vec<f64>> {
    assert!(n_scenarios >= 1, "need at least one scenario");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = match shape {
        DemandShape::Normal => 0.0,
        DemandShape::LeftSkewed => -SKEW_SHAPE,
        DemandShape::RightSkewed => SKEW_SHAPE,
    };
    let delta = alpha / (1.0 + alpha * alpha).sqrt();
    let b = (2.0 / std::f64::consts::PI).sqrt();
    let skew_mean = delta * b;
    let skew_sd = (1.0 - delta * delta * b * b).sqrt();
    (0..n_scenarios)
        .map(|_| {
            (0..instance.n_sites)
                .map(|j| {
                    let z = if shape == DemandShape::Normal {
                        rng.sample::<f64, _>(StandardNormal)
                    } else {
                        let u0: f64 = rng.sample(StandardNormal);
                        let u1: f64 = rng.sample(StandardNormal);
                        let raw = delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1;
                        (raw - skew_mean) / skew_sd
                    };
                    (instance.demand_mean[j] + instance.demand_std[j] * z).max(0.0)
                })
                .collect()
        })
        .collect()
}

impl EvInstance {
    /// Attaches `n_scenarios` equiprobable demand scenarios.
    pub fn with_scenarios(mut self, seed: u64, n_scenarios: usize, shape: DemandShape) -> Self {
        self.demands = generate_demand_scenarios(seed, &self, n_scenarios, shape);
        self.probabilities = vec![1.0 / n_scenarios as f64; n_scenarios];
        self.shape = shape;
        self.demand_seed = Some(seed);
        self
    }

    pub fn num_scenarios(&self) -> usize {
        self.demands.len()
    }

    /// Checks parameter ranges and shapes.
    pub fn validate(&self) -> Result<(), ModelError> {
        let (ni, nj) = (self.n_stations, self.n_sites);
        let inside = |v: &[f64], (lo, hi): (f64, f64)| v.iter().all(|&x| (lo..=hi).contains(&x));
        let ok = self.open_cost.len() == ni
            && self.charger_cost.len() == ni
            && self.capacity.len() == ni
            && self.max_chargers.len() == ni
            && self.transport_cost.len() == ni
            && self.transport_cost.iter().all(|r| r.len() == nj)
            && self.penalty.len() == nj
            && self.revenue.len() == nj
            && self.demand_mean.len() == nj
            && self.demand_std.len() == nj
            && self.demands.iter().all(|d| d.len() == nj)
            && self.probabilities.len() == self.demands.len();
        if !ok {
            return Err(ModelError::Invalid("EV instance dimensions are inconsistent".into()));
        }
        let ranges = inside(&self.open_cost, OPEN_COST)
            && inside(&self.charger_cost, CHARGER_COST)
            && self.transport_cost.iter().all(|r| inside(r, TRANSPORT_COST))
            && inside(&self.penalty, PENALTY)
            && inside(&self.revenue, REVENUE)
            && inside(&self.capacity, CAPACITY)
            && self
                .max_chargers
                .iter()
                .all(|m| (MAX_CHARGERS.0..=MAX_CHARGERS.1).contains(m));
        if !ranges {
            return Err(ModelError::Invalid("EV parameter outside its sampling range".into()));
        }
        if self.demands.iter().flatten().any(|&d| !(d >= 0.0)) {
            return Err(ModelError::Invalid("negative demand".into()));
        }
        Ok(())
    }

    /// Per-scenario `(sum_j d_j, sum_j p_j d_j, sum_j r_j d_j)`.
    pub fn exposure(&self, scenario: usize) -> (f64, f64, f64) {
        let d = &self.demands[scenario];
        let total = d.iter().sum();
        let penalty = d.iter().zip(&self.penalty).map(|(d, p)| d * p).sum();
        let revenue = d.iter().zip(&self.revenue).map(|(d, r)| d * r).sum();
        (total, penalty, revenue)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = InstanceFile::new(self.clone());
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let file: InstanceFile = serde_json::from_str(&text)?;
        file.instance.validate()?;
        Ok(file.instance)
    }
}

/// Compiled problem sizes recorded alongside an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub n1: usize,
    pub n2: usize,
    pub recourse_rows: usize,
    pub scenarios: usize,
}

/// On-disk JSON document for an EV instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub format: String,
    pub version: u32,
    pub dimensions: Dimensions,
    pub instance: EvInstance,
}

impl InstanceFile {
    pub const FORMAT: &'static str = "rlbd-ev-instance";

    pub fn new(instance: EvInstance) -> Self {
        let (ni, nj) = (instance.n_stations, instance.n_sites);
        Self {
            format: Self::FORMAT.to_string(),
            version: 1,
            dimensions: Dimensions {
                n1: 2 * ni,
                n2: ni * nj + nj,
                recourse_rows: ni + nj,
                scenarios: instance.num_scenarios(),
            },
            instance,
        }
    }
}

/// Index of `x_ij` among second-stage variables.
pub fn flow_index(n_sites: usize, i: usize, j: usize) -> usize {
    i * n_sites + j
}

/// Compiles the instance into standard form with `x = (y, z)` and
/// `y_2nd = (x_ij row-major, u_j)`. Recourse rows are the `|J|` demand
/// equalities followed by the `|I|` capacity rows `-sum_j x_ij >= -C_i z_i`.
pub fn ev_to_standard_form(inst: &EvInstance) -> TwoStageProblem {
    let (ni, nj) = (inst.n_stations, inst.n_sites);
    let n1 = 2 * ni;
    let n2 = ni * nj + nj;

    let mut cost = inst.open_cost.clone();
    cost.extend_from_slice(&inst.charger_cost);
    let mut rows = Vec::with_capacity(ni);
    for i in 0..ni {
        let mut r = vec![0.0; n1];
        r[ni + i] = 1.0;
        r[i] = -f64::from(inst.max_chargers[i]);
        rows.push(r);
    }
    let mut upper = vec![1.0; ni];
    upper.extend(inst.max_chargers.iter().map(|&m| f64::from(m)));
    let first_stage = FirstStage {
        cost,
        rows,
        senses: vec![Sense::Le; ni],
        rhs: vec![0.0; ni],
        lower: vec![0.0; n1],
        upper,
        integer: vec![true; n1],
    };

    let mut w = Matrix::zeros(nj + ni, n2);
    let mut t = Matrix::zeros(nj + ni, n1);
    for j in 0..nj {
        for i in 0..ni {
            w.set(j, flow_index(nj, i, j), 1.0);
        }
        w.set(j, ni * nj + j, 1.0);
    }
    for i in 0..ni {
        for j in 0..nj {
            w.set(nj + i, flow_index(nj, i, j), -1.0);
        }
        t.set(nj + i, ni + i, inst.capacity[i]);
    }
    let mut q = Vec::with_capacity(n2);
    for i in 0..ni {
        q.extend_from_slice(&inst.transport_cost[i]);
    }
    q.extend_from_slice(&inst.penalty);
    let mut senses = vec![Sense::Eq; nj];
    senses.extend(std::iter::repeat_n(Sense::Ge, ni));

    let scenarios = inst
        .demands
        .iter()
        .zip(&inst.probabilities)
        .map(|(d, &p)| {
            let mut h = d.clone();
            h.extend(std::iter::repeat_n(0.0, ni));
            let revenue: f64 = d.iter().zip(&inst.revenue).map(|(d, r)| d * r).sum();
            Scenario {
                w: w.clone(),
                senses: senses.clone(),
                h,
                t: t.clone(),
                q: q.clone(),
                probability: p,
                constant: -revenue,
                // Costs are nonnegative, so Q^w >= -revenue.
                recourse_lower_bound: Some(-revenue),
            }
        })
        .collect();
    TwoStageProblem {
        first_stage,
        scenarios,
    }
}
