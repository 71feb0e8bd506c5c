use std::path::{Path, PathBuf};

use rlbd_core::benders::{BendersConfig, TimingMode};
use rlbd_core::model::{generate_ev_instance, DemandShape, EvInstance};
use rlbd_core::train::{RewardConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    MultiCut,
    SingleCut,
    RandomK,
    RlbdGreedy,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::MultiCut, Method::SingleCut, Method::RandomK, Method::RlbdGreedy];

    pub fn name(self) -> &'static str {
        match self {
            Method::MultiCut => "multi_cut",
            Method::SingleCut => "single_cut",
            Method::RandomK => "random_k",
            Method::RlbdGreedy => "rlbd_greedy",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Training (or single) instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceSpec {
    pub stations: usize,
    pub sites: usize,
    pub scenarios: usize,
    pub shape: DemandShape,
    /// Seed of the station/site parameters.
    pub seed: u64,
    pub demand_seed: u64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            stations: 4,
            sites: 6,
            scenarios: 20,
            shape: DemandShape::Normal,
            seed: 1,
            demand_seed: 2,
        }
    }
}

impl InstanceSpec {
    pub fn build(&self) -> EvInstance {
        generate_ev_instance(self.seed, self.stations, self.sites).with_scenarios(
            self.demand_seed,
            self.scenarios,
            self.shape,
        )
    }
}

/// Test sets keep the training instance parameters and redraw demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSpec {
    pub stations: usize,
    pub sites: usize,
    pub scenarios: usize,
    pub shapes: Vec<DemandShape>,
    pub count: usize,
}

impl Default for TestSpec {
    fn default() -> Self {
        Self {
            stations: 4,
            sites: 6,
            scenarios: 20,
            shapes: vec![DemandShape::Normal],
            count: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Empty means the single `train.k`.
    pub k: Vec<usize>,
    pub runs: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            alpha: vec![0.01, 0.1, 1.0],
            lambda: vec![0.001, 0.01, 0.1],
            k: Vec::new(),
            runs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub test: TestSpec,
    pub methods: Vec<Method>,
    pub eps_tol: f64,
    pub time_limit_s: Option<f64>,
    pub t_max: usize,
    /// Cuts per iteration for `random_k` and `rlbd_greedy`.
    pub k: usize,
    pub replications: usize,
    pub output_dir: PathBuf,
    /// Applies to evaluation and to the reward's master times.
    pub timing: TimingMode,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub grid: Option<Grid>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            instance: InstanceSpec::default(),
            test: TestSpec::default(),
            methods: Method::ALL.to_vec(),
            eps_tol: 0.01,
            time_limit_s: None,
            t_max: 500,
            k: 5,
            replications: 1,
            output_dir: PathBuf::from("out"),
            timing: TimingMode::WallClock,
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
            grid: None,
            checkpoint: None,
            checkpoint_every: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.t_max == 0 {
            return bad("t_max must be at least 1".into());
        }
        if !(self.eps_tol >= 0.0) {
            return bad(format!("eps_tol must be non-negative, got {}", self.eps_tol));
        }
        if self.time_limit_s.is_some_and(|t| !(t > 0.0)) {
            return bad("time_limit_s must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("no methods given".into());
        }
        if self.test.count == 0 || self.test.shapes.is_empty() {
            return bad("test set is empty".into());
        }
        if let TimingMode::Proxy { seconds_per_unit } = self.timing {
            if !(seconds_per_unit > 0.0) {
                return bad("proxy seconds_per_unit must be positive".into());
            }
        }
        for spec in [
            (self.instance.stations, self.instance.sites, self.instance.scenarios),
            (self.test.stations, self.test.sites, self.test.scenarios),
        ] {
            if spec.0 == 0 || spec.1 == 0 || spec.2 == 0 {
                return bad("instance sizes must be positive".into());
            }
        }
        if let Some(g) = &self.grid {
            if g.alpha.is_empty() || g.lambda.is_empty() || g.runs == 0 || g.k.contains(&0) {
                return bad("grid must have alpha and lambda values and at least one run".into());
            }
        }
        self.train.validate()?;
        self.reward.validate()?;
        Ok(())
    }

    pub fn benders(&self) -> BendersConfig {
        BendersConfig {
            eps_tol: self.eps_tol,
            t_max: self.t_max,
            time_limit_s: self.time_limit_s,
            timing: self.timing,
            ..BendersConfig::default()
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            timing: self.timing,
            ..self.reward
        }
    }
}
