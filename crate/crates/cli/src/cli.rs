use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rlbd_core::model::DemandShape;

use crate::config::Method;

#[derive(Debug, Parser)]
#[command(name = "rlbd", version, about = "Benders decomposition with learned cut selection")]
pub struct Cli {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Clock used for timings and the reward's master-time term.
    #[arg(long, global = true, value_enum)]
    pub timing: Option<Timing>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Timing {
    Wall,
    /// Deterministic work-unit clock.
    Proxy,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write seeded EV instance files.
    Generate(GenerateArgs),
    /// Train a cut-selection policy with REINFORCE.
    Train(TrainArgs),
    /// Solve one instance and write its trace.
    Evaluate(EvaluateArgs),
    /// Compare selection methods on a test set.
    Benchmark(BenchmarkArgs),
    /// Scenario exposure report from a trace.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    #[arg(long)]
    pub stations: Option<usize>,
    #[arg(long)]
    pub sites: Option<usize>,
    #[arg(long)]
    pub scenarios: Option<usize>,
    #[arg(long)]
    pub shape: Option<DemandShape>,
    /// Seed of the station/site parameters.
    #[arg(long)]
    pub instance_seed: Option<u64>,
    #[arg(long)]
    pub demand_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// Shorthand for --instance-seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of files; file i uses demand seed + i.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Instance file; generated from the config when omitted.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[command(flatten)]
    pub spec: InstanceArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub eps_tol: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub t_ref: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Train every (alpha, lambda, k) grid point.
    #[arg(long)]
    pub grid: bool,
    /// Independent runs per grid point.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub eps_tol: Option<f64>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub time_limit: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::RlbdGreedy)]
    pub method: Method,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Seed for random_k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also dump the per-candidate state features.
    #[arg(long)]
    pub features: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Test instance files; a test set is drawn from the config when omitted.
    #[arg(long = "instance")]
    pub instances: Vec<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[arg(long, value_delimiter = ',')]
    pub shapes: Option<Vec<DemandShape>>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
