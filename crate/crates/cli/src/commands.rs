use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rlbd_core::benders::{
    write_trace_csv, BendersConfig, BendersRun, CutSelector, Engine, Termination, TimingMode,
};
use rlbd_core::features::{build_state, write_feature_header, write_feature_rows};
use rlbd_core::model::{ev_to_standard_form, generate_ev_instance, EvInstance, ModelError, TwoStageProblem};
use rlbd_core::policy::{Checkpoint, Policy};
use rlbd_core::train::{train_with, write_curve_csv, RewardConfig, TrainConfig};

use crate::cli::{
    BenchmarkArgs, Cli, Command, EvaluateArgs, GenerateArgs, InstanceArgs, ReportArgs, SolveArgs, Timing,
    TrainArgs,
};
use crate::config::{ExperimentConfig, InstanceSpec, Method};
use crate::error::CliError;
use crate::exposure::{counts_from_trace, exposure_report, write_exposure_csv};

pub const BENCHMARK_HEADER: &str = "method,instance,replication,termination,Time,Master,Iter,Gap%,master_cuts,objective";
pub const GRID_HEADER: &str = "alpha,lambda,k,run,seed,first10_reward,last10_reward,final_gap,discarded,dir";

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load_or_default(cli.config.as_deref())?;
    match cli.timing {
        Some(Timing::Wall) => cfg.timing = TimingMode::WallClock,
        Some(Timing::Proxy) if !cfg.timing.is_proxy() => cfg.timing = TimingMode::proxy(),
        _ => {}
    }
    match cli.command {
        Command::Generate(args) => generate(&args, cfg).map(|_| ()),
        Command::Train(args) => train(&args, cfg),
        Command::Evaluate(args) => evaluate(&args, cfg).map(|_| ()),
        Command::Benchmark(args) => benchmark(&args, cfg).map(|_| ()),
        Command::Report(args) => report(&args).map(|_| ()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    std::fs::write(path, bytes).map_err(CliError::io(path))
}

fn load_instance(path: &Path) -> Result<EvInstance, CliError> {
    EvInstance::load(path).map_err(|e| match e {
        ModelError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Config(format!("{}: {other}", path.display())),
    })
}

fn apply_instance_args(spec: &mut InstanceSpec, args: &InstanceArgs) {
    let InstanceArgs {
        stations,
        sites,
        scenarios,
        shape,
        instance_seed,
        demand_seed,
    } = args;
    spec.stations = stations.unwrap_or(spec.stations);
    spec.sites = sites.unwrap_or(spec.sites);
    spec.scenarios = scenarios.unwrap_or(spec.scenarios);
    spec.shape = shape.unwrap_or(spec.shape);
    spec.seed = instance_seed.unwrap_or(spec.seed);
    spec.demand_seed = demand_seed.unwrap_or(spec.demand_seed);
}

fn apply_solve_args(cfg: &mut ExperimentConfig, args: &SolveArgs) {
    if args.checkpoint.is_some() {
        cfg.checkpoint = args.checkpoint.clone();
    }
    cfg.k = args.k.unwrap_or(cfg.k);
    cfg.eps_tol = args.eps_tol.unwrap_or(cfg.eps_tol);
    cfg.t_max = args.t_max.unwrap_or(cfg.t_max);
    if args.time_limit.is_some() {
        cfg.time_limit_s = args.time_limit;
    }
}

fn load_policy(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Option<Policy>, CliError> {
    if !methods.contains(&Method::RlbdGreedy) {
        return Ok(None);
    }
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("rlbd_greedy needs a checkpoint".into()))?;
    if !path.exists() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Some(Checkpoint::load(path)?.policy()?))
}

/// Path of file `i` out of `count`: `out` itself for a single file.
fn numbered(out: &Path, i: usize, count: usize) -> PathBuf {
    if count == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map_or_else(|| "instance".into(), |s| s.to_string_lossy().into_owned());
    let name = match out.extension() {
        Some(ext) => format!("{stem}_{i:03}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{i:03}"),
    };
    out.with_file_name(name)
}

pub fn generate(args: &GenerateArgs, mut cfg: ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    apply_instance_args(&mut cfg.instance, &args.instance);
    if let Some(seed) = args.seed {
        cfg.instance.seed = seed;
    }
    cfg.validate()?;
    if args.count == 0 {
        return Err(CliError::Config("count must be at least 1".into()));
    }
    let mut paths = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let spec = InstanceSpec {
            demand_seed: cfg.instance.demand_seed + i as u64,
            ..cfg.instance.clone()
        };
        let inst = spec.build();
        let path = numbered(&args.out, i, args.count);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
        inst.save(&path)?;
        log::info!(
            "wrote {} ({}x{}, {} scenarios)",
            path.display(),
            spec.stations,
            spec.sites,
            spec.scenarios
        );
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub alpha: f64,
    pub lambda: f64,
    pub k: usize,
    pub run: usize,
    pub seed: u64,
    pub first10: f64,
    pub last10: f64,
    pub final_gap: f64,
    pub discarded: usize,
    pub dir: PathBuf,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Trains one policy and writes `checkpoint.json` and `curve.csv` into `dir`.
pub fn train_one(
    problem: &TwoStageProblem,
    tcfg: &TrainConfig,
    reward: &RewardConfig,
    dir: &Path,
    checkpoint_every: Option<usize>,
) -> Result<(f64, f64, f64, usize), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let mut save_err = None;
    let result = train_with(&[problem], tcfg, reward, |episode, policy, adam| {
        if checkpoint_every.is_some_and(|n| n > 0 && episode % n == 0) && save_err.is_none() {
            let path = dir.join(format!("checkpoint_ep{episode:05}.json"));
            save_err = Checkpoint::new(policy, episode, Some(adam)).save(&path).err();
        }
    })?;
    if let Some(e) = save_err {
        return Err(e.into());
    }
    Checkpoint::new(&result.policy, tcfg.episodes, Some(&result.optimizer)).save(&dir.join("checkpoint.json"))?;
    let mut csv = Vec::new();
    write_curve_csv(&mut csv, &result.curve).expect("writing to memory");
    write_file(&dir.join("curve.csv"), &csv)?;
    let rewards: Vec<f64> = result.curve.iter().map(|c| c.total_reward).collect();
    let w = rewards.len().min(10);
    let first = mean(rewards[..w].iter().copied());
    let last = mean(rewards[rewards.len() - w..].iter().copied());
    let gap = result.curve.last().map_or(f64::NAN, |c| c.final_gap);
    Ok((first, last, gap, result.discarded))
}

pub fn train(args: &TrainArgs, mut cfg: ExperimentConfig) -> Result<(), CliError> {
    apply_instance_args(&mut cfg.instance, &args.spec);
    let t = &mut cfg.train;
    t.seed = args.seed;
    t.episodes = args.episodes.unwrap_or(t.episodes);
    t.k = args.k.unwrap_or(t.k);
    t.t_max = args.t_max.unwrap_or(t.t_max);
    t.learning_rate = args.learning_rate.unwrap_or(t.learning_rate);
    t.eps_tol = args.eps_tol.unwrap_or(t.eps_tol);
    let r = &mut cfg.reward;
    r.alpha = args.alpha.unwrap_or(r.alpha);
    r.beta = args.beta.unwrap_or(r.beta);
    r.lambda = args.lambda.unwrap_or(r.lambda);
    r.t_ref = args.t_ref.unwrap_or(r.t_ref);
    r.gamma = args.gamma.unwrap_or(r.gamma);
    if args.grid && cfg.grid.is_none() {
        cfg.grid = Some(Default::default());
    }
    if let (Some(g), Some(runs)) = (cfg.grid.as_mut(), args.runs) {
        g.runs = runs;
    }
    if args.checkpoint_every.is_some() {
        cfg.checkpoint_every = args.checkpoint_every;
    }
    cfg.validate()?;

    let inst = match &args.instance {
        Some(path) => load_instance(path)?,
        None => cfg.instance.build(),
    };
    let problem = ev_to_standard_form(&inst);
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let reward = cfg.reward_config();

    let Some(grid) = &cfg.grid else {
        let (first, last, gap, discarded) = train_one(&problem, &cfg.train, &reward, &out, cfg.checkpoint_every)?;
        println!(
            "trained {} episodes: mean reward first10 {first:.6} last10 {last:.6}, final gap {gap:.3e}, discarded {discarded}",
            cfg.train.episodes
        );
        return Ok(());
    };

    let ks = if grid.k.is_empty() { vec![cfg.train.k] } else { grid.k.clone() };
    let mut jobs = Vec::new();
    for &alpha in &grid.alpha {
        for &lambda in &grid.lambda {
            for &k in &ks {
                for run in 0..grid.runs {
                    jobs.push((alpha, lambda, k, run));
                }
            }
        }
    }
    let rows: Vec<GridRow> = jobs
        .par_iter()
        .map(|&(alpha, lambda, k, run)| {
            let seed = args.seed + run as u64;
            let tcfg = TrainConfig { k, seed, ..cfg.train };
            let rcfg = RewardConfig { alpha, lambda, ..reward };
            let dir = out.join(format!("a{alpha}_l{lambda}_k{k}_r{run}"));
            let (first10, last10, final_gap, discarded) =
                train_one(&problem, &tcfg, &rcfg, &dir, cfg.checkpoint_every)?;
            Ok(GridRow {
                alpha,
                lambda,
                k,
                run,
                seed,
                first10,
                last10,
                final_gap,
                discarded,
                dir,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let mut csv = format!("{GRID_HEADER}\n");
    for r in &rows {
        let dir = r.dir.strip_prefix(&out).unwrap_or(&r.dir);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.alpha,
            r.lambda,
            r.k,
            r.run,
            r.seed,
            r.first10,
            r.last10,
            r.final_gap,
            r.discarded,
            dir.display()
        ));
    }
    write_file(&out.join("grid.csv"), csv.as_bytes())?;
    println!("trained {} grid runs into {}", rows.len(), out.display());
    Ok(())
}

fn selector(method: Method, policy: Option<&Policy>, k: usize, seed: u64) -> Result<CutSelector, CliError> {
    Ok(match method {
        Method::MultiCut => CutSelector::SelectAll,
        Method::SingleCut => CutSelector::Aggregate,
        Method::RandomK => CutSelector::random_k(k, seed),
        Method::RlbdGreedy => {
            let policy = policy.ok_or_else(|| CliError::Config("rlbd_greedy needs a checkpoint".into()))?;
            CutSelector::policy_greedy(policy.clone(), k)
        }
    })
}

/// Runs one method to termination, optionally dumping state features.
pub fn solve(
    problem: &TwoStageProblem,
    method: Method,
    policy: Option<&Policy>,
    k: usize,
    seed: u64,
    cfg: &BendersConfig,
    mut features: Option<&mut Vec<u8>>,
) -> Result<BendersRun, CliError> {
    let mut sel = selector(method, policy, k, seed)?;
    let mut engine = Engine::new(problem, *cfg)?;
    if let Some(buf) = features.as_deref_mut() {
        write_feature_header(buf).expect("writing to memory");
    }
    loop {
        engine.iterate()?;
        if let Some(buf) = features.as_deref_mut() {
            let norm = policy.map(|p| p.normalization).unwrap_or_default();
            let states = build_state(engine.state(), problem, norm);
            write_feature_rows(buf, engine.state().t, &states).expect("writing to memory");
        }
        let selection = sel.select(&engine);
        engine.apply(&selection);
        if engine.termination().is_some() {
            break;
        }
    }
    Ok(BendersRun {
        outcome: engine.outcome(),
        state: engine.into_state(),
    })
}

pub fn evaluate(args: &EvaluateArgs, mut cfg: ExperimentConfig) -> Result<BendersRun, CliError> {
    apply_solve_args(&mut cfg, &args.solve);
    cfg.validate()?;
    let inst = load_instance(&args.instance)?;
    let problem = ev_to_standard_form(&inst);
    let policy = load_policy(&cfg, &[args.method])?;
    let mut features = args.features.then(Vec::new);
    let run = solve(
        &problem,
        args.method,
        policy.as_ref(),
        cfg.k,
        args.seed,
        &cfg.benders(),
        features.as_mut(),
    )?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let mut trace = Vec::new();
    write_trace_csv(&mut trace, &run.state.history).expect("writing to memory");
    write_file(&out.join("trace.csv"), &trace)?;
    let mut summary = serde_json::to_string_pretty(&run.outcome).expect("outcome serializes");
    summary.push('\n');
    write_file(&out.join("summary.json"), summary.as_bytes())?;
    if let Some(f) = features {
        write_file(&out.join("features.csv"), &f)?;
    }
    let o = &run.outcome;
    println!(
        "{}: {:?} after {} iterations, objective {}, gap {:.4}%, master cuts {}",
        args.method,
        o.termination,
        o.iterations,
        o.objective,
        o.gap * 100.0,
        o.master_cuts
    );
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub method: Method,
    pub instance: String,
    pub replication: usize,
    pub termination: Termination,
    pub time: f64,
    pub master_time: f64,
    pub iterations: usize,
    pub gap_pct: f64,
    pub master_cuts: usize,
    pub objective: f64,
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::IterationLimit => "iteration_limit",
        Termination::TimeLimit => "time_limit",
    }
}

/// Test set drawn from the config: training parameters, fresh demand seeds.
pub fn test_instances(cfg: &ExperimentConfig, seed: u64) -> Vec<(String, EvInstance)> {
    let t = &cfg.test;
    let mut out = Vec::new();
    for &shape in &t.shapes {
        for i in 0..t.count {
            let inst = generate_ev_instance(cfg.instance.seed, t.stations, t.sites).with_scenarios(
                seed + i as u64,
                t.scenarios,
                shape,
            );
            out.push((format!("{shape}_{i}"), inst));
        }
    }
    out
}

pub fn benchmark_rows(
    instances: &[(String, EvInstance)],
    cfg: &ExperimentConfig,
    policy: Option<&Policy>,
    seed: u64,
) -> Result<Vec<BenchmarkRow>, CliError> {
    let problems: Vec<TwoStageProblem> = instances.iter().map(|(_, i)| ev_to_standard_form(i)).collect();
    let mut jobs = Vec::new();
    for p in 0..problems.len() {
        for &m in &cfg.methods {
            for r in 0..cfg.replications {
                jobs.push((p, m, r));
            }
        }
    }
    let bcfg = cfg.benders();
    let job = |&(p, method, rep): &(usize, Method, usize)| -> Result<BenchmarkRow, CliError> {
        let run = solve(&problems[p], method, policy, cfg.k, seed + rep as u64, &bcfg, None)?;
        let o = run.outcome;
        Ok(BenchmarkRow {
            method,
            instance: instances[p].0.clone(),
            replication: rep,
            termination: o.termination,
            time: o.time,
            master_time: o.master_time,
            iterations: o.iterations,
            gap_pct: o.gap * 100.0,
            master_cuts: o.master_cuts,
            objective: o.objective,
        })
    };
    // Concurrent runs would distort wall-clock timings.
    if bcfg.timing.is_proxy() {
        jobs.par_iter().map(job).collect()
    } else {
        jobs.iter().map(job).collect()
    }
}

pub fn write_benchmark_csv<W: Write>(mut out: W, rows: &[BenchmarkRow], methods: &[Method]) -> std::io::Result<()> {
    writeln!(out, "{BENCHMARK_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.instance,
            r.replication,
            termination_name(r.termination),
            r.time,
            r.master_time,
            r.iterations,
            r.gap_pct,
            r.master_cuts,
            r.objective
        )?;
    }
    for &m in methods {
        let mine: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.method == m).collect();
        if mine.is_empty() {
            continue;
        }
        let converged = mine.iter().filter(|r| r.termination == Termination::Converged).count();
        writeln!(
            out,
            "{m},mean,{},{converged}/{},{},{},{},{},{},{}",
            mine.len(),
            mine.len(),
            mean(mine.iter().map(|r| r.time)),
            mean(mine.iter().map(|r| r.master_time)),
            mean(mine.iter().map(|r| r.iterations as f64)),
            mean(mine.iter().map(|r| r.gap_pct)),
            mean(mine.iter().map(|r| r.master_cuts as f64)),
            mean(mine.iter().map(|r| r.objective)),
        )?;
    }
    Ok(())
}

pub fn benchmark(args: &BenchmarkArgs, mut cfg: ExperimentConfig) -> Result<Vec<BenchmarkRow>, CliError> {
    apply_solve_args(&mut cfg, &args.solve);
    if let Some(m) = &args.methods {
        cfg.methods = m.clone();
    }
    if let Some(s) = &args.shapes {
        cfg.test.shapes = s.clone();
    }
    cfg.test.count = args.count.unwrap_or(cfg.test.count);
    cfg.replications = args.replications.unwrap_or(cfg.replications);
    cfg.validate()?;
    let policy = load_policy(&cfg, &cfg.methods)?;
    let instances = if args.instances.is_empty() {
        test_instances(&cfg, args.seed)
    } else {
        args.instances
            .iter()
            .map(|p| {
                let id = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
                Ok((id, load_instance(p)?))
            })
            .collect::<Result<_, CliError>>()?
    };
    let rows = benchmark_rows(&instances, &cfg, policy.as_ref(), args.seed)?;
    let mut csv = Vec::new();
    write_benchmark_csv(&mut csv, &rows, &cfg.methods).expect("writing to memory");
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.join("benchmark.csv"));
    write_file(&out, &csv)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(rows)
}

pub fn report(args: &ReportArgs) -> Result<f64, CliError> {
    let inst = load_instance(&args.instance)?;
    let text = std::fs::read_to_string(&args.trace).map_err(CliError::io(&args.trace))?;
    let counts = counts_from_trace(&text, inst.num_scenarios())?;
    let rep = exposure_report(&inst, &counts);
    let mut csv = Vec::new();
    write_exposure_csv(&mut csv, &rep).expect("writing to memory");
    write_file(&args.out, &csv)?;
    println!("spearman(rank, total_demand) = {}", rep.spearman);
    Ok(rep.spearman)
}
