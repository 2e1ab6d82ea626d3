//! `slate`: generate environments, train and evaluate agents, and run the
//! exact oracle.
//!
//! Exit codes: 0 success, 2 configuration error, 3 instance too large for
//! the oracle, 4 numerical fault.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;

use slate_core::agents::{Agent, AgentConfig, AgentKind, Encoding, KnnK};
use slate_core::environment::{
    chain_environment, generate_environment, wrap_fatal_failure, EnvironmentSpec, GeneratorConfig,
    PositionDiscount, SlateMdp,
};
use slate_core::harness::{
    evaluate, run_experiment_with, write_outputs, EnvSource, EvalRow, ExperimentConfig, RunMetrics,
    SeedStreams,
};
use slate_core::oracle::{
    check_fatal_failure, check_greedy_bound, check_sequential_presentation, check_submodular_monotone,
    exact_q, CertificationReport,
};
use slate_core::{Error, RandomSource, Result};

#[derive(Parser)]
#[command(name = "slate", version, about = "Slate-MDP simulator, agents and exact oracle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated (or chain) environment file.
    GenEnv(GenEnvArgs),
    /// Train agents over several seeds; writes metrics, manifest and checkpoints.
    Train(TrainArgs),
    /// Evaluate a saved agent on an environment.
    Eval(EvalArgs),
    /// Check oracle properties of a small environment.
    Certify(CertifyArgs),
    /// Dump exact state and slate values of a small environment.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenEnvArgs {
    /// Generator configuration as JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_states: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    slate_size: Option<usize>,
    #[arg(long)]
    max_out_degree: Option<usize>,
    #[arg(long)]
    fail_weight: Option<f64>,
    #[arg(long)]
    discount: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Build the trap chain of this length instead of a random graph.
    #[arg(long)]
    chain: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    lure: f64,
    #[arg(long, default_value_t = 100.0)]
    goal: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Full experiment configuration as JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    slate_size: Option<usize>,
    #[arg(long)]
    knn: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Comma-separated seeds or a range such as `0..6`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    train_steps: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    /// Hidden layer widths of the value network, e.g. `100,100`.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    policy_hidden: Option<String>,
    /// Learning rate of the value network, and of the policy unless
    /// `--policy-eta` is given.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    policy_eta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    target_refresh: Option<u64>,
    /// `concat` or `joint`.
    #[arg(long)]
    encoding: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    env: PathBuf,
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long, default_value_t = 1000)]
    eval_episodes: usize,
    #[arg(long, default_value_t = 1000)]
    max_episode_steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long)]
    slate_size: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    #[arg(long)]
    slate_size: Option<usize>,
    /// Solve the fatal-failure view instead of the raw environment.
    #[arg(long)]
    fatal: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn parse_list<T: std::str::FromStr>(field: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::config(field, format!("cannot parse {p:?}")))
        })
        .collect()
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| Error::config("seeds", "bad range start"))?;
        let b: u64 = b.trim().parse().map_err(|_| Error::config("seeds", "bad range end"))?;
        return Ok((a..b).collect());
    }
    parse_list("seeds", text)
}

fn parse_discount(text: &str) -> Result<PositionDiscount> {
    match text {
        "divide" => Ok(PositionDiscount::Divide),
        "multiply" => Ok(PositionDiscount::Multiply),
        other => Err(Error::config("discount", format!("unknown discount {other:?}"))),
    }
}

fn parse_encoding(text: &str) -> Result<Encoding> {
    match text {
        "concat" => Ok(Encoding::Concat),
        "joint" => Ok(Encoding::Joint),
        other => Err(Error::config("encoding", format!("unknown encoding {other:?}"))),
    }
}

fn load_env(path: &Path, slate_size: Option<usize>) -> Result<EnvironmentSpec> {
    let env = EnvironmentSpec::load(path)?;
    match slate_size {
        Some(l) => env.with_slate_size(l),
        None => Ok(env),
    }
}

fn gen_env(args: GenEnvArgs) -> Result<()> {
    let env = if let Some(length) = args.chain {
        chain_environment(length, args.lure, args.goal)?
    } else {
        let mut cfg: GeneratorConfig = match &args.config {
            Some(p) => read_json(p)?,
            None => GeneratorConfig::default(),
        };
        if let Some(v) = args.n_states {
            cfg.n_states = v;
        }
        if let Some(v) = args.feature_dim {
            cfg.feature_dim = v;
        }
        if let Some(v) = args.slate_size {
            cfg.slate_size = v;
        }
        if let Some(v) = args.max_out_degree {
            cfg.max_out_degree = v;
        }
        if let Some(v) = args.fail_weight {
            cfg.fail_weight = v;
        }
        if let Some(d) = &args.discount {
            cfg.position_discount = parse_discount(d)?;
        }
        generate_environment(&cfg, &mut RandomSource::seed_from_u64(args.seed))?
    };
    env.save(&args.out)?;
    println!("wrote {} ({} states, hash {})", args.out.display(), env.n_states(), env.content_hash());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = args.env {
        cfg.env = EnvSource::File { path: p };
    }
    let a: &mut AgentConfig = &mut cfg.agent;
    if let Some(k) = &args.agent {
        a.kind = k.parse::<AgentKind>()?;
    }
    if let Some(v) = args.slate_size {
        a.slate_size = v;
    }
    if let Some(k) = &args.knn {
        a.knn_k = k.parse::<KnnK>()?;
    }
    if let Some(v) = args.alpha {
        a.alpha = v;
    }
    if let Some(v) = args.gamma {
        a.gamma = v;
    }
    if let Some(v) = args.epsilon {
        a.epsilon = v;
    }
    if let Some(h) = &args.hidden {
        a.q_hidden = parse_list("hidden", h)?;
    }
    if let Some(h) = &args.policy_hidden {
        a.policy_hidden = parse_list("policy_hidden", h)?;
    }
    if let Some(v) = args.eta {
        a.eta = v;
        a.policy_eta = v;
    }
    if let Some(v) = args.policy_eta {
        a.policy_eta = v;
    }
    if let Some(v) = args.tau {
        a.tau = v;
    }
    if let Some(v) = args.batch_size {
        a.batch_size = v;
    }
    if let Some(v) = args.target_refresh {
        a.target_refresh = v;
    }
    if let Some(e) = &args.encoding {
        a.encoding = parse_encoding(e)?;
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(v) = args.train_steps {
        cfg.train_steps = v;
    }
    if let Some(v) = args.eval_episodes {
        cfg.eval_episodes = v;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = args.window {
        cfg.window = v;
    }
    cfg.validate()?;
    let env = cfg.env.load()?;
    let ckpt_dir = args.out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let metrics = run_experiment_with(&cfg, |seed, agent| {
        agent.save(ckpt_dir.join(format!("agent-seed{seed}.json")))?;
        eprintln!("seed {seed} done");
        Ok(())
    })?;
    write_outputs(&args.out, &cfg, &env.content_hash(), &metrics)?;
    if let Some(f) = metrics.final_return() {
        println!("final moving-average return {f}");
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let agent = Agent::load(&args.checkpoint)?;
    let env = EnvironmentSpec::load(&args.env)?;
    let mut rows = Vec::new();
    for seed in parse_seeds(&args.seeds)? {
        let mut streams = SeedStreams::new(seed);
        let e = evaluate(&agent, &env, args.eval_episodes, args.max_episode_steps, &mut streams.eval)?;
        rows.push(EvalRow {
            step: 0,
            seed,
            mean_return: e.mean_return,
            std_return: e.std_return,
            episodes: e.episodes,
        });
    }
    let metrics = RunMetrics::new(rows, 1);
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("metrics.csv"), metrics.to_csv())?;
        }
        None => print!("{}", metrics.to_csv()),
    }
    Ok(())
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn certify(args: CertifyArgs) -> Result<()> {
    let env = load_env(&args.env, args.slate_size)?;
    let fatal = wrap_fatal_failure(&env);
    let solution = exact_q(&fatal, args.gamma, args.tolerance.min(1e-9))?;
    let mut rng = RandomSource::seed_from_u64(args.seed);
    let mut report = CertificationReport::default();
    report.properties.extend(check_sequential_presentation(&env, args.tolerance)?);
    let mut raw = check_fatal_failure(&env, args.samples, &mut rng)?;
    raw.property = "fatal failure (raw environment)".into();
    report.properties.push(raw);
    let mut wrapped = check_fatal_failure(&fatal, args.samples, &mut rng)?;
    wrapped.property = "fatal failure (fatal-failure view)".into();
    report.properties.push(wrapped);
    report.properties.extend(check_submodular_monotone(&solution, &fatal, args.tolerance)?);
    report
        .properties
        .push(check_greedy_bound(&solution, &fatal.live_states(), args.tolerance)?);
    emit(&report.to_text(), &args.out)
}

fn oracle(args: OracleArgs) -> Result<()> {
    let env = load_env(&args.env, args.slate_size)?;
    let solution = if args.fatal {
        exact_q(&wrap_fatal_failure(&env), args.gamma, args.tolerance)?
    } else {
        exact_q(&env, args.gamma, args.tolerance)?
    };
    emit(&solution.dump_text(), &args.out)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Refusal { .. } => 3,
        Error::NumericalFault(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenEnv(a) => gen_env(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Certify(a) => certify(a),
        Command::Oracle(a) => oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
