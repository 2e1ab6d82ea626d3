//! Experiment orchestration: interleaved training and evaluation over
//! several seeds, metrics files and run manifests.
//!
//! Training runs on the fatal-failure view of the environment (optionally
//! with the risk-seeking reward transform); evaluation always runs the
//! greedy slate policy on the raw environment and records undiscounted
//! episode returns.

mod metrics;

pub use metrics::{aggregate, mean, moving_average, population_std, AggregateRow, EvalRow, RunMetrics};

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentConfig};
use crate::environment::{
    chain_environment, generate_environment, wrap_fatal_failure, wrap_risk_seeking, EnvironmentSpec,
    GeneratorConfig, SlateMdp,
};
use crate::error::{Error, Result};
use crate::types::Slate;
use crate::RandomSource;

/// Where the environment of an experiment comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum EnvSource {
    File { path: PathBuf },
    Generate { config: GeneratorConfig, seed: u64 },
    Chain { length: usize, lure: f64, goal: f64 },
}

impl EnvSource {
    pub fn load(&self) -> Result<EnvironmentSpec> {
        match self {
            EnvSource::File { path } => EnvironmentSpec::load(path),
            EnvSource::Generate { config, seed } => {
                generate_environment(config, &mut RandomSource::seed_from_u64(*seed))
            }
            EnvSource::Chain { length, lure, goal } => chain_environment(*length, *lure, *goal),
        }
    }
}

impl Default for EnvSource {
    fn default() -> Self {
        EnvSource::Generate {
            config: GeneratorConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: EnvSource,
    pub agent: AgentConfig,
    pub train_steps: u64,
    pub eval_episodes: usize,
    pub eval_every: u64,
    pub seeds: Vec<u64>,
    pub window: usize,
    /// Episodes are cut after this many steps, in training and evaluation.
    pub max_episode_steps: usize,
    /// Train on the fatal-failure view.
    pub fatal_failure: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvSource::default(),
            agent: AgentConfig::default(),
            train_steps: 200_000,
            eval_episodes: 1000,
            eval_every: 10_000,
            seeds: (0..6).collect(),
            window: 100,
            max_episode_steps: 1000,
            fatal_failure: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if self.window == 0 {
            return Err(Error::config("window", "must be positive"));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::config("max_episode_steps", "must be positive"));
        }
        Ok(())
    }
}

/// Independent random streams of one seed.
pub struct SeedStreams {
    pub init: RandomSource,
    pub train: RandomSource,
    pub eval: RandomSource,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = RandomSource::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        SeedStreams {
            init: stream(0),
            train: stream(1),
            eval: stream(2),
        }
    }
}

/// Statistics of one evaluation block.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub std_return: f64,
    pub episodes: usize,
    pub steps: usize,
}

/// Runs `episodes` greedy episodes on `env` and reports undiscounted
/// returns. The agent is only read; slates are cached per state because the
/// greedy policy is deterministic while parameters are frozen.
pub fn evaluate<E: SlateMdp + ?Sized>(
    agent: &Agent,
    env: &E,
    episodes: usize,
    max_episode_steps: usize,
    rng: &mut RandomSource,
) -> Result<EvalSummary> {
    let mut cache: Vec<Option<Slate>> = vec![None; env.n_states()];
    let mut returns = Vec::with_capacity(episodes);
    let mut steps = 0;
    for _ in 0..episodes {
        let mut s = env.initial_state(rng);
        let mut total = 0.0;
        for _ in 0..max_episode_steps {
            let i = s.index().expect("live state");
            if cache[i].is_none() {
                cache[i] = Some(agent.greedy_action(env, s)?);
            }
            let rec = env.step(s, cache[i].as_ref().unwrap(), rng)?;
            total += rec.reward;
            steps += 1;
            if rec.terminal || rec.next_state.is_terminal() {
                break;
            }
            s = rec.next_state;
        }
        returns.push(total);
    }
    Ok(EvalSummary {
        mean_return: mean(&returns),
        std_return: population_std(&returns),
        episodes,
        steps,
    })
}

/// Trains one agent on one seed, evaluating at step 0 and every
/// `eval_every` steps. Returns the rows and the trained agent.
pub fn run_seed(config: &ExperimentConfig, env: &EnvironmentSpec, seed: u64) -> Result<(Vec<EvalRow>, Agent)> {
    let mut streams = SeedStreams::new(seed);
    let mut agent = Agent::new(config.agent.clone(), env, &mut streams.init)?;

    let fatal;
    let base: &dyn SlateMdp = if config.fatal_failure {
        fatal = wrap_fatal_failure(env);
        &fatal
    } else {
        env
    };
    let risky;
    let train: &dyn SlateMdp = if config.agent.alpha != 1.0 {
        risky = wrap_risk_seeking(base, config.agent.alpha)?;
        &risky
    } else {
        base
    };

    let mut rows = Vec::new();
    let mut eval_block = |step: u64, agent: &Agent, rng: &mut RandomSource| -> Result<()> {
        let e = evaluate(agent, env, config.eval_episodes, config.max_episode_steps, rng)?;
        rows.push(EvalRow {
            step,
            seed,
            mean_return: e.mean_return,
            std_return: e.std_return,
            episodes: e.episodes,
        });
        Ok(())
    };
    eval_block(0, &agent, &mut streams.eval)?;

    let rng = &mut streams.train;
    let mut s = train.initial_state(rng);
    let mut episode_steps = 0;
    for t in 1..=config.train_steps {
        let slate = agent.act(train, s, rng)?;
        let rec = train.step(s, &slate, rng)?;
        let (next, done) = (rec.next_state, rec.terminal || rec.next_state.is_terminal());
        agent.learn_step(train, rec, rng)?;
        episode_steps += 1;
        if done || episode_steps >= config.max_episode_steps {
            s = train.initial_state(rng);
            episode_steps = 0;
        } else {
            s = next;
        }
        if t % config.eval_every == 0 {
            eval_block(t, &agent, &mut streams.eval)?;
        }
    }
    Ok((rows, agent))
}

/// Runs every seed in order. `on_seed` sees each trained agent.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    mut on_seed: impl FnMut(u64, &Agent) -> Result<()>,
) -> Result<RunMetrics> {
    config.validate()?;
    let env = config.env.load()?;
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let (r, agent) = run_seed(config, &env, seed)?;
        on_seed(seed, &agent)?;
        rows.extend(r);
    }
    Ok(RunMetrics::new(rows, config.window))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunMetrics> {
    run_experiment_with(config, |_, _| Ok(()))
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub env_hash: String,
    pub final_return: Option<f64>,
}

/// Writes `metrics.csv` and `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, env_hash: &str, metrics: &RunMetrics) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics.to_csv())?;
    let manifest = RunManifest {
        config: config.clone(),
        seeds: config.seeds.clone(),
        env_hash: env_hash.to_string(),
        final_return: metrics.final_return(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
