//! Slate Q-learning agents.
//!
//! * [`AgentKind::TopK`] learns single-action values at slate size 1 and
//!   presents the `l` best actions.
//! * [`AgentKind::FullSlate`] learns `Q(s, slate)` and builds slates with the
//!   sequential greedy rule over all candidates.
//! * [`AgentKind::DpgKnn`] adds a deterministic policy that emits one
//!   proto-action per slot; each slot's greedy choice is restricted to the
//!   candidates nearest to its proto-action. Each proto-action is projected
//!   onto the smallest ball around the origin that holds every item feature
//!   vector.

mod knn;
mod select;

pub use knn::{knn_query, squared_distance, KnnIndex};
pub use select::{
    greedy_slate, q_value, random_slate, top_k_slate, Encoding, GreedyOutcome, NetScorer,
    PreparedScorer, SlateScorer, MAX_JOINT_INPUTS,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::SlateMdp;
use crate::error::{Error, Result};
use crate::memory::{ReplayBuffer, DEFAULT_CAPACITY};
use crate::neural::{Activation, MlpNetwork, TargetPair};
use crate::types::{ActionId, FeatureTable, Slate, StateId, TransitionRecord};
use crate::RandomSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "topk")]
    TopK,
    #[serde(rename = "full")]
    FullSlate,
    #[serde(rename = "dpgknn")]
    DpgKnn,
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topk" => Ok(AgentKind::TopK),
            "full" => Ok(AgentKind::FullSlate),
            "dpgknn" => Ok(AgentKind::DpgKnn),
            other => Err(Error::config("agent", format!("unknown agent kind {other:?}"))),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::TopK => "topk",
            AgentKind::FullSlate => "full",
            AgentKind::DpgKnn => "dpgknn",
        })
    }
}

/// How many nearest candidates each slot may choose from.
///
/// Written as `all`, a count such as `5`, or a percentage such as `10%`
/// (rounded up, at least one).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KnnK {
    All,
    Count(usize),
    Fraction(f64),
}

impl KnnK {
    pub fn resolve(self, candidates: usize) -> usize {
        let k = match self {
            KnnK::All => candidates,
            KnnK::Count(k) => k,
            KnnK::Fraction(f) => (f * candidates as f64).ceil() as usize,
        };
        k.clamp(1, candidates.max(1))
    }
}

impl Default for KnnK {
    fn default() -> Self {
        KnnK::Fraction(0.1)
    }
}

impl FromStr for KnnK {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("knn_k", format!("{s:?} is not `all`, a count, or a percentage"));
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(KnnK::All);
        }
        if let Some(p) = s.strip_suffix('%') {
            let f: f64 = p.trim().parse().map_err(|_| bad())?;
            if !(f > 0.0 && f <= 100.0) {
                return Err(bad());
            }
            return Ok(KnnK::Fraction(f / 100.0));
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(KnnK::Count(k)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for KnnK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnnK::All => write!(f, "all"),
            KnnK::Count(k) => write!(f, "{k}"),
            KnnK::Fraction(x) => write!(f, "{}%", x * 100.0),
        }
    }
}

impl TryFrom<String> for KnnK {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<KnnK> for String {
    fn from(k: KnnK) -> String {
        k.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub slate_size: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub eta: f64,
    /// Learning rate of the policy network.
    pub policy_eta: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub knn_k: KnnK,
    /// Exponent of the training reward transform; applied by the harness.
    pub alpha: f64,
    pub q_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    pub activation: Activation,
    pub encoding: Encoding,
    /// Bootstrap slates chosen by the target networks are reused for this
    /// many learning steps per next state; their values are always fresh.
    /// `1` recomputes every slate.
    pub target_refresh: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            kind: AgentKind::FullSlate,
            slate_size: 10,
            epsilon: 0.1,
            gamma: 0.99,
            eta: 1e-3,
            policy_eta: 1e-3,
            tau: 1e-4,
            batch_size: 32,
            buffer_capacity: DEFAULT_CAPACITY,
            knn_k: KnnK::default(),
            alpha: 1.0,
            q_hidden: vec![100, 100],
            policy_hidden: vec![25, 25],
            activation: Activation::Relu,
            encoding: Encoding::Concat,
            target_refresh: 1,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slate_size == 0 {
            return Err(Error::config("slate_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("epsilon", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must be in [0, 1]"));
        }
        for (field, v) in [("eta", self.eta), ("policy_eta", self.policy_eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("tau", "must be in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::config("buffer_capacity", "must be positive"));
        }
        match self.knn_k {
            KnnK::Count(0) => return Err(Error::config("knn_k", "must be at least 1")),
            KnnK::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::config("knn_k", "fraction must be in (0, 1]"))
            }
            _ => {}
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be positive"));
        }
        if self.q_hidden.contains(&0) || self.policy_hidden.contains(&0) {
            return Err(Error::config("q_hidden", "hidden layers must be non-empty"));
        }
        if self.kind == AgentKind::DpgKnn && self.encoding != Encoding::Concat {
            return Err(Error::config(
                "encoding",
                "the policy gradient needs the concatenated feature encoding",
            ));
        }
        if self.target_refresh == 0 {
            return Err(Error::config("target_refresh", "must be at least 1"));
        }
        Ok(())
    }

    /// Slots of the value network input.
    pub fn q_slots(&self) -> usize {
        match self.kind {
            AgentKind::TopK => 1,
            _ => self.slate_size,
        }
    }

    /// Slate length presented while training.
    pub fn train_slate_size(&self) -> usize {
        self.q_slots()
    }
}

/// What one call to [`Agent::learn_step`] did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearnDiagnostics {
    /// False while the buffer holds fewer than `batch_size` records.
    pub updated: bool,
    pub loss: f64,
    pub mean_target: f64,
    pub max_target: f64,
    /// Mean `Q(s, pi(s))` over the batch before the policy step.
    pub policy_value: Option<f64>,
}

pub struct Agent {
    config: AgentConfig,
    n_items: usize,
    feature_dim: usize,
    proto_radius: f64,
    q: TargetPair,
    policy: Option<TargetPair>,
    buffer: ReplayBuffer,
    learn_steps: u64,
    target_cache: Vec<Option<(u64, Slate)>>,
}

/// Largest feature norm of the table, or 1 for an all-zero table.
fn feature_radius<T: FeatureTable + ?Sized>(table: &T) -> f64 {
    let r = (0..table.n_items())
        .map(|i| table.item_features(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Projects each `d`-sized chunk of `u` onto the ball of radius `r`.
fn project_protos(u: &[f64], d: usize, r: f64) -> Vec<f64> {
    let mut out = u.to_vec();
    for c in out.chunks_mut(d) {
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > r {
            c.iter_mut().for_each(|x| *x *= r / n);
        }
    }
    out
}

/// Pulls a gradient with respect to the projected protos back to `u`.
fn project_protos_backward(u: &[f64], g: &[f64], d: usize, r: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    for (c, gc) in u.chunks(d).zip(out.chunks_mut(d)) {
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > r {
            let radial: f64 = c.iter().zip(gc.iter()).map(|(x, y)| x * y).sum::<f64>() / (n * n);
            for (y, x) in gc.iter_mut().zip(c) {
                *y = (r / n) * (*y - radial * x);
            }
        }
    }
    out
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

impl Agent {
    pub fn new<T: FeatureTable + ?Sized>(config: AgentConfig, table: &T, rng: &mut RandomSource) -> Result<Self> {
        config.validate()?;
        let n = table.n_items();
        let d = table.feature_dim();
        let input = config.encoding.input_dim(n, d, config.q_slots())?;
        let qnet = MlpNetwork::new(
            &layer_sizes(input, &config.q_hidden, 1),
            config.activation,
            rng,
        )?;
        let q = TargetPair::new(qnet, config.tau)?;
        let policy = if config.kind == AgentKind::DpgKnn {
            let pnet = MlpNetwork::new(
                &layer_sizes(d, &config.policy_hidden, d * config.slate_size),
                config.activation,
                rng,
            )?;
            Some(TargetPair::new(pnet, config.tau)?)
        } else {
            None
        };
        Ok(Agent {
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            config,
            n_items: n,
            feature_dim: d,
            proto_radius: feature_radius(table),
            q,
            policy,
            learn_steps: 0,
            target_cache: vec![None; n],
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn q_pair(&self) -> &TargetPair {
        &self.q
    }

    pub fn q_pair_mut(&mut self) -> &mut TargetPair {
        &mut self.q
    }

    pub fn policy_pair(&self) -> Option<&TargetPair> {
        self.policy.as_ref()
    }

    pub fn policy_pair_mut(&mut self) -> Option<&mut TargetPair> {
        self.policy.as_mut()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn learn_steps(&self) -> u64 {
        self.learn_steps
    }

    fn check_table<T: FeatureTable + ?Sized>(&self, table: &T) -> Result<()> {
        if table.n_items() != self.n_items {
            return Err(Error::Shape {
                expected: self.n_items,
                actual: table.n_items(),
            });
        }
        if table.feature_dim() != self.feature_dim {
            return Err(Error::Shape {
                expected: self.feature_dim,
                actual: table.feature_dim(),
            });
        }
        Ok(())
    }

    /// Slots per proto-action list emitted by the policy for state `s`.
    pub fn proto_actions<T: FeatureTable + ?Sized>(
        &self,
        table: &T,
        s: StateId,
        target: bool,
    ) -> Result<Option<Vec<f64>>> {
        let Some(pair) = &self.policy else {
            return Ok(None);
        };
        let net = if target { &pair.target } else { &pair.live };
        let si = live_index(s, self.n_items)?;
        let u = net.forward(table.item_features(si))?;
        Ok(Some(project_protos(&u, self.feature_dim, self.proto_radius)))
    }

    /// Per-slot choice sets of the agent's selection rule.
    fn choice_sets<E: SlateMdp + ?Sized>(&self, env: &E, s: StateId, target: bool) -> Result<Vec<Vec<ActionId>>> {
        let candidates = env.candidate_actions(s);
        if candidates.is_empty() {
            return Err(Error::domain(format!("state {s} has no candidate actions")));
        }
        match self.proto_actions(env, s, target)? {
            None => Ok(vec![candidates.to_vec()]),
            Some(protos) => {
                let d = self.feature_dim;
                let k = self.config.knn_k.resolve(candidates.len());
                protos
                    .chunks(d)
                    .map(|p| knn_query(env, candidates, p, k))
                    .collect()
            }
        }
    }

    /// Greedy slate of length `l` and its value under the live or target
    /// networks. Top-K agents rank single-action values instead.
    fn select<E: SlateMdp + ?Sized>(&self, env: &E, s: StateId, l: usize, target: bool) -> Result<(Slate, f64)> {
        if s.is_terminal() {
            return Err(Error::domain("cannot act in the end state"));
        }
        let qnet = if target { &self.q.target } else { &self.q.live };
        let sets = self.choice_sets(env, s, target)?;
        let slots = self.config.q_slots();
        let run = |scorer: &mut dyn SlateScorer| -> Result<(Slate, f64)> {
            if self.config.kind == AgentKind::TopK {
                let slate = top_k_slate(scorer, &sets[0], l)?;
                let v = scorer.padded_value(&[], slate[0])?;
                Ok((slate, v))
            } else {
                let g = greedy_slate(scorer, &sets)?;
                Ok((g.slate, g.value))
            }
        };
        match self.config.encoding {
            Encoding::Concat => {
                let mut union: Vec<ActionId> = sets.iter().flatten().copied().collect();
                union.sort_unstable();
                union.dedup();
                let mut scorer = PreparedScorer::new(qnet, env, s, slots, &union)?;
                run(&mut scorer)
            }
            Encoding::Joint => {
                let mut scorer = NetScorer::new(qnet, env, s, Encoding::Joint, slots);
                run(&mut scorer)
            }
        }
    }

    /// The evaluation slate: no exploration, full slate size.
    pub fn greedy_action<E: SlateMdp + ?Sized>(&self, env: &E, s: StateId) -> Result<Slate> {
        self.check_table(env)?;
        Ok(self.select(env, s, self.config.slate_size, false)?.0)
    }

    /// Epsilon-greedy training slate.
    pub fn act<E: SlateMdp + ?Sized>(&self, env: &E, s: StateId, rng: &mut RandomSource) -> Result<Slate> {
        self.check_table(env)?;
        if s.is_terminal() {
            return Err(Error::domain("cannot act in the end state"));
        }
        let l = self.config.train_slate_size();
        if self.config.epsilon > 0.0 && rng.random::<f64>() < self.config.epsilon {
            return random_slate(env.candidate_actions(s), l, rng);
        }
        Ok(self.select(env, s, l, false)?.0)
    }

    /// `Q(s, slate)` under the live network.
    pub fn q_value<T: FeatureTable + ?Sized>(&self, table: &T, s: StateId, slate: &[ActionId]) -> Result<f64> {
        q_value(&self.q.live, table, s, slate, self.config.encoding)
    }

    /// `Q'(s', a')` with `a'` chosen by the target networks.
    fn bootstrap<E: SlateMdp + ?Sized>(&mut self, env: &E, next: StateId) -> Result<f64> {
        let l = self.config.train_slate_size();
        let refresh = self.config.target_refresh;
        if refresh <= 1 {
            return Ok(self.select(env, next, l, true)?.1);
        }
        let i = live_index(next, self.n_items)?;
        if let Some((stamp, slate)) = &self.target_cache[i] {
            if self.learn_steps - stamp < refresh {
                return q_value(&self.q.target, env, next, slate, self.config.encoding);
            }
        }
        let (slate, v) = self.select(env, next, l, true)?;
        self.target_cache[i] = Some((self.learn_steps, slate));
        Ok(v)
    }

    /// Stores `record`, then performs one minibatch update of the value
    /// network (and of the policy for policy-gradient agents) followed by a
    /// soft update of every target network.
    pub fn learn_step<E: SlateMdp + ?Sized>(
        &mut self,
        env: &E,
        record: TransitionRecord,
        rng: &mut RandomSource,
    ) -> Result<LearnDiagnostics> {
        self.check_table(env)?;
        let slots = self.config.q_slots();
        if record.slate.len() != slots {
            return Err(Error::Shape {
                expected: slots,
                actual: record.slate.len(),
            });
        }
        self.buffer.push(record);
        let b = self.config.batch_size;
        if self.buffer.len() < b {
            return Ok(LearnDiagnostics::default());
        }
        let batch: Vec<TransitionRecord> = self
            .buffer
            .sample_indices(b, rng)?
            .into_iter()
            .map(|i| self.buffer.get(i).unwrap().clone())
            .collect();

        let gamma = self.config.gamma;
        let mut grads = self.q.live.zero_gradients();
        let mut input = Vec::new();
        let (mut loss, mut sum_y, mut max_y) = (0.0, 0.0, f64::NEG_INFINITY);
        for rec in &batch {
            let y = if rec.terminal || rec.next_state.is_terminal() {
                rec.reward
            } else {
                rec.reward + gamma * self.bootstrap(env, rec.next_state)?
            };
            self.config
                .encoding
                .encode(env, rec.state, &rec.slate, &mut input)?;
            let trace = self.q.live.forward_trace(&input)?;
            let q = trace.output()[0];
            loss += (y - q) * (y - q);
            sum_y += y;
            max_y = max_y.max(y);
            self.q
                .live
                .backward(&trace, &[2.0 * (q - y) / b as f64], Some(&mut grads))?;
        }
        self.q.live.sgd_step(&grads, self.config.eta)?;

        let policy_value = if self.policy.is_some() {
            Some(self.policy_step(env, &batch)?)
        } else {
            None
        };

        self.q.soft_update();
        if let Some(p) = &mut self.policy {
            p.soft_update();
        }
        self.learn_steps += 1;
        Ok(LearnDiagnostics {
            updated: true,
            loss: loss / b as f64,
            mean_target: sum_y / b as f64,
            max_target: max_y,
            policy_value,
        })
    }

    /// One ascent step of `Q(s, pi(s))` through the chain rule.
    fn policy_step<T: FeatureTable + ?Sized>(&mut self, table: &T, batch: &[TransitionRecord]) -> Result<f64> {
        let d = self.feature_dim;
        let r = self.proto_radius;
        let b = batch.len() as f64;
        let pair = self.policy.as_mut().expect("policy agent");
        let mut grads = pair.live.zero_gradients();
        let mut input = Vec::with_capacity(d * (self.config.slate_size + 1));
        let mut total = 0.0;
        for rec in batch {
            let si = live_index(rec.state, self.n_items)?;
            let x = table.item_features(si);
            let trace = pair.live.forward_trace(x)?;
            let protos = project_protos(trace.output(), d, r);
            input.clear();
            input.extend_from_slice(x);
            input.extend_from_slice(&protos);
            let qtrace = self.q.live.forward_trace(&input)?;
            total += qtrace.output()[0];
            let dq = self.q.live.backward(&qtrace, &[1.0], None)?;
            let ascent: Vec<f64> = dq[d..].iter().map(|g| -g / b).collect();
            let seed = project_protos_backward(trace.output(), &ascent, d, r);
            pair.live.backward(&trace, &seed, Some(&mut grads))?;
        }
        pair.live.sgd_step(&grads, self.config.policy_eta)?;
        Ok(total / b)
    }

    /// Hex digest over all live and target parameters.
    pub fn checksum(&self) -> String {
        let mut s = self.q.live.checksum();
        s.push_str(&self.q.target.checksum());
        if let Some(p) = &self.policy {
            s.push_str(&p.live.checksum());
            s.push_str(&p.target.checksum());
        }
        s
    }
}

fn live_index(s: StateId, n: usize) -> Result<usize> {
    match s.index() {
        Some(i) if i < n => Ok(i),
        Some(i) => Err(Error::InvalidId { id: i, limit: n }),
        None => Err(Error::domain("the end state has no features")),
    }
}

pub const AGENT_CHECKPOINT_FORMAT: &str = "slate-agent";
pub const AGENT_CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct AgentCheckpoint {
    format: String,
    version: u32,
    config: AgentConfig,
    n_items: usize,
    feature_dim: usize,
    proto_radius: f64,
    q: TargetPair,
    policy: Option<TargetPair>,
}

impl Agent {
    /// Networks and configuration; the replay buffer is not saved.
    pub fn to_checkpoint(&self) -> Result<String> {
        Ok(serde_json::to_string(&AgentCheckpoint {
            format: AGENT_CHECKPOINT_FORMAT.into(),
            version: AGENT_CHECKPOINT_VERSION,
            config: self.config.clone(),
            n_items: self.n_items,
            feature_dim: self.feature_dim,
            proto_radius: self.proto_radius,
            q: self.q.clone(),
            policy: self.policy.clone(),
        })?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let ck: AgentCheckpoint = serde_json::from_str(text)?;
        if ck.format != AGENT_CHECKPOINT_FORMAT || ck.version != AGENT_CHECKPOINT_VERSION {
            return Err(Error::config(
                "checkpoint",
                format!("unsupported checkpoint {} v{}", ck.format, ck.version),
            ));
        }
        ck.config.validate()?;
        ck.q.live.validate()?;
        ck.q.target.validate()?;
        let input = ck.config.encoding.input_dim(ck.n_items, ck.feature_dim, ck.config.q_slots())?;
        if ck.q.live.input_dim() != input || !ck.q.live.same_architecture(&ck.q.target) {
            return Err(Error::config("checkpoint", "value network does not match the configuration"));
        }
        if let Some(p) = &ck.policy {
            p.live.validate()?;
            p.target.validate()?;
            if p.live.input_dim() != ck.feature_dim
                || p.live.output_dim() != ck.feature_dim * ck.config.slate_size
                || !p.live.same_architecture(&p.target)
            {
                return Err(Error::config("checkpoint", "policy network does not match the configuration"));
            }
        }
        if !(ck.proto_radius.is_finite() && ck.proto_radius > 0.0) {
            return Err(Error::config("checkpoint", "proto radius must be positive and finite"));
        }
        if (ck.config.kind == AgentKind::DpgKnn) != ck.policy.is_some() {
            return Err(Error::config("checkpoint", "policy network presence does not match the agent kind"));
        }
        Ok(Agent {
            buffer: ReplayBuffer::new(ck.config.buffer_capacity)?,
            target_cache: vec![None; ck.n_items],
            config: ck.config,
            n_items: ck.n_items,
            feature_dim: ck.feature_dim,
            proto_radius: ck.proto_radius,
            q: ck.q,
            policy: ck.policy,
            learn_steps: 0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Agent::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}
