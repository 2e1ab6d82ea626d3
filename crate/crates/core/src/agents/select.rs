//! Slate construction from a value network.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::MlpNetwork;
use crate::types::{write_slate_features, ActionId, FeatureTable, Slate, StateId};
use crate::RandomSource;

/// Largest one-hot input accepted by [`Encoding::Joint`].
pub const MAX_JOINT_INPUTS: usize = 1 << 20;

/// Input encoding of the value network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// State features followed by each slot's action features.
    #[default]
    Concat,
    /// One indicator per `(state, slot actions)` tuple; with a linear head
    /// this is a lookup table.
    Joint,
}

impl Encoding {
    pub fn input_dim(self, n_items: usize, feature_dim: usize, slots: usize) -> Result<usize> {
        match self {
            Encoding::Concat => Ok(feature_dim * (slots + 1)),
            Encoding::Joint => {
                let mut size: usize = 1;
                for _ in 0..=slots {
                    size = size
                        .checked_mul(n_items)
                        .filter(|&s| s <= MAX_JOINT_INPUTS)
                        .ok_or_else(|| {
                            Error::config("encoding", "joint encoding is too large for this environment")
                        })?;
                }
                Ok(size)
            }
        }
    }

    /// Writes the encoding of `(s, slate)` into `out` (cleared first).
    pub fn encode<T: FeatureTable + ?Sized>(
        self,
        table: &T,
        s: StateId,
        slate: &[ActionId],
        out: &mut Vec<f64>,
    ) -> Result<()> {
        out.clear();
        match self {
            Encoding::Concat => write_slate_features(out, slate, s, table),
            Encoding::Joint => {
                let n = table.n_items();
                let dim = self.input_dim(n, table.feature_dim(), slate.len())?;
                let si = s
                    .index()
                    .ok_or_else(|| Error::domain("the end state has no features"))?;
                let mut k = si;
                if si >= n {
                    return Err(Error::InvalidId { id: si, limit: n });
                }
                for a in slate {
                    if a.0 >= n {
                        return Err(Error::InvalidId { id: a.0, limit: n });
                    }
                    k = k * n + a.0;
                }
                out.resize(dim, 0.0);
                out[k] = 1.0;
                Ok(())
            }
        }
    }
}

/// `Q(s, slate)` computed by a single forward pass.
pub fn q_value<T: FeatureTable + ?Sized>(
    qnet: &MlpNetwork,
    table: &T,
    s: StateId,
    slate: &[ActionId],
    encoding: Encoding,
) -> Result<f64> {
    let mut buf = Vec::new();
    encoding.encode(table, s, slate, &mut buf)?;
    qnet.forward_scalar(&buf)
}

/// Values of padded partial slates, as used by the sequential greedy rule.
pub trait SlateScorer {
    /// Number of slots `l` of the scored slates.
    fn slots(&self) -> usize;

    /// `Q(s, prefix ++ (a, a, ..., a))`, padded to `l` slots.
    fn padded_value(&mut self, prefix: &[ActionId], a: ActionId) -> Result<f64>;
}

/// Scores by encoding each padded slate and running the full network.
pub struct NetScorer<'a, T: ?Sized> {
    net: &'a MlpNetwork,
    table: &'a T,
    state: StateId,
    encoding: Encoding,
    slots: usize,
    slate: Vec<ActionId>,
    buf: Vec<f64>,
}

impl<'a, T: FeatureTable + ?Sized> NetScorer<'a, T> {
    pub fn new(net: &'a MlpNetwork, table: &'a T, state: StateId, encoding: Encoding, slots: usize) -> Self {
        NetScorer {
            net,
            table,
            state,
            encoding,
            slots,
            slate: Vec::with_capacity(slots),
            buf: Vec::new(),
        }
    }
}

impl<T: FeatureTable + ?Sized> SlateScorer for NetScorer<'_, T> {
    fn slots(&self) -> usize {
        self.slots
    }

    fn padded_value(&mut self, prefix: &[ActionId], a: ActionId) -> Result<f64> {
        self.slate.clear();
        self.slate.extend_from_slice(prefix);
        self.slate.resize(self.slots, a);
        self.encoding
            .encode(self.table, self.state, &self.slate, &mut self.buf)?;
        self.net.forward_scalar(&self.buf)
    }
}

/// Scores concatenated encodings by splitting the first layer into per-slot
/// blocks. The state block and every `(action, slot)` block are projected
/// once; each query then costs one vector sum plus the remaining layers.
pub struct PreparedScorer<'a> {
    net: &'a MlpNetwork,
    slots: usize,
    width: usize,
    base: Vec<f64>,
    /// Position of an action in `proj`, by action index.
    position: Vec<usize>,
    /// `proj[(p * slots + j) * width..]`: block `j` applied to action `p`.
    proj: Vec<f64>,
    /// Suffix sums of `proj` over slots `j..l`.
    suffix: Vec<f64>,
    prefix: Vec<ActionId>,
    prefix_sum: Vec<f64>,
    pre: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> PreparedScorer<'a> {
    pub fn new<T: FeatureTable + ?Sized>(
        net: &'a MlpNetwork,
        table: &T,
        state: StateId,
        slots: usize,
        actions: &[ActionId],
    ) -> Result<Self> {
        let d = table.feature_dim();
        let expected = d * (slots + 1);
        if net.input_dim() != expected || net.output_dim() != 1 {
            return Err(Error::Shape {
                expected,
                actual: net.input_dim(),
            });
        }
        let n = table.n_items();
        let si = state
            .index()
            .ok_or_else(|| Error::domain("the end state has no features"))?;
        if si >= n {
            return Err(Error::InvalidId { id: si, limit: n });
        }
        let width = net.layers()[0].outputs;
        let mut base = net.layers()[0].biases.clone();
        net.first_layer_block(0, table.item_features(si), &mut base);

        let mut position = vec![usize::MAX; n];
        let mut distinct = Vec::with_capacity(actions.len());
        for &a in actions {
            if a.0 >= n {
                return Err(Error::InvalidId { id: a.0, limit: n });
            }
            if position[a.0] == usize::MAX {
                position[a.0] = distinct.len();
                distinct.push(a);
            }
        }
        let block = slots * width;
        let mut proj = vec![0.0; distinct.len() * block];
        let mut suffix = vec![0.0; distinct.len() * block];
        for (p, a) in distinct.iter().enumerate() {
            let x = table.item_features(a.0);
            for j in 0..slots {
                let at = (p * slots + j) * width;
                net.first_layer_block(d * (j + 1), x, &mut proj[at..at + width]);
            }
            for j in (0..slots).rev() {
                let at = (p * slots + j) * width;
                for u in 0..width {
                    let below = if j + 1 < slots { suffix[at + width + u] } else { 0.0 };
                    suffix[at + u] = proj[at + u] + below;
                }
            }
        }
        Ok(PreparedScorer {
            net,
            slots,
            width,
            prefix_sum: base.clone(),
            base,
            position,
            proj,
            suffix,
            prefix: Vec::with_capacity(slots),
            pre: vec![0.0; width],
            scratch: Vec::new(),
        })
    }

    fn slot_of(&self, a: ActionId) -> Result<usize> {
        match self.position.get(a.0) {
            Some(&p) if p != usize::MAX => Ok(p),
            _ => Err(Error::domain(format!("action {a} was not prepared"))),
        }
    }

    fn sync_prefix(&mut self, prefix: &[ActionId]) -> Result<()> {
        if prefix == self.prefix.as_slice() {
            return Ok(());
        }
        let keep = self
            .prefix
            .iter()
            .zip(prefix)
            .take_while(|(x, y)| x == y)
            .count();
        if keep < self.prefix.len() {
            self.prefix.clear();
            self.prefix_sum.copy_from_slice(&self.base);
            return self.sync_prefix(prefix);
        }
        for (j, &a) in prefix.iter().enumerate().skip(keep) {
            let at = (self.slot_of(a)? * self.slots + j) * self.width;
            for u in 0..self.width {
                self.prefix_sum[u] += self.proj[at + u];
            }
            self.prefix.push(a);
        }
        Ok(())
    }
}

impl SlateScorer for PreparedScorer<'_> {
    fn slots(&self) -> usize {
        self.slots
    }

    fn padded_value(&mut self, prefix: &[ActionId], a: ActionId) -> Result<f64> {
        if prefix.len() >= self.slots {
            return Err(Error::Shape {
                expected: self.slots - 1,
                actual: prefix.len(),
            });
        }
        self.sync_prefix(prefix)?;
        let at = (self.slot_of(a)? * self.slots + prefix.len()) * self.width;
        for u in 0..self.width {
            self.pre[u] = self.prefix_sum[u] + self.suffix[at + u];
        }
        Ok(self
            .net
            .forward_from_first_preactivation(&self.pre, &mut self.scratch))
    }
}

/// Result of a sequential greedy construction.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyOutcome {
    pub slate: Slate,
    /// Value of the completed slate (the last slot's maximum).
    pub value: f64,
    pub q_calls: usize,
}

/// Higher value first, then lower id.
fn better(value: f64, a: ActionId, best: Option<(f64, ActionId)>) -> bool {
    match best {
        None => true,
        Some((bv, ba)) => match value.total_cmp(&bv) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => a < ba,
        },
    }
}

/// Fills the slots one at a time. Slot `i` is the argmax over its choice set
/// of `Q(s, a_1, ..., a_{i-1}, a, a, ..., a)`, ties by ascending id.
/// `choices` holds either one shared set or one set per slot.
pub fn greedy_slate<S: SlateScorer + ?Sized>(
    scorer: &mut S,
    choices: &[Vec<ActionId>],
) -> Result<GreedyOutcome> {
    let l = scorer.slots();
    if l == 0 {
        return Err(Error::domain("slate size must be positive"));
    }
    if choices.len() != 1 && choices.len() != l {
        return Err(Error::Shape {
            expected: l,
            actual: choices.len(),
        });
    }
    let mut chosen: Vec<ActionId> = Vec::with_capacity(l);
    let mut calls = 0;
    let mut value = f64::NAN;
    for i in 0..l {
        let set = &choices[if choices.len() == 1 { 0 } else { i }];
        if set.is_empty() {
            return Err(Error::domain(format!("empty choice set for slot {}", i + 1)));
        }
        let mut best: Option<(f64, ActionId)> = None;
        for &a in set {
            let v = scorer.padded_value(&chosen, a)?;
            calls += 1;
            if v.is_nan() {
                return Err(Error::NumericalFault("value network produced NaN".into()));
            }
            if better(v, a, best) {
                best = Some((v, a));
            }
        }
        let (v, a) = best.unwrap();
        chosen.push(a);
        value = v;
    }
    Ok(GreedyOutcome {
        slate: Slate::new(chosen)?,
        value,
        q_calls: calls,
    })
}

/// The `l` best candidates by single-action value, best first, ties by
/// ascending id; the sorted list is repeated when there are fewer than `l`.
pub fn top_k_slate<S: SlateScorer + ?Sized>(
    scorer: &mut S,
    candidates: &[ActionId],
    l: usize,
) -> Result<Slate> {
    if candidates.is_empty() {
        return Err(Error::domain("no candidate actions"));
    }
    if l == 0 {
        return Err(Error::domain("slate size must be positive"));
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for &a in candidates {
        let v = scorer.padded_value(&[], a)?;
        if v.is_nan() {
            return Err(Error::NumericalFault("value network produced NaN".into()));
        }
        scored.push((v, a));
    }
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    scored.dedup_by_key(|p| p.1);
    Slate::new(scored.iter().cycle().take(l).map(|p| p.1).collect())
}

/// A uniformly random ordered slate: every slot is an independent uniform
/// draw from the candidates, so repeats are possible.
pub fn random_slate(candidates: &[ActionId], l: usize, rng: &mut RandomSource) -> Result<Slate> {
    if candidates.is_empty() {
        return Err(Error::domain("no candidate actions"));
    }
    if l == 0 {
        return Err(Error::domain("slate size must be positive"));
    }
    Slate::new((0..l).map(|_| candidates[rng.random_range(0..candidates.len())]).collect())
}
