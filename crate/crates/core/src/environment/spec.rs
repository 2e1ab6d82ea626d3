use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExecutionDistribution, Outcome, SlateMdp};
use crate::error::{Error, Result};
use crate::types::{ActionId, Executed, FeatureTable, Slate, StateId, TransitionRecord};
use crate::RandomSource;

pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on the number of candidate actions per state.
pub const MAX_OUT_DEGREE: usize = 60;

/// How a slot's position scales its action's execution mass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionDiscount {
    /// `w / log2(i + 1)`: later slots are less likely to be executed.
    #[default]
    Divide,
    /// `w * log2(i + 1)`: the literal multiplicative reading.
    Multiply,
}

impl PositionDiscount {
    /// Factor for 1-based slot `position`.
    pub fn factor(self, position: usize) -> f64 {
        let l = ((position + 1) as f64).log2();
        match self {
            PositionDiscount::Divide => 1.0 / l,
            PositionDiscount::Multiply => l,
        }
    }
}

/// On-disk form of an environment. Also the constructor input of
/// [`EnvironmentSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecParts {
    pub version: u32,
    pub n_states: usize,
    pub feature_dim: usize,
    pub slate_size: usize,
    pub fail_weight: f64,
    pub p_end_fail: f64,
    pub p_end_exec: f64,
    pub rewards: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    /// Per state: `(action, weight)` pairs with positive weight.
    pub edges: Vec<Vec<(usize, f64)>>,
    #[serde(default)]
    pub position_discount: PositionDiscount,
    /// States whose entry ends the episode. They are never start states or
    /// teleport targets.
    #[serde(default)]
    pub absorbing: Vec<usize>,
}

/// A validated graph environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentSpec {
    parts: SpecParts,
    candidates: Vec<Vec<ActionId>>,
    absorbing_mask: Vec<bool>,
    live: Vec<StateId>,
}

fn check_probability(field: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(field, format!("{p} is not a probability")));
    }
    Ok(())
}

impl EnvironmentSpec {
    pub fn new(mut parts: SpecParts) -> Result<Self> {
        let n = parts.n_states;
        let d = parts.feature_dim;
        if parts.version != FORMAT_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported version {}", parts.version),
            ));
        }
        if n == 0 {
            return Err(Error::config("n_states", "must be positive"));
        }
        if d == 0 {
            return Err(Error::config("feature_dim", "must be positive"));
        }
        if parts.slate_size == 0 {
            return Err(Error::config("slate_size", "must be positive"));
        }
        if !(parts.fail_weight > 0.0 && parts.fail_weight.is_finite()) {
            return Err(Error::config("fail_weight", "must be positive and finite"));
        }
        check_probability("p_end_fail", parts.p_end_fail)?;
        check_probability("p_end_exec", parts.p_end_exec)?;
        if parts.rewards.len() != n {
            return Err(Error::config("rewards", format!("expected {n} entries")));
        }
        if let Some(r) = parts.rewards.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
            return Err(Error::config("rewards", format!("{r} is not a finite non-negative reward")));
        }
        if parts.features.len() != n {
            return Err(Error::config("features", format!("expected {n} rows")));
        }
        for (i, row) in parts.features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::config("features", format!("row {i} has length {}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("features", format!("row {i} is not finite")));
            }
        }
        if parts.edges.len() != n {
            return Err(Error::config("edges", format!("expected {n} rows")));
        }
        let mut candidates = Vec::with_capacity(n);
        for (i, row) in parts.edges.iter_mut().enumerate() {
            if row.is_empty() || row.len() > MAX_OUT_DEGREE {
                return Err(Error::config(
                    "edges",
                    format!("state {i} has {} candidates, need 1..={MAX_OUT_DEGREE}", row.len()),
                ));
            }
            row.sort_by_key(|(a, _)| *a);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::config("edges", format!("state {i} repeats action {}", w[0].0)));
                }
            }
            for &(a, w) in row.iter() {
                if a >= n {
                    return Err(Error::config("edges", format!("state {i} targets {a} >= {n}")));
                }
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::config("edges", format!("state {i} has weight {w}")));
                }
            }
            candidates.push(row.iter().map(|(a, _)| ActionId(*a)).collect());
        }
        let mut absorbing_mask = vec![false; n];
        parts.absorbing.sort_unstable();
        parts.absorbing.dedup();
        for &a in &parts.absorbing {
            if a >= n {
                return Err(Error::config("absorbing", format!("state {a} >= {n}")));
            }
            absorbing_mask[a] = true;
        }
        let live: Vec<StateId> = (0..n)
            .filter(|&i| !absorbing_mask[i])
            .map(StateId::new)
            .collect();
        if live.is_empty() {
            return Err(Error::config("absorbing", "every state is absorbing"));
        }
        Ok(EnvironmentSpec {
            parts,
            candidates,
            absorbing_mask,
            live,
        })
    }

    pub fn parts(&self) -> &SpecParts {
        &self.parts
    }

    pub fn into_parts(self) -> SpecParts {
        self.parts
    }

    pub fn reward(&self, s: usize) -> f64 {
        self.parts.rewards[s]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.parts.rewards
    }

    pub fn edges(&self, s: usize) -> &[(usize, f64)] {
        &self.parts.edges[s]
    }

    /// `w_{s,a}`, zero when `a` is not a candidate of `s`.
    pub fn weight(&self, s: usize, a: ActionId) -> f64 {
        let row = &self.parts.edges[s];
        row.binary_search_by_key(&a.0, |(b, _)| *b)
            .map_or(0.0, |i| row[i].1)
    }

    pub fn fail_weight(&self) -> f64 {
        self.parts.fail_weight
    }

    pub fn p_end_fail(&self) -> f64 {
        self.parts.p_end_fail
    }

    pub fn p_end_exec(&self) -> f64 {
        self.parts.p_end_exec
    }

    pub fn position_discount(&self) -> PositionDiscount {
        self.parts.position_discount
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        self.absorbing_mask[s]
    }

    /// Copy with a different slate size.
    pub fn with_slate_size(&self, slate_size: usize) -> Result<Self> {
        let mut parts = self.parts.clone();
        parts.slate_size = slate_size;
        EnvironmentSpec::new(parts)
    }

    pub fn with_position_discount(&self, discount: PositionDiscount) -> Self {
        let mut out = self.clone();
        out.parts.position_discount = discount;
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.parts)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        EnvironmentSpec::new(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        EnvironmentSpec::from_json(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the canonical (compact) serialization.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.parts).expect("spec serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    fn live_index(&self, s: StateId) -> Result<usize> {
        let i = s
            .index()
            .ok_or_else(|| Error::domain("the end state has no dynamics"))?;
        if i >= self.parts.n_states {
            return Err(Error::InvalidId {
                id: i,
                limit: self.parts.n_states,
            });
        }
        Ok(i)
    }

    fn check_slate(&self, slate: &[ActionId]) -> Result<()> {
        match slate.iter().find(|a| a.0 >= self.parts.n_states) {
            Some(a) => Err(Error::InvalidId {
                id: a.0,
                limit: self.parts.n_states,
            }),
            None => Ok(()),
        }
    }

    fn exec_terminal_probability(&self, a: usize) -> f64 {
        if self.absorbing_mask[a] {
            1.0
        } else {
            self.parts.p_end_exec
        }
    }
}

impl FeatureTable for EnvironmentSpec {
    fn feature_dim(&self) -> usize {
        self.parts.feature_dim
    }

    fn n_items(&self) -> usize {
        self.parts.n_states
    }

    fn item_features(&self, index: usize) -> &[f64] {
        &self.parts.features[index]
    }
}

fn push_split(out: &mut Vec<Outcome>, base: Outcome, p_terminal: f64) {
    let end = base.probability * p_terminal;
    let go = base.probability * (1.0 - p_terminal);
    if end > 0.0 {
        out.push(Outcome {
            probability: end,
            terminal: true,
            ..base
        });
    }
    if go > 0.0 {
        out.push(Outcome {
            probability: go,
            terminal: false,
            ..base
        });
    }
}

impl SlateMdp for EnvironmentSpec {
    fn n_states(&self) -> usize {
        self.parts.n_states
    }

    fn slate_size(&self) -> usize {
        self.parts.slate_size
    }

    fn candidate_actions(&self, s: StateId) -> &[ActionId] {
        match s.index() {
            Some(i) if i < self.parts.n_states => &self.candidates[i],
            _ => &[],
        }
    }

    fn execution_distribution(
        &self,
        s: StateId,
        slate: &[ActionId],
    ) -> Result<ExecutionDistribution> {
        let i = self.live_index(s)?;
        self.check_slate(slate)?;
        let discount = self.parts.position_discount;
        let mut masses: Vec<(ActionId, f64)> = Vec::with_capacity(slate.len());
        // Keep each action's earliest slot only.
        for (pos, &a) in slate.iter().enumerate() {
            if slate[..pos].contains(&a) {
                continue;
            }
            let m = self.weight(i, a) * discount.factor(pos + 1);
            if m > 0.0 {
                masses.push((a, m));
            }
        }
        let fail = self.parts.fail_weight;
        let total = fail + masses.iter().map(|(_, m)| m).sum::<f64>();
        Ok(ExecutionDistribution {
            entries: masses.into_iter().map(|(a, m)| (a, m / total)).collect(),
            fail_probability: fail / total,
        })
    }

    fn outcomes(&self, s: StateId, slate: &[ActionId]) -> Result<Vec<Outcome>> {
        let dist = self.execution_distribution(s, slate)?;
        let mut out = Vec::with_capacity(2 * (dist.entries.len() + self.live.len()));
        for &(a, p) in &dist.entries {
            push_split(
                &mut out,
                Outcome {
                    probability: p,
                    executed: Executed::Action(a),
                    next_state: a.into(),
                    reward: self.parts.rewards[a.0],
                    terminal: false,
                },
                self.exec_terminal_probability(a.0),
            );
        }
        let per_target = dist.fail_probability / self.live.len() as f64;
        for &j in &self.live {
            push_split(
                &mut out,
                Outcome {
                    probability: per_target,
                    executed: Executed::Fail,
                    next_state: j,
                    reward: self.parts.rewards[j.index().unwrap()],
                    terminal: false,
                },
                self.parts.p_end_fail,
            );
        }
        Ok(out)
    }

    fn step(&self, s: StateId, slate: &Slate, rng: &mut RandomSource) -> Result<TransitionRecord> {
        let dist = self.execution_distribution(s, slate)?;
        let executed = dist.sample(rng);
        let (next_state, p_terminal) = match executed {
            Executed::Action(a) => (StateId::from(a), self.exec_terminal_probability(a.0)),
            Executed::Fail => {
                let j = self.live[rng.random_range(0..self.live.len())];
                (j, self.parts.p_end_fail)
            }
        };
        let terminal = rng.random::<f64>() < p_terminal;
        let reward = self.parts.rewards[next_state.index().unwrap()];
        Ok(TransitionRecord {
            state: s,
            slate: slate.clone(),
            executed,
            reward,
            next_state,
            terminal,
        })
    }

    fn initial_state(&self, rng: &mut RandomSource) -> StateId {
        self.live[rng.random_range(0..self.live.len())]
    }

    fn live_states(&self) -> Vec<StateId> {
        self.live.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    pub(crate) fn tiny() -> EnvironmentSpec {
        EnvironmentSpec::new(SpecParts {
            version: FORMAT_VERSION,
            n_states: 8,
            feature_dim: 2,
            slate_size: 2,
            fail_weight: 0.5,
            p_end_fail: 0.2,
            p_end_exec: 0.1,
            rewards: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            features: (0..8).map(|i| vec![i as f64, 1.0]).collect(),
            edges: (0..8)
                .map(|i| if i == 0 { vec![(7, 0.2), (3, 0.5)] } else { vec![(0, 1.0)] })
                .collect(),
            position_discount: PositionDiscount::Divide,
            absorbing: vec![],
        })
        .unwrap()
    }

    #[test]
    fn candidates_are_sorted_ids() {
        let env = tiny();
        assert_eq!(env.candidate_actions(StateId::new(0)), &[ActionId(3), ActionId(7)]);
        assert!(env.candidate_actions(StateId::END).is_empty());
    }

    #[test]
    fn single_action_half_and_half() {
        let env = tiny();
        let d = env.execution_distribution(StateId::new(0), &[ActionId(3)]).unwrap();
        assert_eq!(d.probability(ActionId(3)), 0.5);
        assert_eq!(d.fail_probability, 0.5);
    }

    #[test]
    fn duplicate_equals_zero_weight_padding() {
        let env = tiny();
        let s = StateId::new(0);
        let dup = env.execution_distribution(s, &[ActionId(3), ActionId(3)]).unwrap();
        let padded = env.execution_distribution(s, &[ActionId(3), ActionId(5)]).unwrap();
        let single = env.execution_distribution(s, &[ActionId(3)]).unwrap();
        assert_eq!(dup, padded);
        assert_eq!(dup, single);
    }

    #[test]
    fn zero_weight_slate_always_fails() {
        let env = tiny();
        let d = env
            .execution_distribution(StateId::new(0), &[ActionId(1), ActionId(2)])
            .unwrap();
        assert!(d.entries.is_empty());
        assert_eq!(d.fail_probability, 1.0);
    }

    #[test]
    fn second_slot_is_discounted_by_log2_3() {
        let env = tiny();
        let d = env
            .execution_distribution(StateId::new(0), &[ActionId(3), ActionId(7)])
            .unwrap();
        let m7 = 0.2 / 3f64.log2();
        let total = 0.5 + m7 + 0.5;
        assert!((d.probability(ActionId(3)) - 0.5 / total).abs() < 1e-15);
        assert!((d.probability(ActionId(7)) - m7 / total).abs() < 1e-15);
        let mul = env.with_position_discount(PositionDiscount::Multiply);
        let d = mul
            .execution_distribution(StateId::new(0), &[ActionId(3), ActionId(7)])
            .unwrap();
        let m7 = 0.2 * 3f64.log2();
        assert!((d.probability(ActionId(7)) - m7 / (1.0 + m7)).abs() < 1e-15);
    }

    #[test]
    fn terminal_state_is_a_domain_error() {
        let env = tiny();
        let mut rng = RandomSource::seed_from_u64(1);
        assert!(env.execution_distribution(StateId::END, &[ActionId(3)]).is_err());
        assert!(env.step(StateId::END, &Slate::single(ActionId(3)), &mut rng).is_err());
    }

    #[test]
    fn outcomes_sum_to_one() {
        let env = tiny();
        let o = env.outcomes(StateId::new(0), &[ActionId(7), ActionId(3)]).unwrap();
        let total: f64 = o.iter().map(|o| o.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut parts = tiny().into_parts();
        parts.fail_weight = 0.1 + 0.2;
        parts.features[3][0] = std::f64::consts::PI / 7.0;
        parts.absorbing = vec![5];
        let env = EnvironmentSpec::new(parts).unwrap();
        let back = EnvironmentSpec::from_json(&env.to_json().unwrap()).unwrap();
        assert_eq!(env, back);
        assert_eq!(env.content_hash(), back.content_hash());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut p = tiny().into_parts();
        p.edges[2].clear();
        assert!(matches!(EnvironmentSpec::new(p), Err(Error::Config { .. })));
        let mut p = tiny().into_parts();
        p.edges[2] = (0..61).map(|a| (a % 8, 1.0)).collect();
        assert!(EnvironmentSpec::new(p).is_err());
        let mut p = tiny().into_parts();
        p.edges[2] = vec![(1, 0.0)];
        assert!(EnvironmentSpec::new(p).is_err());
        let mut p = tiny().into_parts();
        p.fail_weight = 0.0;
        assert!(EnvironmentSpec::new(p).is_err());
        let mut p = tiny().into_parts();
        p.p_end_exec = 1.5;
        assert!(EnvironmentSpec::new(p).is_err());
        let mut p = tiny().into_parts();
        p.rewards[0] = -1.0;
        assert!(EnvironmentSpec::new(p).is_err());
    }
}
