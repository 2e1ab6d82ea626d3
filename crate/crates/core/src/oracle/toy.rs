use rand::Rng;

use crate::environment::{ExecutionDistribution, Outcome, SlateMdp};
use crate::error::{Error, Result};
use crate::types::{ActionId, Executed, FeatureTable, Slate, StateId, TransitionRecord};
use crate::RandomSource;

/// A small slate MDP with sequential presentation and fatal failure by
/// construction.
///
/// The user inspects the distinct slate actions in order and takes action
/// `a` with conditional probability `h(s, a)` when reaching it, so
/// `Pr(a_i | s, slate) = h(s, a_i) * prod_{j < i} (1 - h(s, a_j))`. If no
/// action is taken the episode ends with reward zero. Entering state `a`
/// pays `reward[a]`; the episode then ends with probability `p_end[a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequentialToy {
    slate_size: usize,
    /// Per state, `(action, h)` pairs sorted by action with `0 < h <= 1`.
    hazards: Vec<Vec<(ActionId, f64)>>,
    candidates: Vec<Vec<ActionId>>,
    rewards: Vec<f64>,
    p_end: Vec<f64>,
    features: Vec<Vec<f64>>,
}

impl SequentialToy {
    pub fn new(
        slate_size: usize,
        mut hazards: Vec<Vec<(ActionId, f64)>>,
        rewards: Vec<f64>,
        p_end: Vec<f64>,
    ) -> Result<Self> {
        let n = rewards.len();
        if n == 0 || slate_size == 0 {
            return Err(Error::config("n_states", "need states and a positive slate size"));
        }
        if hazards.len() != n || p_end.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: hazards.len().min(p_end.len()),
            });
        }
        for row in &mut hazards {
            row.sort_by_key(|p| p.0);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::config("hazards", format!("duplicate action {}", w[0].0)));
                }
            }
            for &(a, h) in row.iter() {
                if a.0 >= n {
                    return Err(Error::InvalidId { id: a.0, limit: n });
                }
                if !(h > 0.0 && h <= 1.0) {
                    return Err(Error::config("hazards", format!("{h} is not in (0, 1]")));
                }
            }
        }
        if rewards.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::config("rewards", "must be finite and non-negative"));
        }
        if p_end.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("p_end", "must be probabilities"));
        }
        let candidates = hazards.iter().map(|r| r.iter().map(|p| p.0).collect()).collect();
        let features = (0..n)
            .map(|i| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                v
            })
            .collect();
        Ok(SequentialToy {
            slate_size,
            hazards,
            candidates,
            rewards,
            p_end,
            features,
        })
    }

    /// Random instance with `n` states: every state gets a non-empty random
    /// candidate set, hazards in `[0.05, 0.95)`, rewards in `[0, 5)` and end
    /// probabilities in `[0.1, 0.9)`.
    pub fn random(n: usize, slate_size: usize, rng: &mut RandomSource) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("n_states", "must be positive"));
        }
        let hazards = (0..n)
            .map(|_| {
                let size = rng.random_range(1..=n);
                rand::seq::index::sample(rng, n, size)
                    .into_iter()
                    .map(|a| (ActionId(a), rng.random_range(0.05..0.95)))
                    .collect()
            })
            .collect();
        let rewards = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let p_end = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
        SequentialToy::new(slate_size, hazards, rewards, p_end)
    }

    pub fn hazard(&self, s: usize, a: ActionId) -> f64 {
        self.hazards[s]
            .binary_search_by_key(&a, |p| p.0)
            .map_or(0.0, |i| self.hazards[s][i].1)
    }

    fn state_index(&self, s: StateId) -> Result<usize> {
        let n = self.rewards.len();
        match s.index() {
            Some(i) if i < n => Ok(i),
            Some(i) => Err(Error::InvalidId { id: i, limit: n }),
            None => Err(Error::domain("the end state has no dynamics")),
        }
    }
}

impl FeatureTable for SequentialToy {
    fn feature_dim(&self) -> usize {
        self.rewards.len()
    }

    fn n_items(&self) -> usize {
        self.rewards.len()
    }

    fn item_features(&self, index: usize) -> &[f64] {
        &self.features[index]
    }
}

impl SlateMdp for SequentialToy {
    fn n_states(&self) -> usize {
        self.rewards.len()
    }

    fn slate_size(&self) -> usize {
        self.slate_size
    }

    fn candidate_actions(&self, s: StateId) -> &[ActionId] {
        match s.index() {
            Some(i) if i < self.candidates.len() => &self.candidates[i],
            _ => &[],
        }
    }

    fn execution_distribution(&self, s: StateId, slate: &[ActionId]) -> Result<ExecutionDistribution> {
        let i = self.state_index(s)?;
        let n = self.rewards.len();
        let mut reach = 1.0;
        let mut entries = Vec::new();
        for (pos, &a) in slate.iter().enumerate() {
            if a.0 >= n {
                return Err(Error::InvalidId { id: a.0, limit: n });
            }
            if slate[..pos].contains(&a) {
                continue;
            }
            let h = self.hazard(i, a);
            if h > 0.0 {
                entries.push((a, reach * h));
                reach *= 1.0 - h;
            }
        }
        Ok(ExecutionDistribution {
            entries,
            fail_probability: reach,
        })
    }

    fn outcomes(&self, s: StateId, slate: &[ActionId]) -> Result<Vec<Outcome>> {
        let dist = self.execution_distribution(s, slate)?;
        let mut out = Vec::new();
        for &(a, p) in &dist.entries {
            let end = self.p_end[a.0];
            for (q, terminal) in [(end, true), (1.0 - end, false)] {
                if p * q > 0.0 {
                    out.push(Outcome {
                        probability: p * q,
                        executed: Executed::Action(a),
                        next_state: a.into(),
                        reward: self.rewards[a.0],
                        terminal,
                    });
                }
            }
        }
        if dist.fail_probability > 0.0 {
            out.push(Outcome {
                probability: dist.fail_probability,
                executed: Executed::Fail,
                next_state: StateId::END,
                reward: 0.0,
                terminal: true,
            });
        }
        Ok(out)
    }

    fn step(&self, s: StateId, slate: &Slate, rng: &mut RandomSource) -> Result<TransitionRecord> {
        let dist = self.execution_distribution(s, slate)?;
        let executed = dist.sample(rng);
        let end_draw = rng.random::<f64>();
        let (next_state, reward, terminal) = match executed {
            Executed::Action(a) => (StateId::from(a), self.rewards[a.0], end_draw < self.p_end[a.0]),
            Executed::Fail => (StateId::END, 0.0, true),
        };
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
        StateId::new(rng.random_range(0..self.rewards.len()))
    }

    fn live_states(&self) -> Vec<StateId> {
        (0..self.rewards.len()).map(StateId::new).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{check_fatal_failure, check_sequential_presentation, check_submodular_monotone, exact_q};
    use rand::SeedableRng;

    fn hand_built() -> SequentialToy {
        SequentialToy::new(
            2,
            vec![
                vec![(ActionId(1), 0.5), (ActionId(2), 0.25)],
                vec![(ActionId(0), 1.0)],
                vec![(ActionId(0), 0.5), (ActionId(1), 0.5)],
            ],
            vec![1.0, 2.0, 4.0],
            vec![0.5, 0.5, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn cascade_probabilities() {
        let toy = hand_built();
        let d = toy
            .execution_distribution(StateId::new(0), &[ActionId(2), ActionId(1)])
            .unwrap();
        assert_eq!(d.probability(ActionId(2)), 0.25);
        assert_eq!(d.probability(ActionId(1)), 0.375);
        assert_eq!(d.fail_probability, 0.375);
        let d = toy
            .execution_distribution(StateId::new(0), &[ActionId(1), ActionId(1)])
            .unwrap();
        assert_eq!(d.probability(ActionId(1)), 0.5);
    }

    #[test]
    fn hand_built_passes_every_check() {
        let toy = hand_built();
        for r in check_sequential_presentation(&toy, 1e-12).unwrap() {
            assert!(r.passed(), "{r}");
        }
        let sol = exact_q(&toy, 0.9, 1e-12).unwrap();
        for r in check_submodular_monotone(&sol, &toy, 1e-9).unwrap() {
            assert!(r.passed(), "{r}");
        }
        let f = check_fatal_failure(&toy, 2000, &mut RandomSource::seed_from_u64(1)).unwrap();
        assert!(f.passed());
        assert_eq!(f.checked, 2000);
    }

    #[test]
    fn random_instances_are_valid() {
        let mut rng = RandomSource::seed_from_u64(5);
        for _ in 0..20 {
            let toy = SequentialToy::random(6, 3, &mut rng).unwrap();
            for s in toy.live_states() {
                assert!(!toy.candidate_actions(s).is_empty());
                let o = toy.outcomes(s, &[ActionId(0), ActionId(5)]).unwrap();
                let total: f64 = o.iter().map(|o| o.probability).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
