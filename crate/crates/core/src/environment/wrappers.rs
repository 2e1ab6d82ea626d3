//! Training views of an environment.
//!
//! Both wrappers delegate sampling to the wrapped environment and only rewrite
//! the resulting record, so a wrapped and an unwrapped environment driven by
//! the same random stream stay in lockstep until the wrapper intervenes.

use super::{ExecutionDistribution, Outcome, SlateMdp};
use crate::error::{Error, Result};
use crate::types::{ActionId, Executed, FeatureTable, Slate, StateId, TransitionRecord};
use crate::RandomSource;

/// Non-execution ends the episode with zero reward.
#[derive(Clone, Debug)]
pub struct FatalFailure<E> {
    inner: E,
}

pub fn wrap_fatal_failure<E: SlateMdp>(env: E) -> FatalFailure<E> {
    FatalFailure { inner: env }
}

impl<E> FatalFailure<E> {
    pub fn inner(&self) -> &E {
        &self.inner
    }
}

/// Rewards `r` are replaced by `r^alpha`.
#[derive(Clone, Debug)]
pub struct RiskSeeking<E> {
    inner: E,
    alpha: f64,
}

pub fn wrap_risk_seeking<E: SlateMdp>(env: E, alpha: f64) -> Result<RiskSeeking<E>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha", format!("{alpha} must be positive")));
    }
    Ok(RiskSeeking { inner: env, alpha })
}

impl<E> RiskSeeking<E> {
    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn transform(&self, reward: f64) -> f64 {
        if self.alpha == 1.0 {
            reward
        } else {
            reward.powf(self.alpha)
        }
    }
}

macro_rules! delegate_features {
    ($name:ident) => {
        impl<E: SlateMdp> FeatureTable for $name<E> {
            fn feature_dim(&self) -> usize {
                self.inner.feature_dim()
            }
            fn n_items(&self) -> usize {
                self.inner.n_items()
            }
            fn item_features(&self, index: usize) -> &[f64] {
                self.inner.item_features(index)
            }
        }
    };
}

delegate_features!(FatalFailure);
delegate_features!(RiskSeeking);

impl<E: SlateMdp> SlateMdp for FatalFailure<E> {
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    fn slate_size(&self) -> usize {
        self.inner.slate_size()
    }

    fn candidate_actions(&self, s: StateId) -> &[ActionId] {
        self.inner.candidate_actions(s)
    }

    fn execution_distribution(
        &self,
        s: StateId,
        slate: &[ActionId],
    ) -> Result<ExecutionDistribution> {
        self.inner.execution_distribution(s, slate)
    }

    fn outcomes(&self, s: StateId, slate: &[ActionId]) -> Result<Vec<Outcome>> {
        let mut out = Vec::new();
        let mut fail = 0.0;
        for o in self.inner.outcomes(s, slate)? {
            match o.executed {
                Executed::Action(a) if slate.contains(&a) => out.push(o),
                _ => fail += o.probability,
            }
        }
        if fail > 0.0 {
            out.push(Outcome {
                probability: fail,
                executed: Executed::Fail,
                next_state: StateId::END,
                reward: 0.0,
                terminal: true,
            });
        }
        Ok(out)
    }

    fn step(&self, s: StateId, slate: &Slate, rng: &mut RandomSource) -> Result<TransitionRecord> {
        let mut record = self.inner.step(s, slate, rng)?;
        let executed_from_slate = matches!(record.executed, Executed::Action(a) if slate.contains(&a));
        if !executed_from_slate {
            record.executed = Executed::Fail;
            record.reward = 0.0;
            record.next_state = StateId::END;
            record.terminal = true;
        }
        Ok(record)
    }

    fn initial_state(&self, rng: &mut RandomSource) -> StateId {
        self.inner.initial_state(rng)
    }

    fn live_states(&self) -> Vec<StateId> {
        self.inner.live_states()
    }
}

impl<E: SlateMdp> SlateMdp for RiskSeeking<E> {
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    fn slate_size(&self) -> usize {
        self.inner.slate_size()
    }

    fn candidate_actions(&self, s: StateId) -> &[ActionId] {
        self.inner.candidate_actions(s)
    }

    fn execution_distribution(
        &self,
        s: StateId,
        slate: &[ActionId],
    ) -> Result<ExecutionDistribution> {
        self.inner.execution_distribution(s, slate)
    }

    fn outcomes(&self, s: StateId, slate: &[ActionId]) -> Result<Vec<Outcome>> {
        let mut out = self.inner.outcomes(s, slate)?;
        for o in &mut out {
            o.reward = self.transform(o.reward);
        }
        Ok(out)
    }

    fn step(&self, s: StateId, slate: &Slate, rng: &mut RandomSource) -> Result<TransitionRecord> {
        let mut record = self.inner.step(s, slate, rng)?;
        record.reward = self.transform(record.reward);
        Ok(record)
    }

    fn initial_state(&self, rng: &mut RandomSource) -> StateId {
        self.inner.initial_state(rng)
    }

    fn live_states(&self) -> Vec<StateId> {
        self.inner.live_states()
    }
}
