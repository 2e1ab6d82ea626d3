//! Slate-MDP simulators.
//!
//! [`SlateMdp`] is the interface every environment exposes to agents and to
//! the exact oracle: candidate actions, the action-execution distribution, the
//! enumerated transition outcomes of a `(state, slate)` pair, and sampling.
//! [`EnvironmentSpec`] is the graph-based recommendation simulator; the
//! wrappers in [`wrappers`] derive the fatal-failure and risk-seeking training
//! views from it.

mod chain;
mod generate;
mod spec;
pub mod wrappers;

pub use chain::{chain_environment, ChainLayout};
pub use generate::{generate_environment, GeneratorConfig};
pub use spec::{EnvironmentSpec, PositionDiscount, SpecParts, FORMAT_VERSION, MAX_OUT_DEGREE};
pub use wrappers::{wrap_fatal_failure, wrap_risk_seeking, FatalFailure, RiskSeeking};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::{ActionId, Executed, FeatureTable, Slate, StateId, TransitionRecord};
use crate::RandomSource;

/// `Pr(a | s, slate)` over the distinct slate actions with positive mass,
/// plus the probability that nothing is executed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionDistribution {
    pub entries: Vec<(ActionId, f64)>,
    pub fail_probability: f64,
}

impl ExecutionDistribution {
    pub fn probability(&self, action: ActionId) -> f64 {
        self.entries
            .iter()
            .find(|(a, _)| *a == action)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn total(&self) -> f64 {
        self.fail_probability + self.entries.iter().map(|(_, p)| p).sum::<f64>()
    }

    /// Inverse-CDF draw; `u` must lie in `[0, 1)`.
    pub fn pick(&self, u: f64) -> Executed {
        let mut acc = 0.0;
        for &(a, p) in &self.entries {
            acc += p;
            if u < acc {
                return Executed::Action(a);
            }
        }
        Executed::Fail
    }

    pub fn sample(&self, rng: &mut RandomSource) -> Executed {
        self.pick(rng.random::<f64>())
    }
}

/// One enumerated transition of a `(state, slate)` pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub probability: f64,
    pub executed: Executed,
    pub next_state: StateId,
    pub reward: f64,
    pub terminal: bool,
}

/// A slate Markov decision process.
///
/// Slates may have any non-empty length; the empty slate is accepted by
/// [`SlateMdp::execution_distribution`] and [`SlateMdp::outcomes`] (nothing
/// can be executed) so that prefix values can be computed.
pub trait SlateMdp: FeatureTable {
    fn n_states(&self) -> usize;

    /// Default slate length `l` of the environment.
    fn slate_size(&self) -> usize;

    /// Actions with positive execution weight from `s`, ascending. Empty for
    /// the end state.
    fn candidate_actions(&self, s: StateId) -> &[ActionId];

    fn execution_distribution(&self, s: StateId, slate: &[ActionId])
        -> Result<ExecutionDistribution>;

    /// Exact distribution over transitions; probabilities sum to one.
    fn outcomes(&self, s: StateId, slate: &[ActionId]) -> Result<Vec<Outcome>>;

    fn step(&self, s: StateId, slate: &Slate, rng: &mut RandomSource) -> Result<TransitionRecord>;

    fn initial_state(&self, rng: &mut RandomSource) -> StateId;

    /// States in which episodes may be running (start states and teleport
    /// targets). Used by exhaustive checks.
    fn live_states(&self) -> Vec<StateId>;
}

impl<T: FeatureTable + ?Sized> FeatureTable for &T {
    fn feature_dim(&self) -> usize {
        (**self).feature_dim()
    }
    fn n_items(&self) -> usize {
        (**self).n_items()
    }
    fn item_features(&self, index: usize) -> &[f64] {
        (**self).item_features(index)
    }
}

impl<T: SlateMdp + ?Sized> SlateMdp for &T {
    fn n_states(&self) -> usize {
        (**self).n_states()
    }
    fn slate_size(&self) -> usize {
        (**self).slate_size()
    }
    fn candidate_actions(&self, s: StateId) -> &[ActionId] {
        (**self).candidate_actions(s)
    }
    fn execution_distribution(
        &self,
        s: StateId,
        slate: &[ActionId],
    ) -> Result<ExecutionDistribution> {
        (**self).execution_distribution(s, slate)
    }
    fn outcomes(&self, s: StateId, slate: &[ActionId]) -> Result<Vec<Outcome>> {
        (**self).outcomes(s, slate)
    }
    fn step(&self, s: StateId, slate: &Slate, rng: &mut RandomSource) -> Result<TransitionRecord> {
        (**self).step(s, slate, rng)
    }
    fn initial_state(&self, rng: &mut RandomSource) -> StateId {
        (**self).initial_state(rng)
    }
    fn live_states(&self) -> Vec<StateId> {
        (**self).live_states()
    }
}

/// Convenience wrapper around [`SlateMdp::candidate_actions`].
pub fn candidate_actions<E: SlateMdp + ?Sized>(env: &E, s: StateId) -> Vec<ActionId> {
    env.candidate_actions(s).to_vec()
}
