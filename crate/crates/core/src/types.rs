//! Shared vocabulary: states, actions, slates, features and experience tuples.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A primitive action. Actions and states share the index space `0..N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A state of the environment, or the absorbing end state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(usize);

impl StateId {
    /// The absorbing end state `s_end`.
    pub const END: StateId = StateId(usize::MAX);

    pub fn new(index: usize) -> Self {
        debug_assert!(index != usize::MAX);
        StateId(index)
    }

    /// Index into the state table; `None` for the end state.
    pub fn index(self) -> Option<usize> {
        (!self.is_terminal()).then_some(self.0)
    }

    pub fn is_terminal(self) -> bool {
        self.0 == usize::MAX
    }

    /// The action whose execution leads to this state (`psi` in the slate-MDP
    /// formalism), if any.
    pub fn as_action(self) -> Option<ActionId> {
        self.index().map(ActionId)
    }
}

impl From<ActionId> for StateId {
    fn from(a: ActionId) -> Self {
        StateId::new(a.0)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index() {
            Some(i) => write!(f, "{i}"),
            None => write!(f, "END"),
        }
    }
}

/// Fixed-length embedding of a state or action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericalFault(format!(
                "non-finite feature value {bad}"
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// An ordered tuple of actions presented in one step. Duplicates are allowed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Slate(Vec<ActionId>);

impl Slate {
    pub fn new(actions: Vec<ActionId>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::domain("a slate needs at least one action"));
        }
        Ok(Slate(actions))
    }

    pub fn single(action: ActionId) -> Self {
        Slate(vec![action])
    }

    pub fn actions(&self) -> &[ActionId] {
        &self.0
    }

    pub fn into_actions(self) -> Vec<ActionId> {
        self.0
    }
}

impl Deref for Slate {
    type Target = [ActionId];

    fn deref(&self) -> &[ActionId] {
        &self.0
    }
}

impl fmt::Display for Slate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Which slate element, if any, the environment executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Executed {
    Action(ActionId),
    Fail,
}

impl Executed {
    pub fn action(self) -> Option<ActionId> {
        match self {
            Executed::Action(a) => Some(a),
            Executed::Fail => None,
        }
    }
}

/// One experience tuple `(s, slate, executed, r, s', terminal)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub state: StateId,
    pub slate: Slate,
    pub executed: Executed,
    pub reward: f64,
    pub next_state: StateId,
    pub terminal: bool,
}

/// Read access to a table of per-item feature vectors.
pub trait FeatureTable {
    fn feature_dim(&self) -> usize;

    fn n_items(&self) -> usize;

    /// Features of item `index`; callers must check the index first.
    fn item_features(&self, index: usize) -> &[f64];
}

/// Input encoding of `Q(s, slate)`: state features followed by each slot's
/// action features, `d * (l + 1)` values in total.
pub fn slate_features<T: FeatureTable + ?Sized>(
    slate: &[ActionId],
    state: StateId,
    table: &T,
) -> Result<FeatureVector> {
    let mut out = Vec::with_capacity(table.feature_dim() * (slate.len() + 1));
    write_slate_features(&mut out, slate, state, table)?;
    Ok(FeatureVector(out))
}

/// Same as [`slate_features`], appending into `out`.
pub fn write_slate_features<T: FeatureTable + ?Sized>(
    out: &mut Vec<f64>,
    slate: &[ActionId],
    state: StateId,
    table: &T,
) -> Result<()> {
    let n = table.n_items();
    let s = state
        .index()
        .ok_or_else(|| Error::domain("the end state has no features"))?;
    if s >= n {
        return Err(Error::InvalidId { id: s, limit: n });
    }
    if let Some(bad) = slate.iter().find(|a| a.0 >= n) {
        return Err(Error::InvalidId { id: bad.0, limit: n });
    }
    out.extend_from_slice(table.item_features(s));
    for a in slate {
        out.extend_from_slice(table.item_features(a.0));
    }
    Ok(())
}
