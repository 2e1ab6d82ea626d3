//! A hand-built testbed where the myopic choice is a trap.
//!
//! Layout for `length = L`: chain states `0..L`, a lure state `L` and a goal
//! state `L + 1`. Every chain state offers the lure (reward `lure_reward`,
//! ends the episode) and the next chain state (reward 0). The last chain
//! state offers the goal (reward `goal_reward`, ends the episode) instead of a
//! further chain state. Chain and lure steps execute with probability 0.9;
//! the goal step executes with probability `lure / (2 * goal)`, so a
//! risk-neutral agent trained with fatal failure prefers the lure everywhere,
//! while in the raw environment a failed attempt only teleports the agent
//! back onto the chain and the goal is eventually reachable.

use super::spec::{EnvironmentSpec, PositionDiscount, SpecParts, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::types::{ActionId, StateId};

pub const CHAIN_FAIL_WEIGHT: f64 = 0.1;
pub const CHAIN_STEP_WEIGHT: f64 = 0.9;
pub const CHAIN_LURE_WEIGHT: f64 = 0.9;
pub const CHAIN_P_END_FAIL: f64 = 0.05;

/// State indices of a chain environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainLayout {
    pub length: usize,
}

impl ChainLayout {
    pub fn chain_state(self, i: usize) -> StateId {
        assert!(i < self.length);
        StateId::new(i)
    }

    pub fn start(self) -> StateId {
        StateId::new(0)
    }

    pub fn lure(self) -> ActionId {
        ActionId(self.length)
    }

    pub fn goal(self) -> ActionId {
        ActionId(self.length + 1)
    }

    /// The far-sighted action in chain state `i`.
    pub fn forward(self, i: usize) -> ActionId {
        if i + 1 < self.length {
            ActionId(i + 1)
        } else {
            self.goal()
        }
    }

    /// Execution probability of the final (goal) step.
    pub fn goal_step_probability(lure_reward: f64, goal_reward: f64) -> f64 {
        lure_reward / (2.0 * goal_reward)
    }
}

pub fn chain_environment(length: usize, lure_reward: f64, goal_reward: f64) -> Result<EnvironmentSpec> {
    if length < 2 {
        return Err(Error::config("length", "chain needs at least two states"));
    }
    if !(lure_reward > 0.0 && lure_reward <= goal_reward && goal_reward.is_finite()) {
        return Err(Error::config("lure_reward", "need 0 < lure_reward <= goal_reward"));
    }
    let layout = ChainLayout { length };
    let n = length + 2;
    let p_goal = ChainLayout::goal_step_probability(lure_reward, goal_reward);
    let goal_weight = CHAIN_FAIL_WEIGHT * p_goal / (1.0 - p_goal);

    let mut rewards = vec![0.0; n];
    rewards[layout.lure().0] = lure_reward;
    rewards[layout.goal().0] = goal_reward;

    let features = (0..n)
        .map(|i| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v
        })
        .collect();

    let mut edges: Vec<Vec<(usize, f64)>> = (0..length)
        .map(|i| {
            let forward = layout.forward(i).0;
            let w = if i + 1 < length { CHAIN_STEP_WEIGHT } else { goal_weight };
            vec![(forward, w), (layout.lure().0, CHAIN_LURE_WEIGHT)]
        })
        .collect();
    // Absorbing states never act; a self-loop keeps the table well-formed.
    edges.push(vec![(layout.lure().0, 1.0)]);
    edges.push(vec![(layout.goal().0, 1.0)]);

    EnvironmentSpec::new(SpecParts {
        version: FORMAT_VERSION,
        n_states: n,
        feature_dim: n,
        slate_size: 1,
        fail_weight: CHAIN_FAIL_WEIGHT,
        p_end_fail: CHAIN_P_END_FAIL,
        p_end_exec: 0.0,
        rewards,
        features,
        edges,
        position_discount: PositionDiscount::Divide,
        absorbing: vec![layout.lure().0, layout.goal().0],
    })
}
