//! Slate Markov decision processes: a graph-based recommendation simulator,
//! slate Q-learning agents, and exact oracles for small instances.

pub mod agents;
pub mod environment;
pub mod error;
pub mod harness;
pub mod memory;
pub mod neural;
pub mod oracle;
pub mod types;

pub use error::{Error, Result};

/// Seedable deterministic generator used by every stochastic component.
pub type RandomSource = rand_chacha::ChaCha8Rng;
