use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spec::{EnvironmentSpec, PositionDiscount, SpecParts, FORMAT_VERSION, MAX_OUT_DEGREE};
use crate::error::{Error, Result};
use crate::RandomSource;

/// Parameters of the synthetic graph generator.
///
/// Out-degrees are uniform in `[min_out_degree, max_out_degree]`, targets are
/// distinct and never the source state. Features are standard-normal vectors
/// scaled to unit length. A `high_reward_fraction` of states pays a reward
/// uniform in `high_reward`, the rest uniform in `low_reward`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_states: usize,
    pub feature_dim: usize,
    pub slate_size: usize,
    pub min_out_degree: usize,
    pub max_out_degree: usize,
    pub weight_low: f64,
    pub weight_high: f64,
    pub fail_weight: f64,
    pub p_end_fail: f64,
    pub p_end_exec: f64,
    pub high_reward_fraction: f64,
    pub low_reward: (f64, f64),
    pub high_reward: (f64, f64),
    pub position_discount: PositionDiscount,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_states: 200,
            feature_dim: 16,
            slate_size: 10,
            min_out_degree: 1,
            max_out_degree: MAX_OUT_DEGREE,
            weight_low: 0.1,
            weight_high: 1.0,
            fail_weight: 0.5,
            p_end_fail: 0.2,
            p_end_exec: 0.1,
            high_reward_fraction: 0.1,
            low_reward: (0.0, 1.0),
            high_reward: (1.0, 10.0),
            position_discount: PositionDiscount::Divide,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::config("n_states", "need at least two states"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be positive"));
        }
        if self.slate_size == 0 {
            return Err(Error::config("slate_size", "must be positive"));
        }
        if self.min_out_degree == 0 || self.min_out_degree > self.max_out_degree {
            return Err(Error::config(
                "min_out_degree",
                "need 1 <= min_out_degree <= max_out_degree",
            ));
        }
        if self.max_out_degree > MAX_OUT_DEGREE {
            return Err(Error::config(
                "max_out_degree",
                format!("at most {MAX_OUT_DEGREE} candidates per state"),
            ));
        }
        if self.max_out_degree > self.n_states - 1 {
            return Err(Error::config(
                "max_out_degree",
                format!("exceeds n_states - 1 = {}", self.n_states - 1),
            ));
        }
        if !(self.weight_low > 0.0 && self.weight_low <= self.weight_high) {
            return Err(Error::config("weight_low", "need 0 < weight_low <= weight_high"));
        }
        if !(self.fail_weight > 0.0) {
            return Err(Error::config("fail_weight", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.high_reward_fraction) {
            return Err(Error::config("high_reward_fraction", "must be in [0, 1]"));
        }
        for (field, (lo, hi)) in [("low_reward", self.low_reward), ("high_reward", self.high_reward)] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::config(field, "need 0 <= low <= high"));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut RandomSource, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub fn generate_environment(config: &GeneratorConfig, rng: &mut RandomSource) -> Result<EnvironmentSpec> {
    config.validate()?;
    let n = config.n_states;
    let d = config.feature_dim;

    let features = (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            v
        })
        .collect();

    let rewards = (0..n)
        .map(|_| {
            let (lo, hi) = if rng.random::<f64>() < config.high_reward_fraction {
                config.high_reward
            } else {
                config.low_reward
            };
            uniform(rng, lo, hi)
        })
        .collect();

    let edges = (0..n)
        .map(|s| {
            let degree = rng.random_range(config.min_out_degree..=config.max_out_degree);
            // Sample among the other n - 1 states, then skip over `s`.
            index::sample(rng, n - 1, degree)
                .into_iter()
                .map(|t| {
                    let a = if t >= s { t + 1 } else { t };
                    (a, uniform(rng, config.weight_low, config.weight_high))
                })
                .collect()
        })
        .collect();

    EnvironmentSpec::new(SpecParts {
        version: FORMAT_VERSION,
        n_states: n,
        feature_dim: d,
        slate_size: config.slate_size,
        fail_weight: config.fail_weight,
        p_end_fail: config.p_end_fail,
        p_end_exec: config.p_end_exec,
        rewards,
        features,
        edges,
        position_discount: config.position_discount,
        absorbing: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::SlateMdp;
    use crate::types::{FeatureTable, StateId};
    use rand::SeedableRng;

    #[test]
    fn paper_scale_shapes() {
        let cfg = GeneratorConfig {
            n_states: 835,
            feature_dim: 100,
            ..GeneratorConfig::default()
        };
        let env = generate_environment(&cfg, &mut RandomSource::seed_from_u64(0)).unwrap();
        assert_eq!(env.n_states(), 835);
        assert_eq!(env.feature_dim(), 100);
        for s in 0..835 {
            let c = env.candidate_actions(StateId::new(s));
            assert!((1..=60).contains(&c.len()));
            assert!(c.iter().all(|a| a.0 != s));
            let norm: f64 = env.item_features(s).iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_spec() {
        let cfg = GeneratorConfig::default();
        let a = generate_environment(&cfg, &mut RandomSource::seed_from_u64(42)).unwrap();
        let b = generate_environment(&cfg, &mut RandomSource::seed_from_u64(42)).unwrap();
        let c = generate_environment(&cfg, &mut RandomSource::seed_from_u64(43)).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn infeasible_degree_is_a_config_error() {
        let cfg = GeneratorConfig {
            n_states: 10,
            ..GeneratorConfig::default()
        };
        assert!(matches!(
            generate_environment(&cfg, &mut RandomSource::seed_from_u64(0)),
            Err(Error::Config { .. })
        ));
        let cfg = GeneratorConfig {
            n_states: 10,
            max_out_degree: 9,
            ..GeneratorConfig::default()
        };
        assert!(generate_environment(&cfg, &mut RandomSource::seed_from_u64(0)).is_ok());
    }

    #[test]
    fn reward_split_follows_fraction() {
        let cfg = GeneratorConfig {
            n_states: 2000,
            ..GeneratorConfig::default()
        };
        let env = generate_environment(&cfg, &mut RandomSource::seed_from_u64(9)).unwrap();
        let high = env.rewards().iter().filter(|&&r| r >= 1.0).count();
        assert!((150..250).contains(&high), "{high}");
    }
}
