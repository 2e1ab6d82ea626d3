#![allow(dead_code)]

use rand::SeedableRng;
use slate_core::environment::{generate_environment, EnvironmentSpec, GeneratorConfig};
use slate_core::RandomSource;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn rng(seed: u64) -> RandomSource {
    RandomSource::seed_from_u64(seed)
}

/// Pearson chi-square p-value of `counts` against `probs`. Cells with zero
/// expected probability must have zero counts and are dropped.
pub fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(counts.len(), probs.len());
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0;
    for (&c, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            assert_eq!(c, 0, "count in a zero-probability cell");
            continue;
        }
        let e = p * n as f64;
        stat += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    if cells < 2 {
        return 1.0;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

pub fn small_env(seed: u64) -> EnvironmentSpec {
    let cfg = GeneratorConfig {
        n_states: 40,
        feature_dim: 8,
        slate_size: 4,
        max_out_degree: 15,
        ..GeneratorConfig::default()
    };
    generate_environment(&cfg, &mut rng(seed)).unwrap()
}

/// Relative error with a floor on the scale, so that components that are
/// zero up to rounding are compared absolutely at that floor.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

use rand::Rng;
use slate_core::neural::{Activation, MlpNetwork};

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

/// A random network with 1 to 3 hidden layers of width 1 to 8, plus an input.
/// ReLU instances are redrawn until no hidden pre-activation lies within
/// 1e-3 of the kink, where central differences are not meaningful.
pub fn random_instance(r: &mut RandomSource, outputs: usize) -> (MlpNetwork, Vec<f64>) {
    loop {
        let act = if r.random::<bool>() { Activation::Tanh } else { Activation::Relu };
        let input = r.random_range(1..=6);
        let mut sizes = vec![input];
        for _ in 0..r.random_range(1..=3) {
            sizes.push(r.random_range(1..=8));
        }
        sizes.push(outputs);
        let net = MlpNetwork::new(&sizes, act, r).unwrap();
        let x: Vec<f64> = (0..input).map(|_| r.random_range(-2.0..2.0)).collect();
        if act == Activation::Relu && near_kink(&net, &x) {
            continue;
        }
        return (net, x);
    }
}

fn near_kink(net: &MlpNetwork, x: &[f64]) -> bool {
    let mut h = x.to_vec();
    let layers = net.layers();
    for (k, l) in layers.iter().enumerate() {
        let mut z = vec![0.0; l.outputs];
        l.affine(&h, &mut z);
        if k + 1 < layers.len() {
            if z.iter().any(|v| v.abs() < 1e-3) {
                return true;
            }
            h = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    false
}

/// Worst relative error of backpropagated parameter gradients of the loss
/// `sum_k c_k * y_k` against central differences.
pub fn param_gradient_error(net: &MlpNetwork, x: &[f64], c: &[f64]) -> f64 {
    let g = net.grad_params(x, c).unwrap().flatten();
    let theta = net.flatten();
    let loss = |p: &[f64]| {
        let mut m = net.clone();
        m.set_flat(p).unwrap();
        m.forward(x).unwrap().iter().zip(c).map(|(y, w)| y * w).sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p[i] = theta[i] + FD_STEP;
        let up = loss(&p);
        p[i] = theta[i] - FD_STEP;
        let down = loss(&p);
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(g[i], numeric, FD_FLOOR));
    }
    worst
}

/// Worst relative error of the input gradient of a scalar network.
pub fn input_gradient_error(net: &MlpNetwork, x: &[f64]) -> f64 {
    let g = net.grad_input(x).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut p = x.to_vec();
        p[i] = x[i] + FD_STEP;
        let up = net.forward_scalar(&p).unwrap();
        p[i] = x[i] - FD_STEP;
        let down = net.forward_scalar(&p).unwrap();
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(g[i], numeric, FD_FLOOR));
    }
    worst
}

use slate_core::environment::SlateMdp;
use slate_core::types::{ActionId, Slate, StateId};

/// A random slate of length 1 to `2l` that mixes candidates, repeats and
/// actions outside the candidate set.
pub fn fuzz_slate<E: SlateMdp + ?Sized>(env: &E, s: StateId, r: &mut RandomSource) -> Vec<ActionId> {
    let cands = env.candidate_actions(s);
    let len = r.random_range(1..=2 * env.slate_size());
    let mut slate: Vec<ActionId> = Vec::with_capacity(len);
    for _ in 0..len {
        let a = match r.random_range(0..3) {
            0 if !cands.is_empty() => cands[r.random_range(0..cands.len())],
            1 if !slate.is_empty() => slate[r.random_range(0..slate.len())],
            _ => ActionId(r.random_range(0..env.n_states())),
        };
        slate.push(a);
    }
    slate
}

/// Chi-square p-value of sampled `(next_state, terminal)` frequencies of
/// `step` against the enumerated outcomes.
pub fn step_frequency_p<E: SlateMdp + ?Sized>(
    env: &E,
    s: StateId,
    slate: &Slate,
    samples: usize,
    r: &mut RandomSource,
) -> f64 {
    let mut keys: Vec<(StateId, bool)> = Vec::new();
    let mut probs: Vec<f64> = Vec::new();
    for o in env.outcomes(s, slate).unwrap() {
        let key = (o.next_state, o.terminal);
        match keys.iter().position(|k| *k == key) {
            Some(i) => probs[i] += o.probability,
            None => {
                keys.push(key);
                probs.push(o.probability);
            }
        }
    }
    let mut counts = vec![0u64; keys.len()];
    for _ in 0..samples {
        let rec = env.step(s, slate, r).unwrap();
        let i = keys
            .iter()
            .position(|k| *k == (rec.next_state, rec.terminal))
            .expect("sampled an outcome with zero probability");
        counts[i] += 1;
    }
    chi_square_p(&counts, &probs)
}

use slate_core::oracle::SequentialToy;

/// Random cascade toys with 2 to 6 states and slate sizes 2 or 3.
pub fn random_toys(count: usize, seed: u64) -> Vec<SequentialToy> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let n = r.random_range(2..=6);
            let l = r.random_range(2..=3);
            SequentialToy::random(n, l, &mut r).unwrap()
        })
        .collect()
}

/// Discounted return of one rollout of `policy` from `s`.
pub fn rollout<E: SlateMdp + ?Sized>(
    env: &E,
    gamma: f64,
    mut s: StateId,
    policy: &impl Fn(StateId) -> Slate,
    r: &mut RandomSource,
) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    loop {
        let rec = env.step(s, &policy(s), r).unwrap();
        total += discount * rec.reward;
        if rec.terminal || rec.next_state.is_terminal() {
            return total;
        }
        discount *= gamma;
        s = rec.next_state;
    }
}
