mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use slate_core::neural::{Activation, MlpNetwork, TargetPair};

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut r = rng(100);
    let mut worst: f64 = 0.0;
    for _ in 0..150 {
        let outputs = r.random_range(1..=3);
        let (net, x) = random_instance(&mut r, outputs);
        let c: Vec<f64> = (0..outputs).map(|_| r.random_range(-1.0..1.0)).collect();
        worst = worst.max(param_gradient_error(&net, &x, &c));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn input_gradients_match_finite_differences() {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..150 {
        let (net, x) = random_instance(&mut r, 1);
        worst = worst.max(input_gradient_error(&net, &x));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn sgd_steps_are_additive() {
    let mut r = rng(3);
    let net = MlpNetwork::new(&[3, 4, 1], Activation::Tanh, &mut r).unwrap();
    let g1 = net.grad_params(&[0.1, 0.2, 0.3], &[1.0]).unwrap();
    let g2 = net.grad_params(&[-1.0, 0.5, 2.0], &[-0.5]).unwrap();
    let mut twice = net.clone();
    twice.sgd_step(&g1, 1e-3).unwrap();
    twice.sgd_step(&g2, 1e-3).unwrap();
    let mut once = net.clone();
    let mut sum = g1.clone();
    sum.add_assign(&g2).unwrap();
    once.sgd_step(&sum, 1e-3).unwrap();
    for (a, b) in twice.flatten().iter().zip(once.flatten()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn soft_update_contracts_toward_live() {
    let mut r = rng(4);
    let live = MlpNetwork::new(&[3, 5, 2], Activation::Relu, &mut r).unwrap();
    let mut pair = TargetPair::new(live, 0.25).unwrap();
    pair.live = MlpNetwork::new(&[3, 5, 2], Activation::Relu, &mut r).unwrap();
    let before: Vec<f64> = pair.target.flatten();
    pair.soft_update();
    for ((t, b), l) in pair.target.flatten().iter().zip(&before).zip(pair.live.flatten()) {
        let want = 0.75 * (b - l).abs();
        assert!(((t - l).abs() - want).abs() < 1e-15);
    }
}

#[test]
fn overparameterized_net_fits_a_fixed_batch() {
    let mut r = rng(5);
    let mut net = MlpNetwork::new(&[2, 32, 1], Activation::Tanh, &mut r).unwrap();
    let data: Vec<([f64; 2], f64)> = (0..8)
        .map(|_| {
            let x = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
            (x, 0.5 * x[0] - x[1] * x[1])
        })
        .collect();
    let loss = |net: &MlpNetwork| {
        data.iter()
            .map(|(x, y)| (net.forward_scalar(x).unwrap() - y).powi(2))
            .sum::<f64>()
            / data.len() as f64
    };
    let mut steps = 0;
    while loss(&net) >= 1e-3 {
        let mut g = net.zero_gradients();
        for (x, y) in &data {
            let q = net.forward_scalar(x).unwrap();
            g.add_assign(&net.grad_params(x, &[2.0 * (q - y) / data.len() as f64]).unwrap())
                .unwrap();
        }
        net.sgd_step(&g, 0.05).unwrap();
        steps += 1;
        assert!(steps < 50_000, "loss stuck at {}", loss(&net));
    }
}

proptest! {
    #[test]
    fn forward_is_bitwise_deterministic(seed in 0u64..1000, x in prop::collection::vec(-5.0f64..5.0, 4)) {
        let net = MlpNetwork::new(&[4, 6, 3], Activation::Relu, &mut rng(seed)).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.clone().forward(&x).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn checkpoints_reproduce_outputs(seed in 0u64..1000, x in prop::collection::vec(-5.0f64..5.0, 3)) {
        let net = MlpNetwork::new(&[3, 4, 4, 2], Activation::Tanh, &mut rng(seed)).unwrap();
        let back = MlpNetwork::from_checkpoint(&net.to_checkpoint().unwrap()).unwrap();
        let a = net.forward(&x).unwrap();
        let b = back.forward(&x).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
