mod common;

use common::*;
use proptest::prelude::*;
use slate_core::agents::{
    greedy_slate, knn_query, squared_distance, Agent, AgentConfig, AgentKind, Encoding, KnnK, NetScorer,
    PreparedScorer, SlateScorer,
};
use slate_core::environment::{EnvironmentSpec, SlateMdp};
use slate_core::harness::{run_seed, EnvSource, ExperimentConfig};
use slate_core::neural::{Activation, MlpNetwork};
use slate_core::types::{ActionId, Executed, FeatureTable, Slate, StateId, TransitionRecord};

fn config(kind: AgentKind, slate_size: usize) -> AgentConfig {
    AgentConfig {
        kind,
        slate_size,
        q_hidden: vec![8],
        policy_hidden: vec![6],
        batch_size: 4,
        ..AgentConfig::default()
    }
}

fn busy_state(env: &EnvironmentSpec, min: usize) -> StateId {
    env.live_states()
        .into_iter()
        .find(|&s| env.candidate_actions(s).len() >= min)
        .expect("a state with enough candidates")
}

#[test]
fn full_exploration_is_uniform_over_ordered_slates() {
    let env = small_env(40);
    let s = busy_state(&env, 3);
    let cands: Vec<ActionId> = env.candidate_actions(s)[..3].to_vec();
    let c = env.candidate_actions(s).len();
    let agent = Agent::new(AgentConfig { epsilon: 1.0, ..config(AgentKind::FullSlate, 2) }, &env, &mut rng(1)).unwrap();
    let mut r = rng(40);
    // Cells: the nine ordered pairs over three fixed candidates, then the rest.
    let mut counts = vec![0u64; 10];
    for _ in 0..50_000 {
        let slate = agent.act(&env, s, &mut r).unwrap();
        let cell = match (cands.iter().position(|a| *a == slate[0]), cands.iter().position(|a| *a == slate[1])) {
            (Some(i), Some(j)) => 3 * i + j,
            _ => 9,
        };
        counts[cell] += 1;
    }
    let p = 1.0 / (c * c) as f64;
    let mut probs = vec![p; 9];
    probs.push(1.0 - 9.0 * p);
    assert!(chi_square_p(&counts, &probs) > 0.01);
}

#[test]
fn exploration_rate_matches_epsilon() {
    let env = small_env(41);
    let s = busy_state(&env, 10);
    let agent = Agent::new(AgentConfig { epsilon: 0.3, ..config(AgentKind::FullSlate, 4) }, &env, &mut rng(2)).unwrap();
    let greedy = agent.greedy_action(&env, s).unwrap();
    let mut r = rng(41);
    let n = 20_000;
    let differs = (0..n).filter(|_| agent.act(&env, s, &mut r).unwrap() != greedy).count();
    // A random slate equals the greedy one with probability below 1e-3.
    let p = differs as f64 / n as f64;
    let sd = (0.3f64 * 0.7 / n as f64).sqrt();
    assert!((p - 0.3).abs() < 4.0 * sd + 1e-3, "explored {p}");
}

#[test]
fn greedy_costs_slots_times_candidates_calls() {
    let env = small_env(42);
    let net = MlpNetwork::new(&[4 * 8 + 8, 5, 1], Activation::Relu, &mut rng(3)).unwrap();
    for s in env.live_states().into_iter().take(10) {
        let cands = env.candidate_actions(s).to_vec();
        let mut scorer = NetScorer::new(&net, &env, s, Encoding::Concat, 4);
        let g = greedy_slate(&mut scorer, &[cands.clone()]).unwrap();
        assert_eq!(g.q_calls, 4 * cands.len());
    }
}

#[test]
fn prepared_scorer_matches_full_forward_passes() {
    let env = small_env(43);
    let mut r = rng(43);
    for _ in 0..20 {
        let net = MlpNetwork::new(&[3 * 8 + 8, 7, 4, 1], Activation::Tanh, &mut r).unwrap();
        let s = env.initial_state(&mut r);
        let cands = env.candidate_actions(s).to_vec();
        let mut slow = NetScorer::new(&net, &env, s, Encoding::Concat, 3);
        let mut fast = PreparedScorer::new(&net, &env, s, 3, &cands).unwrap();
        let a = greedy_slate(&mut slow, &[cands.clone()]).unwrap();
        let b = greedy_slate(&mut fast, &[cands.clone()]).unwrap();
        assert_eq!(a.slate, b.slate);
        assert!((a.value - b.value).abs() < 1e-9);
        let prefix = [cands[0]];
        for &x in &cands {
            let u = slow.padded_value(&prefix, x).unwrap();
            let v = fast.padded_value(&prefix, x).unwrap();
            assert!((u - v).abs() < 1e-9);
        }
    }
}

#[test]
fn single_slot_greedy_is_the_argmax() {
    let env = small_env(44);
    let agent = Agent::new(config(AgentKind::FullSlate, 1), &env, &mut rng(4)).unwrap();
    for s in env.live_states() {
        let cands = env.candidate_actions(s);
        let mut best = cands[0];
        let mut best_v = f64::NEG_INFINITY;
        for &a in cands {
            let v = agent.q_value(&env, s, &[a]).unwrap();
            if v > best_v {
                best = a;
                best_v = v;
            }
        }
        assert_eq!(agent.greedy_action(&env, s).unwrap().to_vec(), vec![best]);
    }
}

#[test]
fn top_k_and_full_coincide_at_one_slot() {
    let exp = ExperimentConfig {
        env: EnvSource::File { path: "unused".into() },
        train_steps: 400,
        eval_every: 200,
        eval_episodes: 30,
        ..ExperimentConfig::default()
    };
    let env = small_env(45).with_slate_size(1).unwrap();
    let full = ExperimentConfig { agent: config(AgentKind::FullSlate, 1), ..exp.clone() };
    let topk = ExperimentConfig { agent: config(AgentKind::TopK, 1), ..exp };
    let (a, agent_a) = run_seed(&full, &env, 7).unwrap();
    let (b, agent_b) = run_seed(&topk, &env, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(agent_a.checksum(), agent_b.checksum());
}

#[test]
fn dpg_with_all_candidates_matches_full_slate_selection() {
    let env = small_env(46);
    let full = Agent::new(config(AgentKind::FullSlate, 3), &env, &mut rng(5)).unwrap();
    let mut dpg = Agent::new(
        AgentConfig { knn_k: KnnK::All, ..config(AgentKind::DpgKnn, 3) },
        &env,
        &mut rng(6),
    )
    .unwrap();
    *dpg.q_pair_mut() = full.q_pair().clone();
    for s in env.live_states() {
        assert_eq!(dpg.greedy_action(&env, s).unwrap(), full.greedy_action(&env, s).unwrap());
    }
}

#[test]
fn zero_discount_regresses_onto_rewards() {
    let env = small_env(47);
    let mut cfg = config(AgentKind::FullSlate, 2);
    cfg.gamma = 0.0;
    cfg.eta = 0.02;
    cfg.q_hidden = vec![];
    let mut agent = Agent::new(cfg, &env, &mut rng(7)).unwrap();
    let s = busy_state(&env, 2);
    let c = env.candidate_actions(s).to_vec();
    let rec = TransitionRecord {
        state: s,
        slate: Slate::new(vec![c[0], c[1]]).unwrap(),
        executed: Executed::Action(c[0]),
        reward: 3.0,
        next_state: StateId::from(c[0]),
        terminal: false,
    };
    let mut r = rng(47);
    for _ in 0..3000 {
        agent.learn_step(&env, rec.clone(), &mut r).unwrap();
    }
    let q = agent.q_value(&env, s, &[c[0], c[1]]).unwrap();
    assert!((q - 3.0).abs() < 1e-3, "{q}");
}

#[test]
fn nonzero_epsilon_changes_only_training_slates() {
    let env = small_env(48);
    let a = Agent::new(AgentConfig { epsilon: 0.0, ..config(AgentKind::FullSlate, 3) }, &env, &mut rng(8)).unwrap();
    let b = Agent::new(AgentConfig { epsilon: 1.0, ..config(AgentKind::FullSlate, 3) }, &env, &mut rng(8)).unwrap();
    for s in env.live_states() {
        assert_eq!(a.greedy_action(&env, s).unwrap(), b.greedy_action(&env, s).unwrap());
        assert_eq!(a.act(&env, s, &mut rng(0)).unwrap(), a.greedy_action(&env, s).unwrap());
    }
}

proptest! {
    #[test]
    fn knn_returns_the_k_closest(seed in 0u64..200, k in 1usize..20) {
        let env = small_env(seed % 4);
        let mut r = rng(seed);
        let s = env.initial_state(&mut r);
        let cands = env.candidate_actions(s).to_vec();
        let proto: Vec<f64> = (0..8).map(|i| ((seed + i) as f64 * 0.37).sin()).collect();
        let got = knn_query(&env, &cands, &proto, k).unwrap();
        prop_assert_eq!(got.len(), k.min(cands.len()));
        let dist = |a: ActionId| squared_distance(env.item_features(a.0), &proto);
        let worst_kept = got.iter().map(|&a| dist(a)).fold(0.0, f64::max);
        for a in cands.iter().filter(|a| !got.contains(a)) {
            prop_assert!(dist(*a) >= worst_kept);
        }
        prop_assert!(got.windows(2).all(|w| dist(w[0]) <= dist(w[1])));
    }
}
