//! Exact solutions and property checks for small slate MDPs.
//!
//! Slates are enumerated as ordered tuples over each state's candidate
//! actions, so an instance with `c` candidates per state and slate size `l`
//! has `c^l` slates per state. Instances above [`MAX_PAIRS`] are refused.

mod checks;
mod toy;

pub use checks::{
    check_fatal_failure, check_greedy_bound, check_sequential_presentation,
    check_submodular_monotone, CertificationReport, PropertyReport,
};
pub use toy::SequentialToy;

use std::fmt::Write as _;

use crate::agents::SlateScorer;
use crate::environment::SlateMdp;
use crate::error::{Error, Result};
use crate::types::{ActionId, Slate, StateId};

/// Largest number of enumerated `(state, slate)` pairs.
pub const MAX_PAIRS: u128 = 1_000_000;

/// Sweep limit of value iteration.
pub const MAX_SWEEPS: usize = 1_000_000;

/// Expected reward and continuation mass of one `(state, slate)` pair.
#[derive(Clone, Debug)]
struct PairModel {
    reward: f64,
    next: Vec<(usize, f64)>,
}

/// Exact `Q*` over every enumerated `(state, slate)` pair and `V*` over
/// every state.
#[derive(Clone, Debug)]
pub struct ExactSolution {
    gamma: f64,
    slate_size: usize,
    candidates: Vec<Vec<ActionId>>,
    offsets: Vec<usize>,
    q: Vec<f64>,
    v: Vec<f64>,
    sweeps: usize,
}

/// Number of ordered slates of length `l` over `c` actions, if it fits.
pub fn slate_count(c: usize, l: usize) -> u128 {
    (c as u128).saturating_pow(l as u32)
}

/// Iterates all ordered tuples of length `l` over `set`, lexicographically.
pub fn for_each_tuple(set: &[ActionId], l: usize, mut f: impl FnMut(&[ActionId])) {
    if set.is_empty() && l > 0 {
        return;
    }
    let mut digits = vec![0usize; l];
    let mut tuple: Vec<ActionId> = vec![set.first().copied().unwrap_or(ActionId(0)); l];
    loop {
        f(&tuple);
        let mut i = l;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < set.len() {
                tuple[i] = set[digits[i]];
                break;
            }
            digits[i] = 0;
            tuple[i] = set[0];
        }
    }
}

fn pair_model<E: SlateMdp + ?Sized>(env: &E, s: StateId, slate: &[ActionId]) -> Result<PairModel> {
    let mut reward = 0.0;
    let mut next: Vec<(usize, f64)> = Vec::new();
    for o in env.outcomes(s, slate)? {
        reward += o.probability * o.reward;
        if !o.terminal {
            if let Some(j) = o.next_state.index() {
                next.push((j, o.probability));
            }
        }
    }
    next.sort_by_key(|p| p.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(next.len());
    for (j, p) in next {
        match merged.last_mut() {
            Some(last) if last.0 == j => last.1 += p,
            _ => merged.push((j, p)),
        }
    }
    Ok(PairModel {
        reward,
        next: merged,
    })
}

/// Value iteration over every state with candidate actions, at the
/// environment's slate size. Stops once a sweep changes no state value by
/// `tolerance` or more.
pub fn exact_q<E: SlateMdp + ?Sized>(env: &E, gamma: f64, tolerance: f64) -> Result<ExactSolution> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::config("gamma", "must be in [0, 1]"));
    }
    if !(tolerance > 0.0) {
        return Err(Error::config("tolerance", "must be positive"));
    }
    let n = env.n_states();
    let l = env.slate_size();
    let candidates: Vec<Vec<ActionId>> = (0..n)
        .map(|s| env.candidate_actions(StateId::new(s)).to_vec())
        .collect();
    let pairs: u128 = candidates.iter().map(|c| slate_count(c.len(), l)).sum();
    if pairs > MAX_PAIRS {
        return Err(Error::Refusal {
            pairs,
            limit: MAX_PAIRS,
        });
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut models = Vec::with_capacity(pairs as usize);
    for (s, c) in candidates.iter().enumerate() {
        offsets.push(models.len());
        let mut err = None;
        for_each_tuple(c, l, |slate| {
            if err.is_none() {
                match pair_model(env, StateId::new(s), slate) {
                    Ok(m) => models.push(m),
                    Err(e) => err = Some(e),
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    offsets.push(models.len());

    let mut v = vec![0.0; n];
    let mut q = vec![0.0; models.len()];
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        for (k, m) in models.iter().enumerate() {
            q[k] = m.reward + gamma * m.next.iter().map(|&(j, p)| p * v[j]).sum::<f64>();
        }
        let mut change: f64 = 0.0;
        for s in 0..n {
            let block = &q[offsets[s]..offsets[s + 1]];
            let best = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let best = if block.is_empty() { 0.0 } else { best };
            if !best.is_finite() {
                return Err(Error::NumericalFault(format!("value of state {s} diverged")));
            }
            change = change.max((best - v[s]).abs());
            v[s] = best;
        }
        if change < tolerance {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::NumericalFault(format!(
                "value iteration did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
    }
    // Q consistent with the final V.
    for (k, m) in models.iter().enumerate() {
        q[k] = m.reward + gamma * m.next.iter().map(|&(j, p)| p * v[j]).sum::<f64>();
    }
    Ok(ExactSolution {
        gamma,
        slate_size: l,
        candidates,
        offsets,
        q,
        v,
        sweeps,
    })
}

impl ExactSolution {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn slate_size(&self) -> usize {
        self.slate_size
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn pair_count(&self) -> usize {
        self.q.len()
    }

    pub fn candidates(&self, s: StateId) -> &[ActionId] {
        s.index().and_then(|i| self.candidates.get(i)).map_or(&[], |c| c)
    }

    /// `V*(s)`; zero for the end state and states without candidates.
    pub fn v(&self, s: StateId) -> f64 {
        s.index().and_then(|i| self.v.get(i)).copied().unwrap_or(0.0)
    }

    pub fn v_table(&self) -> &[f64] {
        &self.v
    }

    /// `Q*(s, slate)` for an enumerated slate of candidate actions.
    pub fn q(&self, s: StateId, slate: &[ActionId]) -> Option<f64> {
        let i = s.index()?;
        let c = self.candidates.get(i)?;
        if slate.len() != self.slate_size {
            return None;
        }
        let mut k = 0usize;
        for a in slate {
            k = k * c.len() + c.binary_search(a).ok()?;
        }
        Some(self.q[self.offsets[i] + k])
    }

    /// Enumerated slates of `s` with their values, lexicographic order.
    pub fn q_entries(&self, s: StateId) -> Vec<(Slate, f64)> {
        let Some(i) = s.index().filter(|&i| i < self.candidates.len()) else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity(self.offsets[i + 1] - self.offsets[i]);
        let mut k = self.offsets[i];
        for_each_tuple(&self.candidates[i], self.slate_size, |t| {
            out.push((Slate::new(t.to_vec()).expect("non-empty"), self.q[k]));
            k += 1;
        });
        out
    }

    /// `Q(s, a)` for a slate of any length (including the empty slate),
    /// acting optimally afterwards.
    pub fn slate_value<E: SlateMdp + ?Sized>(&self, env: &E, s: StateId, slate: &[ActionId]) -> Result<f64> {
        let m = pair_model(env, s, slate)?;
        Ok(m.reward + self.gamma * m.next.iter().map(|&(j, p)| p * self.v[j]).sum::<f64>())
    }

    /// Exhaustive argmax over the enumerated slates of `s`; the first maximum
    /// in lexicographic order wins.
    pub fn optimal_slate(&self, s: StateId) -> Option<(Slate, f64)> {
        let mut best: Option<(Slate, f64)> = None;
        for (slate, v) in self.q_entries(s) {
            if best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((slate, v));
            }
        }
        best
    }

    /// Exact values as text, one `state<TAB>slate<TAB>Q` line per pair.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# gamma {} slate_size {} sweeps {}", self.gamma, self.slate_size, self.sweeps);
        for s in 0..self.candidates.len() {
            let sid = StateId::new(s);
            let _ = writeln!(out, "V\t{s}\t{:.17e}", self.v[s]);
            for (slate, q) in self.q_entries(sid) {
                let _ = writeln!(out, "Q\t{s}\t{slate}\t{q:.17e}");
            }
        }
        out
    }
}

/// Free-function form of [`ExactSolution::optimal_slate`].
pub fn optimal_slate(solution: &ExactSolution, s: StateId) -> Option<(Slate, f64)> {
    solution.optimal_slate(s)
}

/// Exact values as a [`SlateScorer`], so that the greedy rule can run on
/// them. Padded slates are looked up directly.
pub struct ExactScorer<'a> {
    solution: &'a ExactSolution,
    state: StateId,
    buf: Vec<ActionId>,
}

impl<'a> ExactScorer<'a> {
    pub fn new(solution: &'a ExactSolution, state: StateId) -> Self {
        ExactScorer {
            solution,
            state,
            buf: Vec::new(),
        }
    }
}

impl SlateScorer for ExactScorer<'_> {
    fn slots(&self) -> usize {
        self.solution.slate_size
    }

    fn padded_value(&mut self, prefix: &[ActionId], a: ActionId) -> Result<f64> {
        self.buf.clear();
        self.buf.extend_from_slice(prefix);
        self.buf.resize(self.solution.slate_size, a);
        self.solution
            .q(self.state, &self.buf)
            .ok_or_else(|| Error::domain(format!("slate {:?} is not enumerated for {}", self.buf, self.state)))
    }
}

/// Exact value of a fixed deterministic policy.
pub fn evaluate_policy<E: SlateMdp + ?Sized>(
    env: &E,
    gamma: f64,
    tolerance: f64,
    mut policy: impl FnMut(StateId) -> Option<Slate>,
) -> Result<Vec<f64>> {
    let n = env.n_states();
    let models: Vec<Option<PairModel>> = (0..n)
        .map(|s| {
            policy(StateId::new(s))
                .map(|slate| pair_model(env, StateId::new(s), &slate))
                .transpose()
        })
        .collect::<Result<_>>()?;
    let mut v = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        let mut change: f64 = 0.0;
        let next: Vec<f64> = models
            .iter()
            .map(|m| {
                m.as_ref().map_or(0.0, |m| {
                    m.reward + gamma * m.next.iter().map(|&(j, p)| p * v[j]).sum::<f64>()
                })
            })
            .collect();
        for (a, b) in v.iter_mut().zip(next) {
            change = change.max((*a - b).abs());
            *a = b;
        }
        if change < tolerance {
            return Ok(v);
        }
    }
    Err(Error::NumericalFault("policy evaluation did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::greedy_slate;
    use crate::environment::{
        chain_environment, wrap_fatal_failure, wrap_risk_seeking, ChainLayout, EnvironmentSpec,
        PositionDiscount, SpecParts, FORMAT_VERSION,
    };

    fn two_state() -> EnvironmentSpec {
        EnvironmentSpec::new(SpecParts {
            version: FORMAT_VERSION,
            n_states: 2,
            feature_dim: 1,
            slate_size: 1,
            fail_weight: 0.5,
            p_end_fail: 0.2,
            p_end_exec: 0.1,
            rewards: vec![1.0, 3.0],
            features: vec![vec![0.0], vec![1.0]],
            edges: vec![vec![(1, 1.5)], vec![(0, 0.5)]],
            position_discount: PositionDiscount::Divide,
            absorbing: vec![],
        })
        .unwrap()
    }

    #[test]
    fn tuples_are_lexicographic() {
        let set = [ActionId(1), ActionId(4)];
        let mut seen = Vec::new();
        for_each_tuple(&set, 2, |t| seen.push((t[0].0, t[1].0)));
        assert_eq!(seen, vec![(1, 1), (1, 4), (4, 1), (4, 4)]);
    }

    #[test]
    fn myopic_values_by_hand() {
        // State 0 shows action 1: executed w.p. 1.5/2 = 0.75 (reward 3),
        // otherwise a uniform teleport to state 0 (reward 1) or 1 (reward 3).
        // Expected reward 0.75 * 3 + 0.25 * 2 = 2.75.
        // State 1 shows action 0: 0.5 * 1 + 0.5 * 2 = 1.5.
        let env = two_state();
        let sol = exact_q(&env, 0.0, 1e-12).unwrap();
        assert!((sol.q(StateId::new(0), &[ActionId(1)]).unwrap() - 2.75).abs() < 1e-12);
        assert!((sol.q(StateId::new(1), &[ActionId(0)]).unwrap() - 1.5).abs() < 1e-12);
        assert!(sol.q(StateId::new(0), &[ActionId(0)]).is_none());
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let mut parts = two_state().into_parts();
        parts.rewards = vec![0.0, 0.0];
        let env = EnvironmentSpec::new(parts).unwrap();
        let sol = exact_q(&env, 0.9, 1e-12).unwrap();
        assert!(sol.v_table().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_more_sweep_is_a_fixed_point() {
        let env = two_state();
        let sol = exact_q(&env, 0.9, 1e-10).unwrap();
        for s in 0..2 {
            let sid = StateId::new(s);
            for (slate, q) in sol.q_entries(sid) {
                let again = sol.slate_value(&env, sid, &slate).unwrap();
                assert!((again - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn chain_start_value_by_hand() {
        // Fatal failure, reward squared: walking the chain succeeds with
        // probability 0.9^4 * p_goal and pays goal^2; taking the lure pays
        // 0.9 * lure^2 = 0.9. With p_goal = 1/200 the walk is worth
        // 0.6561 * 0.005 * 10^4 = 32.805.
        let raw = chain_environment(5, 1.0, 100.0).unwrap();
        let layout = ChainLayout { length: 5 };
        let env = wrap_risk_seeking(wrap_fatal_failure(&raw), 2.0).unwrap();
        let sol = exact_q(&env, 1.0, 1e-12).unwrap();
        let want = 0.9f64.powi(4) * 0.005 * 1e4;
        assert!((sol.v(layout.start()) - want).abs() < 1e-9, "{}", sol.v(layout.start()));
        assert_eq!(sol.optimal_slate(layout.start()).unwrap().0[0], layout.forward(0));

        // Risk neutral: the lure is worth 0.9, the walk 0.6561 * 0.005 * 100.
        let env = wrap_fatal_failure(&raw);
        let sol = exact_q(&env, 1.0, 1e-12).unwrap();
        assert!((sol.v(layout.start()) - 0.9).abs() < 1e-12);
        for i in 0..5 {
            let (slate, _) = sol.optimal_slate(layout.chain_state(i)).unwrap();
            assert_eq!(slate[0], layout.lure());
        }
    }

    #[test]
    fn optimal_slate_ties_are_lexicographic() {
        let mut parts = two_state().into_parts();
        parts.rewards = vec![0.0, 0.0];
        parts.edges = vec![vec![(1, 1.0)], vec![(0, 1.0)]];
        parts.slate_size = 2;
        let env = EnvironmentSpec::new(parts).unwrap();
        let sol = exact_q(&env, 0.5, 1e-12).unwrap();
        assert_eq!(sol.optimal_slate(StateId::new(0)).unwrap().0.actions(), &[ActionId(1), ActionId(1)]);
    }

    #[test]
    fn refuses_large_instances() {
        let mut parts = two_state().into_parts();
        let n = 40;
        parts.n_states = n;
        parts.rewards = vec![0.0; n];
        parts.features = vec![vec![0.0]; n];
        parts.edges = (0..n).map(|s| (0..n).filter(|&t| t != s).map(|t| (t, 1.0)).collect()).collect();
        parts.slate_size = 4;
        let env = EnvironmentSpec::new(parts).unwrap();
        assert!(matches!(exact_q(&env, 0.9, 1e-6), Err(Error::Refusal { .. })));
    }

    #[test]
    fn exact_scorer_drives_greedy() {
        let mut parts = two_state().into_parts();
        parts.slate_size = 1;
        let env = EnvironmentSpec::new(parts).unwrap();
        let sol = exact_q(&env, 0.9, 1e-12).unwrap();
        let s = StateId::new(0);
        let mut scorer = ExactScorer::new(&sol, s);
        let g = greedy_slate(&mut scorer, &[sol.candidates(s).to_vec()]).unwrap();
        assert_eq!(g.value, sol.optimal_slate(s).unwrap().1);
    }

    #[test]
    fn policy_evaluation_matches_optimum_for_optimal_policy() {
        let env = two_state();
        let sol = exact_q(&env, 0.9, 1e-13).unwrap();
        let v = evaluate_policy(&env, 0.9, 1e-13, |s| sol.optimal_slate(s).map(|p| p.0)).unwrap();
        for s in 0..2 {
            assert!((v[s] - sol.v(StateId::new(s))).abs() < 1e-9);
        }
    }
}
