use std::collections::HashMap;
use std::fmt::{self, Write as _};

use super::{for_each_tuple, ExactScorer, ExactSolution};
use crate::agents::{greedy_slate, random_slate};
use crate::environment::SlateMdp;
use crate::error::Result;
use crate::types::{ActionId, Executed, StateId};
use crate::RandomSource;

/// Witnesses kept per property; the count covers all violations.
pub const MAX_WITNESSES: usize = 20;

/// Outcome of checking one property.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyReport {
    pub property: String,
    pub checked: usize,
    pub violation_count: usize,
    pub witnesses: Vec<String>,
}

impl PropertyReport {
    pub fn new(property: impl Into<String>) -> Self {
        PropertyReport {
            property: property.into(),
            checked: 0,
            violation_count: 0,
            witnesses: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }

    fn check(&mut self, ok: bool, witness: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.violation_count += 1;
            if self.witnesses.len() < MAX_WITNESSES {
                self.witnesses.push(witness());
            }
        }
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "property: {}", self.property)?;
        writeln!(f, "result: {}", if self.passed() { "pass" } else { "fail" })?;
        writeln!(f, "checked: {}", self.checked)?;
        writeln!(f, "violations: {}", self.violation_count)?;
        for w in &self.witnesses {
            writeln!(f, "witness: {w}")?;
        }
        Ok(())
    }
}

/// A list of property reports.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CertificationReport {
    pub properties: Vec<PropertyReport>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(PropertyReport::passed)
    }

    pub fn get(&self, property: &str) -> Option<&PropertyReport> {
        self.properties.iter().find(|p| p.property == property)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.properties.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = write!(out, "{p}");
        }
        out
    }
}

fn fmt_slate(slate: &[ActionId]) -> String {
    let parts: Vec<String> = slate.iter().map(|a| a.0.to_string()).collect();
    format!("({})", parts.join(","))
}

/// Exhaustive check of the two sequential-presentation conditions over all
/// ordered slates of candidate actions up to the slate size:
///
/// * truncation: an executed slot's probability equals its probability
///   under the slate cut right after it;
/// * position damage: `Pr(a | s, (a_1..a_i, a)) <= Pr(a | s, (a_1..a_{i-1}, a))`.
///
/// Returns the truncation report first.
pub fn check_sequential_presentation<E: SlateMdp + ?Sized>(env: &E, tolerance: f64) -> Result<Vec<PropertyReport>> {
    let mut trunc = PropertyReport::new("sequential presentation: truncation");
    let mut damage = PropertyReport::new("sequential presentation: position damage");
    let l = env.slate_size();
    for s in env.live_states() {
        let cands = env.candidate_actions(s).to_vec();
        if cands.is_empty() {
            continue;
        }
        // Probabilities of every slate up to length l, keyed by the slate.
        let mut prob: HashMap<Vec<ActionId>, Vec<(ActionId, f64)>> = HashMap::new();
        for len in 1..=l {
            let mut err = None;
            for_each_tuple(&cands, len, |t| {
                if err.is_some() {
                    return;
                }
                match env.execution_distribution(s, t) {
                    Ok(d) => {
                        prob.insert(t.to_vec(), d.entries);
                    }
                    Err(e) => err = Some(e),
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        let p_of = |slate: &[ActionId], a: ActionId| -> f64 {
            prob[slate]
                .iter()
                .find(|(x, _)| *x == a)
                .map_or(0.0, |(_, p)| *p)
        };
        for len in 1..=l {
            for_each_tuple(&cands, len, |t| {
                for i in 0..len {
                    if t[..i].contains(&t[i]) {
                        continue;
                    }
                    let full = p_of(t, t[i]);
                    let cut = p_of(&t[..=i], t[i]);
                    trunc.check((full - cut).abs() <= tolerance, || {
                        format!("state {s} slate {} slot {}: {full} vs {cut} when cut", fmt_slate(t), i + 1)
                    });
                }
                if len >= 2 {
                    let a = t[len - 1];
                    let mut shorter = t[..len - 2].to_vec();
                    shorter.push(a);
                    let later = p_of(t, a);
                    let earlier = p_of(&shorter, a);
                    damage.check(later <= earlier + tolerance, || {
                        format!(
                            "state {s} action {a}: {later} in {} exceeds {earlier} in {}",
                            fmt_slate(t),
                            fmt_slate(&shorter)
                        )
                    });
                }
            });
        }
    }
    Ok(vec![trunc, damage])
}

/// Exhaustive monotonicity and diminishing-returns check of the slate
/// value `f(a) = Q(s, a)` over all sequences of candidate actions up to the
/// slate size, with optimal behaviour afterwards.
///
/// * monotone: `f(a ++ x) >= f(a)`;
/// * submodular: `f(a_i ++ x) - f(a_i) <= f(a_{i-1} ++ x) - f(a_{i-1})`,
///   where `a_{i-1}` is `a_i` without its last element.
pub fn check_submodular_monotone<E: SlateMdp + ?Sized>(
    solution: &ExactSolution,
    env: &E,
    tolerance: f64,
) -> Result<Vec<PropertyReport>> {
    let mut mono = PropertyReport::new("monotone");
    let mut sub = PropertyReport::new("submodular");
    let l = solution.slate_size();
    for s in env.live_states() {
        let cands = solution.candidates(s).to_vec();
        if cands.is_empty() {
            continue;
        }
        let mut f: HashMap<Vec<ActionId>, f64> = HashMap::new();
        f.insert(Vec::new(), solution.slate_value(env, s, &[])?);
        for len in 1..=l {
            let mut err = None;
            for_each_tuple(&cands, len, |t| {
                if err.is_none() {
                    match solution.slate_value(env, s, t) {
                        Ok(v) => {
                            f.insert(t.to_vec(), v);
                        }
                        Err(e) => err = Some(e),
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        for len in 0..l {
            for_each_tuple(&cands, len, |prefix| {
                let base = f[prefix];
                let mut ext = prefix.to_vec();
                ext.push(ActionId(0));
                for &x in &cands {
                    *ext.last_mut().unwrap() = x;
                    let gain = f[&ext] - base;
                    mono.check(gain >= -tolerance, || {
                        format!("state {s}: f{} = {} < f{} = {base}", fmt_slate(&ext), f[&ext], fmt_slate(prefix))
                    });
                    if len >= 1 {
                        let parent = &prefix[..len - 1];
                        let mut pext = parent.to_vec();
                        pext.push(x);
                        let parent_gain = f[&pext] - f[parent];
                        sub.check(gain <= parent_gain + tolerance, || {
                            format!(
                                "state {s} action {x}: gain {gain} after {} exceeds gain {parent_gain} after {}",
                                fmt_slate(prefix),
                                fmt_slate(parent)
                            )
                        });
                    }
                }
            });
        }
    }
    Ok(vec![mono, sub])
}

/// Samples transitions from random live states under random candidate
/// slates; every non-execution must end the episode with reward zero.
pub fn check_fatal_failure<E: SlateMdp + ?Sized>(
    env: &E,
    samples: usize,
    rng: &mut RandomSource,
) -> Result<PropertyReport> {
    let mut report = PropertyReport::new("fatal failure");
    let l = env.slate_size();
    let live = env.live_states();
    let usable: Vec<StateId> = live
        .into_iter()
        .filter(|s| !env.candidate_actions(*s).is_empty())
        .collect();
    if usable.is_empty() {
        return Ok(report);
    }
    for _ in 0..samples {
        let s = usable[rand::Rng::random_range(rng, 0..usable.len())];
        let slate = random_slate(env.candidate_actions(s), l, rng)?;
        let rec = env.step(s, &slate, rng)?;
        let executed_from_slate = matches!(rec.executed, Executed::Action(a) if slate.contains(&a));
        report.check(executed_from_slate || (rec.terminal && rec.reward == 0.0), || {
            format!(
                "state {s} slate {slate}: non-execution led to {} with reward {} (terminal {})",
                rec.next_state, rec.reward, rec.terminal
            )
        });
    }
    Ok(report)
}

/// At every state, the greedy slate built from exact values is worth at
/// least `(1 - 1/e)` of the best slate.
pub fn check_greedy_bound(solution: &ExactSolution, states: &[StateId], tolerance: f64) -> Result<PropertyReport> {
    let mut report = PropertyReport::new("greedy within 1 - 1/e of optimum");
    let ratio = 1.0 - (-1.0f64).exp();
    for &s in states {
        let cands = solution.candidates(s).to_vec();
        if cands.is_empty() {
            continue;
        }
        let mut scorer = ExactScorer::new(solution, s);
        let g = greedy_slate(&mut scorer, &[cands])?;
        let (best, opt) = solution.optimal_slate(s).expect("state has slates");
        report.check(g.value >= ratio * opt - tolerance, || {
            format!("state {s}: greedy {} worth {} < (1-1/e) * {opt} of {best}", g.slate, g.value)
        });
    }
    Ok(report)
}
