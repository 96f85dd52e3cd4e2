//! Game × machine composition, policy iteration, and the exact-belief
//! oracles used to measure what the finite machine gives up.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{action_distribution, transform, BeliefState, ZERO_PROB};
use crate::error::{Error, Result};
use crate::game::{GameInstance, Observation};
use crate::ism::InformationStateMachine;
use crate::par;
use crate::rng::{sample_index, sample_sparse, stream_rng};

pub const DEFAULT_GAMMA: f64 = 0.95;
pub const DEFAULT_TOL: f64 = 1e-10;
/// Largest state count evaluated with a dense LU solve.
pub const DENSE_LIMIT: usize = 1000;

/// Finite MDP with sparse rows indexed by `state * num_actions + action`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<Vec<(usize, f64)>>,
    rewards: Vec<f64>,
}

impl FiniteMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        let rows = num_states * num_actions;
        if transitions.len() != rows || rewards.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: transitions.len().min(rewards.len()),
            });
        }
        for row in &transitions {
            if let Some((t, _)) = row.iter().find(|(t, _)| *t >= num_states) {
                return Err(Error::InvalidState(*t));
            }
            let sum: f64 = row.iter().map(|(_, p)| p).sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|(_, p)| *p < 0.0) {
                return Err(Error::Domain(format!("transition row sums to {sum}")));
            }
        }
        Ok(FiniteMdp {
            num_states,
            num_actions,
            transitions,
            rewards,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.transitions[state * self.num_actions + action]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[state * self.num_actions + action]
    }

    pub fn q_value(&self, state: usize, action: usize, values: &[f64], gamma: f64) -> f64 {
        self.reward(state, action) + gamma * self.row(state, action).iter().map(|(t, p)| p * values[*t]).sum::<f64>()
    }
}

/// Product of a game and a machine, restricted to pairs reachable from
/// `(initial game state, m0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedMdp {
    pub mdp: FiniteMdp,
    /// `(game state, machine state)` for every MDP state; index 0 is initial.
    pub pairs: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
}

impl ComposedMdp {
    pub fn num_states(&self) -> usize {
        self.pairs.len()
    }

    pub fn index_of(&self, s: usize, m: usize) -> Option<usize> {
        self.index.get(&(s, m)).copied()
    }
}

/// Rows for one product state: per player-1 action, successor pairs with
/// probabilities and the expected reward.
type PairRows = Vec<(Vec<((usize, usize), f64)>, f64)>;

fn pair_rows(instance: &GameInstance, ism: &InformationStateMachine, s: usize, m: usize) -> Result<PairRows> {
    let arena = &instance.arena;
    let p_a2 = action_distribution(ism.belief(m), s, instance);
    let mut next_m = Vec::with_capacity(p_a2.len());
    for (a2, p) in p_a2.iter().enumerate() {
        if *p <= ZERO_PROB {
            next_m.push(None);
            continue;
        }
        match ism.advance(m, Observation::new(s, a2))? {
            Some(n) => next_m.push(Some(n)),
            None => {
                return Err(Error::Mismatch(format!(
                    "machine state {m} has no edge for observation ({s}, {a2}) of probability {p}"
                )))
            }
        }
    }
    let kept: f64 = p_a2
        .iter()
        .zip(&next_m)
        .filter(|(_, n)| n.is_some())
        .map(|(p, _)| p)
        .sum();
    let mut rows = Vec::with_capacity(arena.num_p1_actions());
    for a1 in 0..arena.num_p1_actions() {
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (a2, n) in next_m.iter().enumerate() {
            let Some(n) = n else { continue };
            for (s2, q) in arena.successors(s, a1, a2) {
                *acc.entry((*s2, *n)).or_insert(0.0) += p_a2[a2] / kept * q;
            }
        }
        let reward = (0..p_a2.len()).map(|a2| p_a2[a2] * arena.reward(s, a1, a2)).sum();
        rows.push((acc.into_iter().collect(), reward));
    }
    Ok(rows)
}

/// Builds `P̂` and `R̂` by breadth-first search over product pairs.
/// Observations of probability at most `1e-12` under `b(m)` are dropped
/// and the remaining mass renormalized.
pub fn compose(instance: &GameInstance, ism: &InformationStateMachine) -> Result<ComposedMdp> {
    if ism.beliefs().iter().any(|b| b.len() != instance.num_policies()) {
        return Err(Error::Mismatch("machine beliefs do not match the policy count".into()));
    }
    let start = (instance.arena.initial, ism.initial());
    let mut pairs = vec![start];
    let mut index = HashMap::from([(start, 0usize)]);
    let mut rows: Vec<PairRows> = Vec::new();
    let mut frontier = 0..1;
    while !frontier.is_empty() {
        let level: Vec<(usize, usize)> = pairs[frontier.clone()].to_vec();
        let computed = par::map(&level, |&(s, m)| pair_rows(instance, ism, s, m));
        let next_start = pairs.len();
        for r in computed {
            let r = r?;
            for (succ, _) in &r {
                for (pair, _) in succ {
                    if !index.contains_key(pair) {
                        index.insert(*pair, pairs.len());
                        pairs.push(*pair);
                    }
                }
            }
            rows.push(r);
        }
        frontier = next_start..pairs.len();
    }
    let na = instance.arena.num_p1_actions();
    let mut transitions = Vec::with_capacity(pairs.len() * na);
    let mut rewards = Vec::with_capacity(pairs.len() * na);
    for r in rows {
        for (succ, reward) in r {
            transitions.push(succ.into_iter().map(|(pair, p)| (index[&pair], p)).collect());
            rewards.push(reward);
        }
    }
    let mdp = FiniteMdp::new(pairs.len(), na, transitions, rewards)?;
    Ok(ComposedMdp { mdp, pairs, index })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Player-1 action per MDP state.
    pub policy: Vec<usize>,
    pub values: Vec<f64>,
    pub improvements: usize,
}

fn evaluate(mdp: &FiniteMdp, policy: &[usize], gamma: f64, tol: f64, warm: &[f64]) -> Result<Vec<f64>> {
    let n = mdp.num_states();
    if n <= DENSE_LIMIT {
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut r = DVector::<f64>::zeros(n);
        for s in 0..n {
            r[s] = mdp.reward(s, policy[s]);
            for (t, p) in mdp.row(s, policy[s]) {
                a[(s, *t)] -= gamma * p;
            }
        }
        return a
            .lu()
            .solve(&r)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::Domain("policy evaluation system is singular".into()));
    }
    // Gauss-Seidel sweeps until the Bellman residual of the fixed policy is small.
    let mut v = warm.to_vec();
    let bound = (tol * (1.0 - gamma)).max(f64::EPSILON);
    loop {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            let nv = mdp.q_value(s, policy[s], &v, gamma);
            delta = delta.max((nv - v[s]).abs());
            v[s] = nv;
        }
        if delta <= bound {
            return Ok(v);
        }
    }
}

/// Lowest-index action whose Q-value is within `eps` of the best.
fn greedy(mdp: &FiniteMdp, s: usize, values: &[f64], gamma: f64, eps: f64) -> (usize, f64) {
    let q: Vec<f64> = (0..mdp.num_actions())
        .map(|a| mdp.q_value(s, a, values, gamma))
        .collect();
    let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let a = q.iter().position(|x| *x >= best - eps).unwrap_or(0);
    (a, best)
}

/// Howard policy iteration from the all-zero-action policy.
pub fn policy_iteration(mdp: &FiniteMdp, gamma: f64, tol: f64) -> Result<Plan> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("discount must lie in [0, 1), got {gamma}")));
    }
    let n = mdp.num_states();
    let mut policy = vec![0usize; n];
    let mut values = vec![0.0; n];
    let budget = 10 * n.max(1);
    let scale = (0..n * mdp.num_actions())
        .map(|i| mdp.rewards[i].abs())
        .fold(0.0, f64::max)
        / (1.0 - gamma);
    let eps = 1e-12 * (1.0 + scale) + tol;
    for step in 0..=budget {
        values = evaluate(mdp, &policy, gamma, tol, &values)?;
        let improved = par::map_range(n, |s| {
            let current = mdp.q_value(s, policy[s], &values, gamma);
            let (a, best) = greedy(mdp, s, &values, gamma, eps);
            if best > current + eps {
                a
            } else {
                policy[s]
            }
        });
        if improved == policy {
            return Ok(Plan {
                policy,
                values,
                improvements: step,
            });
        }
        policy = improved;
    }
    Err(Error::NonConvergence(budget))
}

/// `max_s |V(s) − max_a Q(s, a)|`.
pub fn bellman_residual(mdp: &FiniteMdp, values: &[f64], gamma: f64) -> f64 {
    (0..mdp.num_states())
        .map(|s| {
            let best = (0..mdp.num_actions())
                .map(|a| mdp.q_value(s, a, values, gamma))
                .fold(f64::NEG_INFINITY, f64::max);
            (values[s] - best).abs()
        })
        .fold(0.0, f64::max)
}

/// `R*((s, b), a1) = Σ_{a2} P(a2 | b) R(s, a1, a2)`.
pub fn exact_expected_reward(s: usize, b: &BeliefState, a1: usize, instance: &GameInstance) -> f64 {
    action_distribution(b, s, instance)
        .iter()
        .enumerate()
        .map(|(a2, p)| p * instance.arena.reward(s, a1, a2))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSuccessor {
    pub state: usize,
    pub action: usize,
    pub belief: BeliefState,
    pub probability: f64,
}

/// Successors of `(s, b)` under `a1` in the exact belief MDP.
pub fn exact_transition(s: usize, b: &BeliefState, a1: usize, instance: &GameInstance) -> Result<Vec<ExactSuccessor>> {
    let mut out = Vec::new();
    for (a2, p) in action_distribution(b, s, instance).into_iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let next = transform(b, Observation::new(s, a2), instance)?;
        for (s2, q) in instance.arena.successors(s, a1, a2) {
            out.push(ExactSuccessor {
                state: *s2,
                action: a2,
                belief: next.clone(),
                probability: p * q,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueGapReport {
    pub episodes: usize,
    pub horizon: usize,
    /// Mean discounted return when player 2 follows the machine's beliefs.
    pub composed_mean: f64,
    pub composed_stderr: f64,
    /// Mean discounted return when player 2 follows the exact beliefs.
    pub exact_mean: f64,
    pub exact_stderr: f64,
    pub gap: f64,
    /// Standard error of the paired per-episode difference.
    pub gap_stderr: f64,
    /// `γ^horizon · R_max / (1 − γ)`.
    pub truncation_bound: f64,
    /// Steps where the exact run left the composed state space.
    pub off_model_steps: usize,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs the optimal composed-MDP policy under both dynamics with common
/// random numbers and compares discounted returns.
pub fn value_gap_estimate(
    instance: &GameInstance,
    ism: &InformationStateMachine,
    gamma: f64,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<ValueGapReport> {
    let composed = compose(instance, ism)?;
    let plan = policy_iteration(&composed.mdp, gamma, DEFAULT_TOL)?;
    let arena = &instance.arena;
    let run = |k: usize, exact_mode: bool| -> Result<(f64, usize)> {
        let mut rng = stream_rng(seed, k as u64);
        let (mut s, mut m) = (arena.initial, ism.initial());
        let mut b = BeliefState::uniform(instance.num_policies())?;
        let (mut ret, mut disc, mut off) = (0.0, 1.0, 0usize);
        for _ in 0..horizon {
            let a1 = match composed.index_of(s, m) {
                Some(i) => plan.policy[i],
                None => {
                    off += 1;
                    0
                }
            };
            let driver = if exact_mode { &b } else { ism.belief(m) };
            let a2 = sample_index(&mut rng, &action_distribution(driver, s, instance));
            ret += disc * arena.reward(s, a1, a2);
            disc *= gamma;
            let o = Observation::new(s, a2);
            if exact_mode {
                b = transform(&b, o, instance)?;
            }
            m = ism.advance(m, o)?.unwrap_or(ism.initial());
            s = sample_sparse(&mut rng, arena.successors(s, a1, a2));
        }
        Ok((ret, off))
    };
    let pairs = par::map_range(episodes, |k| -> Result<(f64, f64, usize)> {
        let (c, _) = run(k, false)?;
        let (e, off) = run(k, true)?;
        Ok((c, e, off))
    });
    let (mut comp, mut exact, mut diff, mut off) = (Vec::new(), Vec::new(), Vec::new(), 0);
    for p in pairs {
        let (c, e, o) = p?;
        comp.push(c);
        exact.push(e);
        diff.push(c - e);
        off += o;
    }
    let (cm, cs) = mean_stderr(&comp);
    let (em, es) = mean_stderr(&exact);
    let (gm, gs) = mean_stderr(&diff);
    Ok(ValueGapReport {
        episodes,
        horizon,
        composed_mean: cm,
        composed_stderr: cs,
        exact_mean: em,
        exact_stderr: es,
        gap: gm,
        gap_stderr: gs,
        truncation_bound: gamma.powi(horizon as i32) * arena.max_abs_reward_overall() / (1.0 - gamma),
        off_model_steps: off,
    })
}

/// Deterministic finite-memory player-1 policy over `(game state,
/// machine state)` pairs, with the planned values.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerPolicy {
    entries: Vec<PolicyEntry>,
    index: HashMap<(usize, usize), usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub state: usize,
    pub memory: usize,
    pub action: usize,
    pub value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    gamma: f64,
    entries: Vec<PolicyEntry>,
}

impl PlannerPolicy {
    pub fn from_plan(composed: &ComposedMdp, plan: &Plan) -> Self {
        let entries = composed
            .pairs
            .iter()
            .enumerate()
            .map(|(i, &(s, m))| PolicyEntry {
                state: s,
                memory: m,
                action: plan.policy[i],
                value: plan.values[i],
            })
            .collect();
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<PolicyEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.state, e.memory), i))
            .collect();
        PlannerPolicy { entries, index }
    }

    pub fn action(&self, s: usize, m: usize) -> Option<usize> {
        self.index.get(&(s, m)).map(|&i| self.entries[i].action)
    }

    pub fn value(&self, s: usize, m: usize) -> Option<f64> {
        self.index.get(&(s, m)).map(|&i| self.entries[i].value)
    }

    pub fn entries(&self) -> &[PolicyEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn serialize(&self, gamma: f64) -> String {
        let doc = PolicyDoc {
            gamma,
            entries: self.entries.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("policy serializes");
        text.push('\n');
        text
    }

    /// Parses a policy document; returns it with its discount.
    pub fn deserialize(text: &str) -> Result<(Self, f64)> {
        let doc: PolicyDoc = serde_json::from_str(text)?;
        let mut seen = std::collections::HashSet::new();
        for e in &doc.entries {
            if !seen.insert((e.state, e.memory)) {
                return Err(Error::Mismatch(format!(
                    "duplicate policy entry for ({}, {})",
                    e.state, e.memory
                )));
            }
        }
        Ok((Self::from_entries(doc.entries), doc.gamma))
    }

    /// Checks that actions and states fit the game and the machine.
    pub fn check_against(&self, instance: &GameInstance, ism: &InformationStateMachine) -> Result<()> {
        for e in &self.entries {
            if e.state >= instance.arena.num_states()
                || e.memory >= ism.num_states()
                || e.action >= instance.arena.num_p1_actions()
            {
                return Err(Error::Mismatch(format!(
                    "policy entry ({}, {}) -> {} is out of range",
                    e.state, e.memory, e.action
                )));
            }
        }
        Ok(())
    }
}

/// Plans on the composed MDP and wraps the result.
pub fn plan(
    instance: &GameInstance,
    ism: &InformationStateMachine,
    gamma: f64,
) -> Result<(ComposedMdp, PlannerPolicy)> {
    let composed = compose(instance, ism)?;
    let plan = policy_iteration(&composed.mdp, gamma, DEFAULT_TOL)?;
    let policy = PlannerPolicy::from_plan(&composed, &plan);
    Ok((composed, policy))
}

/// Random stationary draw used by tests and benches.
pub fn random_mdp<R: Rng>(rng: &mut R, states: usize, actions: usize, branching: usize) -> FiniteMdp {
    let mut transitions = Vec::with_capacity(states * actions);
    let mut rewards = Vec::with_capacity(states * actions);
    for _ in 0..states * actions {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let weights: Vec<f64> = (0..branching).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        for w in weights {
            *acc.entry(rng.random_range(0..states)).or_insert(0.0) += w / total;
        }
        transitions.push(acc.into_iter().collect());
        rewards.push(rng.random_range(-1.0..1.0));
    }
    FiniteMdp {
        num_states: states,
        num_actions: actions,
        transitions,
        rewards,
    }
}
