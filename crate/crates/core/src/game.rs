//! Game arenas, oblivious opponent policies and the policy-switch chain.

use crate::error::{Error, Result};

/// Tolerance used for every "sums to one" check.
pub const PROB_TOL: f64 = 1e-9;

/// A single observation made by player 1: the game state together with the
/// action player 2 took there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Observation {
    pub state: usize,
    pub action: usize,
}

impl Observation {
    pub fn new(state: usize, action: usize) -> Self {
        Observation { state, action }
    }
}

/// Sparse successor distribution of one `(s, a1, a2)` triple.
pub type Successors = Vec<(usize, f64)>;

/// Concurrent stochastic game arena. Transition rows are kept sparse,
/// rewards dense.
#[derive(Debug, Clone, PartialEq)]
pub struct GameArena {
    pub states: Vec<String>,
    pub p1_actions: Vec<String>,
    pub p2_actions: Vec<String>,
    transitions: Vec<Successors>,
    rewards: Vec<f64>,
    /// Designated starting state for planning and simulation.
    pub initial: usize,
}

impl GameArena {
    /// Arena where every triple self-loops and pays nothing.
    pub fn new(states: Vec<String>, p1_actions: Vec<String>, p2_actions: Vec<String>) -> Self {
        let (ns, na1, na2) = (states.len(), p1_actions.len(), p2_actions.len());
        let mut transitions = Vec::with_capacity(ns * na1 * na2);
        for s in 0..ns {
            for _ in 0..na1 * na2 {
                transitions.push(vec![(s, 1.0)]);
            }
        }
        GameArena {
            states,
            p1_actions,
            p2_actions,
            transitions,
            rewards: vec![0.0; ns * na1 * na2],
            initial: 0,
        }
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_p1_actions(&self) -> usize {
        self.p1_actions.len()
    }

    pub fn num_p2_actions(&self) -> usize {
        self.p2_actions.len()
    }

    fn idx(&self, s: usize, a1: usize, a2: usize) -> usize {
        (s * self.p1_actions.len() + a1) * self.p2_actions.len() + a2
    }

    pub fn successors(&self, s: usize, a1: usize, a2: usize) -> &[(usize, f64)] {
        &self.transitions[self.idx(s, a1, a2)]
    }

    /// Probability `P(next | s, a1, a2)`.
    pub fn transition_prob(&self, s: usize, a1: usize, a2: usize, next: usize) -> f64 {
        self.successors(s, a1, a2)
            .iter()
            .filter(|(t, _)| *t == next)
            .map(|(_, p)| p)
            .sum()
    }

    /// Replaces the successor distribution of `(s, a1, a2)`. Zero entries are
    /// dropped and duplicate targets merged.
    pub fn set_transition(&mut self, s: usize, a1: usize, a2: usize, mut next: Successors) {
        next.sort_by_key(|(t, _)| *t);
        let mut merged: Successors = Vec::with_capacity(next.len());
        for (t, p) in next {
            match merged.last_mut() {
                Some((last, q)) if *last == t => *q += p,
                _ => merged.push((t, p)),
            }
        }
        merged.retain(|(_, p)| *p != 0.0);
        let i = self.idx(s, a1, a2);
        self.transitions[i] = merged;
    }

    pub fn reward(&self, s: usize, a1: usize, a2: usize) -> f64 {
        self.rewards[self.idx(s, a1, a2)]
    }

    pub fn set_reward(&mut self, s: usize, a1: usize, a2: usize, r: f64) {
        let i = self.idx(s, a1, a2);
        self.rewards[i] = r;
    }

    /// `max_{a1,a2} |R(s, a1, a2)|`.
    pub fn max_abs_reward(&self, s: usize) -> f64 {
        let w = self.p1_actions.len() * self.p2_actions.len();
        self.rewards[s * w..(s + 1) * w].iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn max_abs_reward_overall(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// A stochastic policy for player 2, dense over `S x A2`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpponentPolicy {
    pub name: String,
    num_actions: usize,
    choice: Vec<f64>,
}

impl OpponentPolicy {
    /// Builds a policy from one action distribution per state.
    pub fn from_rows(name: impl Into<String>, rows: Vec<Vec<f64>>) -> Self {
        let num_actions = rows.first().map_or(0, Vec::len);
        OpponentPolicy {
            name: name.into(),
            num_actions,
            choice: rows.into_iter().flatten().collect(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.choice.len().checked_div(self.num_actions).unwrap_or(0)
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: usize, a2: usize) -> f64 {
        self.choice[s * self.num_actions + a2]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.choice[s * self.num_actions..(s + 1) * self.num_actions]
    }
}

/// Row-stochastic matrix of the opponent's policy-change Markov chain;
/// entry `(i, j)` is the probability of moving from policy `i` to `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchModel {
    n: usize,
    entries: Vec<f64>,
}

impl SwitchModel {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.len(),
            });
        }
        Ok(SwitchModel {
            n,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        SwitchModel { n, entries }
    }

    /// Matrix with every entry `1/n` (complete mixing each step).
    pub fn uniform(n: usize) -> Self {
        SwitchModel {
            n,
            entries: vec![1.0 / n as f64; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// Smallest entry `t*`.
    pub fn min_entry(&self) -> f64 {
        self.entries.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// A game together with the opponent's policy set and switch model.
#[derive(Debug, Clone, PartialEq)]
pub struct GameInstance {
    pub arena: GameArena,
    pub policies: Vec<OpponentPolicy>,
    pub switch: SwitchModel,
}

impl GameInstance {
    pub fn new(arena: GameArena, policies: Vec<OpponentPolicy>, switch: SwitchModel) -> Self {
        GameInstance {
            arena,
            policies,
            switch,
        }
    }

    /// Same game and policies with a different switch matrix.
    pub fn with_switch(&self, switch: SwitchModel) -> Self {
        GameInstance { switch, ..self.clone() }
    }

    pub fn num_policies(&self) -> usize {
        self.policies.len()
    }

    /// `(|S|, |A1|, |A2|, |Π|)`.
    pub fn size(&self) -> (usize, usize, usize, usize) {
        (
            self.arena.num_states(),
            self.arena.num_p1_actions(),
            self.arena.num_p2_actions(),
            self.policies.len(),
        )
    }

    /// `α_i = π_i(o)` for every policy.
    pub fn alphas(&self, o: Observation) -> Vec<f64> {
        self.policies.iter().map(|p| p.prob(o.state, o.action)).collect()
    }

    pub fn observation_in_range(&self, o: Observation) -> bool {
        o.state < self.arena.num_states() && o.action < self.arena.num_p2_actions()
    }

    /// Observations with positive probability under at least one policy,
    /// ordered by `(state, action)`. This is the canonical iteration order.
    pub fn nonzero_observations(&self) -> Vec<Observation> {
        let mut out = Vec::new();
        for s in 0..self.arena.num_states() {
            for a in 0..self.arena.num_p2_actions() {
                if self.policies.iter().any(|p| p.prob(s, a) > 0.0) {
                    out.push(Observation::new(s, a));
                }
            }
        }
        out
    }

    /// Checks every structural invariant; see [`ValidationReport`].
    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

/// Result of [`validate`]: hard violations plus advisory warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_distribution(row: &[f64]) -> Option<String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Some(format!("entry {p} is negative or not finite"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Some(format!("sums to {sum}"));
    }
    None
}

pub fn validate(instance: &GameInstance) -> ValidationReport {
    let mut report = ValidationReport::default();
    let arena = &instance.arena;
    let (ns, na1, na2) = (arena.num_states(), arena.num_p1_actions(), arena.num_p2_actions());
    if ns == 0 || na1 == 0 || na2 == 0 {
        report
            .violations
            .push("arena needs at least one state and one action per player".into());
        return report;
    }
    if arena.initial >= ns {
        report
            .violations
            .push(format!("initial state {} out of range", arena.initial));
    }
    for s in 0..ns {
        for a1 in 0..na1 {
            for a2 in 0..na2 {
                let row = arena.successors(s, a1, a2);
                if let Some((t, _)) = row.iter().find(|(t, _)| *t >= ns) {
                    report
                        .violations
                        .push(format!("transition ({s}, {a1}, {a2}) targets state {t} out of range"));
                    continue;
                }
                let probs: Vec<f64> = row.iter().map(|(_, p)| *p).collect();
                if let Some(msg) = check_distribution(&probs) {
                    report.violations.push(format!("transition ({s}, {a1}, {a2}) {msg}"));
                }
                if !arena.reward(s, a1, a2).is_finite() {
                    report
                        .violations
                        .push(format!("reward ({s}, {a1}, {a2}) is not finite"));
                }
            }
        }
    }

    let n = instance.policies.len();
    if n == 0 {
        report.violations.push("no opponent policies".into());
    }
    for (i, p) in instance.policies.iter().enumerate() {
        if p.num_actions() != na2 || p.num_states() != ns {
            report.violations.push(format!(
                "policy {i} is defined on {}x{} but arena is {ns}x{na2}",
                p.num_states(),
                p.num_actions()
            ));
            continue;
        }
        for s in 0..ns {
            if let Some(msg) = check_distribution(p.row(s)) {
                report.violations.push(format!("policy {i} at state {s} {msg}"));
            }
        }
    }

    if instance.switch.dim() != n {
        report.violations.push(format!(
            "switch matrix is {0}x{0} but there are {n} policies",
            instance.switch.dim()
        ));
    } else {
        for i in 0..n {
            if let Some(msg) = check_distribution(instance.switch.row(i)) {
                report.violations.push(format!("switch row {i} {msg}"));
            }
        }
        if instance.switch.min_entry() <= 0.0 {
            report
                .warnings
                .push("positivity: switch matrix has a zero entry, so beliefs have no positive lower bound".into());
        }
    }
    report
}
