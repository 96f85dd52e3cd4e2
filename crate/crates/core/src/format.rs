//! JSON game files.
//!
//! ```json
//! {
//!   "states": ["t"], "p1_actions": ["r1", "p1"], "p2_actions": ["r2", "p2"],
//!   "initial": "t",
//!   "transitions": [{"s": "t", "a1": "r1", "a2": "p2", "next": {"t": 1.0}}],
//!   "rewards": [{"s": "t", "a1": "r1", "a2": "p2", "r": -1.0}],
//!   "policies": [{"name": "pi1", "choice": {"t": {"r2": 0.5, "p2": 0.5}}}],
//!   "switch": [[1.0]]
//! }
//! ```
//!
//! Triples without a `transitions` entry self-loop; missing rewards are 0;
//! actions missing from a policy's `choice` get probability 0. Rows whose
//! sum is within `1e-9` of one are renormalized, others rejected.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameArena, GameInstance, OpponentPolicy, SwitchModel, PROB_TOL};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameDoc {
    states: Vec<String>,
    p1_actions: Vec<String>,
    p2_actions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<String>,
    #[serde(default)]
    transitions: Vec<TransitionDoc>,
    #[serde(default)]
    rewards: Vec<RewardDoc>,
    policies: Vec<PolicyDoc>,
    switch: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionDoc {
    s: String,
    a1: String,
    a2: String,
    next: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardDoc {
    s: String,
    a1: String,
    a2: String,
    r: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    name: String,
    choice: BTreeMap<String, BTreeMap<String, f64>>,
}

fn invalid(msg: String) -> Error {
    Error::InvalidGame(msg)
}

struct Names<'a> {
    kind: &'static str,
    map: HashMap<&'a str, usize>,
}

impl<'a> Names<'a> {
    fn new(kind: &'static str, names: &'a [String]) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if map.insert(n.as_str(), i).is_some() {
                return Err(invalid(format!("duplicate {kind} name `{n}`")));
            }
        }
        Ok(Names { kind, map })
    }

    fn get(&self, name: &str) -> Result<usize> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| invalid(format!("unknown {} `{name}`", self.kind)))
    }
}

/// Checks a distribution and rescales it to sum to exactly one.
pub fn normalize(row: &mut [f64], what: &str) -> Result<()> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(invalid(format!("{what}: entry {p} is negative or not finite")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(invalid(format!("{what}: probabilities sum to {sum}")));
    }
    // Rows already summing to one up to rounding are kept bit-exact.
    if (sum - 1.0).abs() > 8.0 * f64::EPSILON {
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

pub fn load_game(text: &str) -> Result<GameInstance> {
    let doc: GameDoc = serde_json::from_str(text)?;
    let states = Names::new("state", &doc.states)?;
    let a1s = Names::new("player-1 action", &doc.p1_actions)?;
    let a2s = Names::new("player-2 action", &doc.p2_actions)?;
    let mut arena = GameArena::new(doc.states.clone(), doc.p1_actions.clone(), doc.p2_actions.clone());
    if let Some(init) = &doc.initial {
        arena.initial = states.get(init)?;
    }

    let mut seen = HashSet::new();
    for t in &doc.transitions {
        let key = (states.get(&t.s)?, a1s.get(&t.a1)?, a2s.get(&t.a2)?);
        if !seen.insert(key) {
            return Err(invalid(format!(
                "duplicate transition for ({}, {}, {})",
                t.s, t.a1, t.a2
            )));
        }
        let mut targets = Vec::with_capacity(t.next.len());
        let mut probs = Vec::with_capacity(t.next.len());
        for (name, p) in &t.next {
            targets.push(states.get(name)?);
            probs.push(*p);
        }
        normalize(&mut probs, &format!("transition ({}, {}, {})", t.s, t.a1, t.a2))?;
        arena.set_transition(key.0, key.1, key.2, targets.into_iter().zip(probs).collect());
    }

    let mut seen = HashSet::new();
    for r in &doc.rewards {
        let key = (states.get(&r.s)?, a1s.get(&r.a1)?, a2s.get(&r.a2)?);
        if !seen.insert(key) {
            return Err(invalid(format!("duplicate reward for ({}, {}, {})", r.s, r.a1, r.a2)));
        }
        if !r.r.is_finite() {
            return Err(invalid(format!(
                "reward for ({}, {}, {}) is not finite",
                r.s, r.a1, r.a2
            )));
        }
        arena.set_reward(key.0, key.1, key.2, r.r);
    }

    let mut policies = Vec::with_capacity(doc.policies.len());
    for p in &doc.policies {
        let mut rows = vec![Vec::new(); doc.states.len()];
        for (sname, dist) in &p.choice {
            let s = states.get(sname)?;
            let mut row = vec![0.0; doc.p2_actions.len()];
            for (aname, prob) in dist {
                row[a2s.get(aname)?] = *prob;
            }
            normalize(&mut row, &format!("policy {} at state {sname}", p.name))?;
            rows[s] = row;
        }
        if let Some(s) = rows.iter().position(Vec::is_empty) {
            return Err(invalid(format!(
                "policy {} has no choice at state {}",
                p.name, doc.states[s]
            )));
        }
        policies.push(OpponentPolicy::from_rows(p.name.clone(), rows));
    }

    let mut switch = doc.switch.clone();
    for (i, row) in switch.iter_mut().enumerate() {
        normalize(row, &format!("switch row {i}"))?;
    }
    let switch = SwitchModel::from_rows(switch).map_err(|e| invalid(format!("switch matrix: {e}")))?;
    let instance = GameInstance::new(arena, policies, switch);
    let report = instance.validate();
    if !report.is_valid() {
        return Err(invalid(report.violations.join("; ")));
    }
    Ok(instance)
}

/// Writes a game file; self-loops, zero rewards and zero policy entries
/// are left implicit.
pub fn save_game(instance: &GameInstance) -> String {
    let arena = &instance.arena;
    let (ns, na1, na2) = (arena.num_states(), arena.num_p1_actions(), arena.num_p2_actions());
    let mut transitions = Vec::new();
    let mut rewards = Vec::new();
    for s in 0..ns {
        for a1 in 0..na1 {
            for a2 in 0..na2 {
                let succ = arena.successors(s, a1, a2);
                if succ != [(s, 1.0)] {
                    transitions.push(TransitionDoc {
                        s: arena.states[s].clone(),
                        a1: arena.p1_actions[a1].clone(),
                        a2: arena.p2_actions[a2].clone(),
                        next: succ.iter().map(|(t, p)| (arena.states[*t].clone(), *p)).collect(),
                    });
                }
                let r = arena.reward(s, a1, a2);
                if r != 0.0 {
                    rewards.push(RewardDoc {
                        s: arena.states[s].clone(),
                        a1: arena.p1_actions[a1].clone(),
                        a2: arena.p2_actions[a2].clone(),
                        r,
                    });
                }
            }
        }
    }
    let policies = instance
        .policies
        .iter()
        .map(|p| PolicyDoc {
            name: p.name.clone(),
            choice: (0..ns)
                .map(|s| {
                    let dist = (0..na2)
                        .filter(|&a| p.prob(s, a) > 0.0)
                        .map(|a| (arena.p2_actions[a].clone(), p.prob(s, a)))
                        .collect();
                    (arena.states[s].clone(), dist)
                })
                .collect(),
        })
        .collect();
    let doc = GameDoc {
        states: arena.states.clone(),
        p1_actions: arena.p1_actions.clone(),
        p2_actions: arena.p2_actions.clone(),
        initial: (arena.initial != 0).then(|| arena.states[arena.initial].clone()),
        transitions,
        rewards,
        policies,
        switch: instance.switch.rows(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("game serializes");
    text.push('\n');
    text
}

/// A bare switch matrix: a JSON array of rows.
pub fn load_switch(text: &str) -> Result<SwitchModel> {
    let mut rows: Vec<Vec<f64>> = serde_json::from_str(text)?;
    for (i, row) in rows.iter_mut().enumerate() {
        normalize(row, &format!("switch row {i}"))?;
    }
    SwitchModel::from_rows(rows).map_err(|e| invalid(format!("switch matrix: {e}")))
}

pub fn read_game(path: &std::path::Path) -> Result<GameInstance> {
    load_game(&std::fs::read_to_string(path)?)
}
