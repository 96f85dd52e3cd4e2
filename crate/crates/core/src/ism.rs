//! Information state machines: finite deterministic machines over
//! observations whose states carry a belief annotation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::belief::BeliefState;
use crate::error::{Error, Result};
use crate::game::{GameInstance, Observation};

#[derive(Debug, Clone, PartialEq)]
pub struct InformationStateMachine {
    beliefs: Vec<BeliefState>,
    initial: usize,
    edges: Vec<BTreeMap<Observation, usize>>,
}

/// A run hit an observation with no outgoing edge at position `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Undefined {
    pub index: usize,
}

impl InformationStateMachine {
    /// Machine with the single initial state `m0` annotated by `initial`.
    pub fn new(initial: BeliefState) -> Self {
        InformationStateMachine {
            beliefs: vec![initial],
            initial: 0,
            edges: vec![BTreeMap::new()],
        }
    }

    pub fn add_state(&mut self, belief: BeliefState) -> usize {
        self.beliefs.push(belief);
        self.edges.push(BTreeMap::new());
        self.beliefs.len() - 1
    }

    /// Adds or replaces the edge `src --o--> dst`.
    pub fn add_edge(&mut self, src: usize, o: Observation, dst: usize) -> Result<()> {
        for s in [src, dst] {
            if s >= self.beliefs.len() {
                return Err(Error::InvalidState(s));
            }
        }
        self.edges[src].insert(o, dst);
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.beliefs.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(BTreeMap::len).sum()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn belief(&self, m: usize) -> &BeliefState {
        &self.beliefs[m]
    }

    pub fn beliefs(&self) -> &[BeliefState] {
        &self.beliefs
    }

    /// All edges as `(src, observation, dst)` in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, Observation, usize)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .flat_map(|(m, out)| out.iter().map(move |(o, d)| (m, *o, *d)))
    }

    /// `δ(m, o)`, or `None` when no edge is defined.
    pub fn advance(&self, m: usize, o: Observation) -> Result<Option<usize>> {
        self.edges
            .get(m)
            .map(|out| out.get(&o).copied())
            .ok_or(Error::InvalidState(m))
    }

    /// `δ(m0, σ)`.
    pub fn run(&self, seq: &[Observation]) -> std::result::Result<usize, Undefined> {
        self.run_from(self.initial, seq)
    }

    pub fn run_from(&self, start: usize, seq: &[Observation]) -> std::result::Result<usize, Undefined> {
        seq.iter().enumerate().try_fold(start, |m, (index, o)| {
            self.edges[m].get(o).copied().ok_or(Undefined { index })
        })
    }

    pub fn serialize(&self) -> String {
        let doc = IsmDoc {
            states: self
                .beliefs
                .iter()
                .enumerate()
                .map(|(index, b)| StateDoc {
                    index,
                    belief: b.entries().iter().map(|x| format!("{x:.16e}")).collect(),
                })
                .collect(),
            initial: self.initial,
            edges: self
                .edges()
                .map(|(src, o, dst)| EdgeDoc {
                    src,
                    state: o.state,
                    action: o.action,
                    dst,
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("serializable");
        text.push('\n');
        text
    }

    pub fn deserialize(text: &str) -> Result<Self> {
        let doc: IsmDoc = serde_json::from_str(text)?;
        let mut beliefs = Vec::with_capacity(doc.states.len());
        for (pos, st) in doc.states.iter().enumerate() {
            if st.index != pos {
                return Err(parse_error_at(
                    text,
                    &format!("\"index\": {}", st.index),
                    "state indices must be 0, 1, 2, ... in order",
                ));
            }
            let mut entries = Vec::with_capacity(st.belief.len());
            for s in &st.belief {
                let x: f64 = s
                    .parse()
                    .map_err(|_| parse_error_at(text, s, &format!("invalid belief entry {s:?}")))?;
                entries.push(x);
            }
            beliefs.push(BeliefState::from_normalized(entries));
        }
        if beliefs.is_empty() {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "machine has no states".into(),
            });
        }
        let n = beliefs[0].len();
        if beliefs.iter().any(|b| b.len() != n) {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "belief lengths differ".into(),
            });
        }
        if doc.initial >= beliefs.len() {
            return Err(parse_error_at(text, "\"initial\"", "initial state out of range"));
        }
        let mut m = InformationStateMachine {
            edges: vec![BTreeMap::new(); beliefs.len()],
            beliefs,
            initial: doc.initial,
        };
        for e in doc.edges {
            m.add_edge(e.src, Observation::new(e.state, e.action), e.dst)
                .map_err(|err| Error::Parse {
                    line: 0,
                    column: 0,
                    message: err.to_string(),
                })?;
        }
        Ok(m)
    }

    /// Graphviz rendering with index-labelled observations.
    pub fn export_dot(&self) -> String {
        self.dot_with(|o| format!("s{}/a{}", o.state, o.action))
    }

    /// Graphviz rendering using the game's state and action names. Single-state
    /// games label edges by the action alone.
    pub fn export_dot_named(&self, instance: &GameInstance) -> String {
        let single = instance.arena.num_states() == 1;
        self.dot_with(|o| {
            let a = &instance.arena.p2_actions[o.action];
            if single {
                a.clone()
            } else {
                format!("{}/{}", instance.arena.states[o.state], a)
            }
        })
    }

    fn dot_with(&self, label: impl Fn(Observation) -> String) -> String {
        let mut out = String::from("digraph ism {\n  rankdir=LR;\n");
        for (m, b) in self.beliefs.iter().enumerate() {
            let entries: Vec<String> = b.entries().iter().map(|x| format!("{x:.2}")).collect();
            let shape = if m == self.initial { "doublecircle" } else { "circle" };
            let _ = writeln!(out, "  m{m} [shape={shape}, label=\"{m}\\n({})\"];", entries.join(", "));
        }
        for (src, o, dst) in self.edges() {
            let _ = writeln!(out, "  m{src} -> m{dst} [label=\"{}\"];", label(o));
        }
        out.push_str("}\n");
        out
    }
}

fn parse_error_at(text: &str, needle: &str, message: &str) -> Error {
    let (line, column) = text
        .find(needle)
        .map(|pos| {
            let before = &text[..pos];
            let line = before.matches('\n').count() + 1;
            let column = pos - before.rfind('\n').map_or(0, |p| p + 1) + 1;
            (line, column)
        })
        .unwrap_or((0, 0));
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IsmDoc {
    states: Vec<StateDoc>,
    initial: usize,
    edges: Vec<EdgeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDoc {
    index: usize,
    belief: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    src: usize,
    state: usize,
    action: usize,
    dst: usize,
}
