//! Play against a switching opponent, scripted replays, per-trace metrics
//! and experiment grids.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::belief::{transform, transform_with, BeliefState};
use crate::builders::build_switch;
use crate::error::{Error, Result};
use crate::game::{GameInstance, Observation, SwitchModel};
use crate::ism::InformationStateMachine;
use crate::par;
use crate::planner::{exact_expected_reward, plan, PlannerPolicy};
use crate::rng::{sample_index, sample_sparse, stream_rng};
use crate::synthesis::{synthesize_with, SynthesisConfig, SynthesisOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: usize,
    /// Opponent policy in force; unknown for scripted replays.
    pub opponent_policy: Option<usize>,
    pub p1_action: usize,
    pub p2_action: usize,
    pub reward: f64,
    pub ism_state: usize,
    pub ism_belief: Vec<f64>,
    /// Exact belief under the design switch matrix.
    pub exact_belief: Vec<f64>,
    /// Exact belief under the switch matrix actually driving the opponent.
    pub actual_belief: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub steps: Vec<Step>,
    /// Steps whose observation had no machine edge; the machine restarted.
    pub undefined_transitions: Vec<usize>,
    /// Steps where the policy had no entry for `(s, m)` and the myopic
    /// best response was played instead.
    pub off_policy_steps: Vec<usize>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Player-1 action: the policy's entry, or the myopic best response to
/// `b(m)` when the pair was never planned for.
fn choose(
    policy: &PlannerPolicy,
    instance: &GameInstance,
    ism: &InformationStateMachine,
    s: usize,
    m: usize,
) -> (usize, bool) {
    if let Some(a) = policy.action(s, m) {
        return (a, false);
    }
    let b = ism.belief(m);
    let mut best = (0, f64::NEG_INFINITY);
    for a1 in 0..instance.arena.num_p1_actions() {
        let r = exact_expected_reward(s, b, a1, instance);
        if r > best.1 {
            best = (a1, r);
        }
    }
    (best.0, true)
}

/// Tracks the machine plus the design-matrix and actual-matrix exact
/// beliefs across one episode.
struct Tracker<'a> {
    instance: &'a GameInstance,
    ism: &'a InformationStateMachine,
    actual: Option<&'a SwitchModel>,
    m: usize,
    exact: BeliefState,
    actual_belief: Option<BeliefState>,
}

impl<'a> Tracker<'a> {
    fn new(
        instance: &'a GameInstance,
        ism: &'a InformationStateMachine,
        actual: Option<&'a SwitchModel>,
    ) -> Result<Self> {
        let u = BeliefState::uniform(instance.num_policies())?;
        Ok(Tracker {
            instance,
            ism,
            actual,
            m: ism.initial(),
            exact: u.clone(),
            actual_belief: actual.map(|_| u),
        })
    }

    /// Returns whether the machine had an edge for `o`.
    fn observe(&mut self, o: Observation) -> Result<bool> {
        let u = BeliefState::uniform(self.instance.num_policies())?;
        self.exact = match transform(&self.exact, o, self.instance) {
            Ok(b) => b,
            Err(Error::ZeroProbabilityObservation { .. }) => u.clone(),
            Err(e) => return Err(e),
        };
        if let (Some(t), Some(b)) = (self.actual, self.actual_belief.as_ref()) {
            self.actual_belief = Some(match transform_with(b, o, self.instance, t) {
                Ok(b) => b,
                Err(Error::ZeroProbabilityObservation { .. }) => u,
                Err(e) => return Err(e),
            });
        }
        match self.ism.advance(self.m, o)? {
            Some(n) => {
                self.m = n;
                Ok(true)
            }
            None => {
                self.m = self.ism.initial();
                Ok(false)
            }
        }
    }
}

/// Plays `horizon` steps. The opponent starts from a uniformly drawn
/// policy and switches by `t_actual`; the agent's beliefs use the design
/// matrix of `instance`. Randomness comes from stream 0 of `seed`.
pub fn simulate(
    instance: &GameInstance,
    ism: &InformationStateMachine,
    policy: &PlannerPolicy,
    t_actual: &SwitchModel,
    horizon: usize,
    seed: u64,
) -> Result<EpisodeTrace> {
    simulate_stream(instance, ism, policy, t_actual, horizon, seed, 0)
}

/// [`simulate`] on an explicit stream of `seed`.
pub fn simulate_stream(
    instance: &GameInstance,
    ism: &InformationStateMachine,
    policy: &PlannerPolicy,
    t_actual: &SwitchModel,
    horizon: usize,
    seed: u64,
    stream: u64,
) -> Result<EpisodeTrace> {
    let n = instance.num_policies();
    if t_actual.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: t_actual.dim(),
        });
    }
    let arena = &instance.arena;
    let mut rng = stream_rng(seed, stream);
    let mut trace = EpisodeTrace::default();
    let mut tracker = Tracker::new(instance, ism, Some(t_actual))?;
    let mut s = arena.initial;
    let mut j = rng.random_range(0..n);
    for t in 0..horizon {
        let m = tracker.m;
        let (a1, off) = choose(policy, instance, ism, s, m);
        if off {
            trace.off_policy_steps.push(t);
        }
        let a2 = sample_index(&mut rng, instance.policies[j].row(s));
        trace.steps.push(Step {
            state: s,
            opponent_policy: Some(j),
            p1_action: a1,
            p2_action: a2,
            reward: arena.reward(s, a1, a2),
            ism_state: m,
            ism_belief: ism.belief(m).entries().to_vec(),
            exact_belief: tracker.exact.entries().to_vec(),
            actual_belief: tracker.actual_belief.as_ref().map(|b| b.entries().to_vec()),
        });
        if !tracker.observe(Observation::new(s, a2))? {
            trace.undefined_transitions.push(t);
        }
        s = sample_sparse(&mut rng, arena.successors(s, a1, a2));
        j = sample_index(&mut rng, t_actual.row(j));
    }
    Ok(trace)
}

/// One scripted observation: player 2's action and, optionally, the game
/// state it was taken in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptStep {
    pub state: Option<usize>,
    pub action: usize,
}

/// Parses a script: one observation per line as `state action` (names), or
/// just `action` for single-state games. Blank lines and `#` comments are
/// ignored. Error indices are 1-based line numbers.
pub fn parse_script(text: &str, instance: &GameInstance) -> Result<Vec<ScriptStep>> {
    let arena = &instance.arena;
    let find = |names: &[String], name: &str| names.iter().position(|n| n == name);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = |message: String| Error::Script { index: i + 1, message };
        let (state, action) = match fields.as_slice() {
            [a] if arena.num_states() == 1 => (None, *a),
            [_] => return Err(err("a state name is required for games with several states".into())),
            [s, a] => (
                Some(find(&arena.states, s).ok_or_else(|| err(format!("unknown state `{s}`")))?),
                *a,
            ),
            _ => return Err(err(format!("expected `state action`, found {} fields", fields.len()))),
        };
        let action = find(&arena.p2_actions, action).ok_or_else(|| err(format!("unknown action `{action}`")))?;
        out.push(ScriptStep { state, action });
    }
    Ok(out)
}

/// Replays up to `horizon` scripted opponent actions. Steps that name a
/// state are played in that state, which must be reachable from the
/// previous step for some player-1 action; otherwise the next state is
/// sampled from the arena (stream 0 of seed 0).
pub fn replay(
    instance: &GameInstance,
    ism: &InformationStateMachine,
    policy: &PlannerPolicy,
    script: &[ScriptStep],
    horizon: usize,
) -> Result<EpisodeTrace> {
    let arena = &instance.arena;
    let mut rng = stream_rng(0, 0);
    let mut trace = EpisodeTrace::default();
    let mut tracker = Tracker::new(instance, ism, None)?;
    let mut s = arena.initial;
    let mut prev: Option<(usize, usize)> = None;
    for (t, step) in script.iter().take(horizon).enumerate() {
        if step.action >= arena.num_p2_actions() {
            return Err(Error::Script {
                index: t,
                message: format!("action index {} out of range", step.action),
            });
        }
        if let Some(st) = step.state {
            if st >= arena.num_states() {
                return Err(Error::Script {
                    index: t,
                    message: format!("state index {st} out of range"),
                });
            }
            if let Some((ps, pa2)) = prev {
                let reachable = (0..arena.num_p1_actions()).any(|a1| arena.transition_prob(ps, a1, pa2, st) > 0.0);
                if !reachable {
                    return Err(Error::Script {
                        index: t,
                        message: format!("state {} cannot follow the previous step", arena.states[st]),
                    });
                }
            }
            s = st;
        }
        let m = tracker.m;
        let (a1, off) = choose(policy, instance, ism, s, m);
        if off {
            trace.off_policy_steps.push(t);
        }
        let a2 = step.action;
        trace.steps.push(Step {
            state: s,
            opponent_policy: None,
            p1_action: a1,
            p2_action: a2,
            reward: arena.reward(s, a1, a2),
            ism_state: m,
            ism_belief: ism.belief(m).entries().to_vec(),
            exact_belief: tracker.exact.entries().to_vec(),
            actual_belief: None,
        });
        if !tracker.observe(Observation::new(s, a2))? {
            trace.undefined_transitions.push(t);
        }
        prev = Some((s, a2));
        s = sample_sparse(&mut rng, arena.successors(s, a1, a2));
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Mean reward per move.
    pub r_avg: f64,
    /// Mean probability the machine's belief gave the realized action.
    pub ap_avg: f64,
    /// Mean belief mass on the opponent's true policy (simulations only).
    pub policy_pred: Option<f64>,
}

pub fn metrics(trace: &EpisodeTrace, instance: &GameInstance) -> Result<MetricsReport> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let n = trace.len() as f64;
    let r_avg = trace.steps.iter().map(|s| s.reward).sum::<f64>() / n;
    let ap_avg = trace
        .steps
        .iter()
        .map(|st| {
            instance
                .policies
                .iter()
                .zip(&st.ism_belief)
                .map(|(p, b)| b * p.prob(st.state, st.p2_action))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    let policy_pred = trace
        .steps
        .iter()
        .map(|st| st.opponent_policy.map(|j| st.ism_belief[j]))
        .sum::<Option<f64>>()
        .map(|x| x / n);
    Ok(MetricsReport {
        r_avg,
        ap_avg,
        policy_pred,
    })
}

/// Largest `‖b(m_t) − b_actual^(t)‖` over a simulated trace.
pub fn max_actual_gap(trace: &EpisodeTrace) -> f64 {
    trace
        .steps
        .iter()
        .filter_map(|st| st.actual_belief.as_ref().map(|a| crate::belief::l1(&st.ism_belief, a)))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub max_states: usize,
    pub max_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub lambda: f64,
    pub stay_design: f64,
    pub stay_actual: f64,
    /// A seed, or `mean` / `stderr` for the per-cell summary rows.
    pub seed: String,
    pub horizon: usize,
    pub r_avg: Option<f64>,
    pub ap_avg: Option<f64>,
    pub policy_pred: Option<f64>,
    /// State count, or `fail` / `budget` when synthesis did not finish.
    pub ism_states: String,
    pub synth_seconds: f64,
    pub plan_seconds: f64,
}

fn summary(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, (var / n).sqrt())
}

/// For every `(λ, design stay)` pair synthesizes and plans once, then
/// simulates each actual stay for every seed. Emits one row per seed and
/// two summary rows (`mean`, `stderr`) per cell.
pub fn run_grid(
    instance: &GameInstance,
    lambdas: &[f64],
    stays: &[f64],
    actual_stays: &[f64],
    seeds: &[u64],
    config: &GridConfig,
) -> Result<Vec<GridRow>> {
    let n = instance.num_policies();
    let mut rows = Vec::new();
    for &lambda in lambdas {
        for &stay in stays {
            let design = instance.with_switch(build_switch(n, stay)?);
            let t0 = Instant::now();
            let outcome = synthesize_with(
                &design,
                &SynthesisConfig {
                    lambda,
                    max_states: config.max_states,
                    max_seconds: config.max_seconds,
                },
            )?;
            let synth_seconds = t0.elapsed().as_secs_f64();
            let blank = |stay_actual: f64, seed: String, status: &str| GridRow {
                lambda,
                stay_design: stay,
                stay_actual,
                seed,
                horizon: config.horizon,
                r_avg: None,
                ap_avg: None,
                policy_pred: None,
                ism_states: status.to_string(),
                synth_seconds,
                plan_seconds: 0.0,
            };
            let ism = match outcome {
                SynthesisOutcome::Machine { ism, .. } => ism,
                SynthesisOutcome::Failure { .. } | SynthesisOutcome::BudgetExceeded { .. } => {
                    let status = if matches!(outcome, SynthesisOutcome::Failure { .. }) {
                        "fail"
                    } else {
                        "budget"
                    };
                    for &actual in actual_stays {
                        rows.push(blank(actual, "-".into(), status));
                    }
                    continue;
                }
            };
            let t1 = Instant::now();
            let (_, policy) = plan(&design, &ism, config.gamma)?;
            let plan_seconds = t1.elapsed().as_secs_f64();
            for &actual in actual_stays {
                let t_actual = build_switch(n, actual)?;
                let results = par::map(seeds, |&seed| -> Result<MetricsReport> {
                    let trace = simulate(&design, &ism, &policy, &t_actual, config.horizon, seed)?;
                    metrics(&trace, &design)
                });
                let mut per_seed = Vec::new();
                for (&seed, r) in seeds.iter().zip(results) {
                    let r = r?;
                    per_seed.push(r);
                    rows.push(GridRow {
                        r_avg: Some(r.r_avg),
                        ap_avg: Some(r.ap_avg),
                        policy_pred: r.policy_pred,
                        ism_states: ism.num_states().to_string(),
                        plan_seconds,
                        ..blank(actual, seed.to_string(), "")
                    });
                }
                if per_seed.is_empty() {
                    continue;
                }
                let stats = |f: fn(&MetricsReport) -> f64| summary(&per_seed.iter().map(f).collect::<Vec<_>>());
                let (r, ap, pp) = (
                    stats(|m| m.r_avg),
                    stats(|m| m.ap_avg),
                    stats(|m| m.policy_pred.unwrap_or(f64::NAN)),
                );
                for (label, pick) in [("mean", 0usize), ("stderr", 1)] {
                    let get = |x: (f64, f64)| if pick == 0 { x.0 } else { x.1 };
                    rows.push(GridRow {
                        r_avg: Some(get(r)),
                        ap_avg: Some(get(ap)),
                        policy_pred: Some(get(pp)),
                        ism_states: ism.num_states().to_string(),
                        plan_seconds,
                        ..blank(actual, label.into(), "")
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn grid_csv(rows: &[GridRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record([
            "lambda",
            "stay_design",
            "stay_actual",
            "seed",
            "horizon",
            "r_avg",
            "ap_avg",
            "policy_pred",
            "ism_states",
            "synth_seconds",
            "plan_seconds",
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}
