//! Worklist synthesis of `λ`-consistent information state machines and an
//! empirical whole-machine consistency check.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::belief::{action_distribution, transform, tv_distance, BeliefState, ZERO_PROB};
use crate::consistency::{EdgeChecker, Verdict};
use crate::error::{Error, Result};
use crate::game::{GameInstance, Observation};
use crate::ism::InformationStateMachine;
use crate::par;
use crate::rng::{sample_index, sample_sparse, stream_rng};

pub const DEFAULT_MAX_STATES: usize = 100_000;
pub const DEFAULT_MAX_SECONDS: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisConfig {
    pub lambda: f64,
    pub max_states: usize,
    pub max_seconds: f64,
}

impl SynthesisConfig {
    pub fn new(lambda: f64) -> Self {
        SynthesisConfig {
            lambda,
            max_states: DEFAULT_MAX_STATES,
            max_seconds: DEFAULT_MAX_SECONDS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthesisStats {
    pub states: usize,
    pub edges: usize,
    pub consistency_checks: usize,
    pub elapsed: Duration,
    /// `(state, observation)` pairs dropped because the observation is
    /// (numerically) impossible under the state's belief.
    pub skipped_observations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisOutcome {
    Machine {
        ism: InformationStateMachine,
        stats: SynthesisStats,
    },
    /// The fresh edge `b(m) --o--> τ(b(m), o)` is itself inconsistent.
    Failure {
        source_state: usize,
        source_belief: BeliefState,
        observation: Observation,
        attempted_target_belief: BeliefState,
        witness: BeliefState,
        stats: SynthesisStats,
    },
    BudgetExceeded {
        stats: SynthesisStats,
    },
}

impl SynthesisOutcome {
    pub fn machine(&self) -> Option<&InformationStateMachine> {
        match self {
            SynthesisOutcome::Machine { ism, .. } => Some(ism),
            _ => None,
        }
    }

    pub fn stats(&self) -> &SynthesisStats {
        match self {
            SynthesisOutcome::Machine { stats, .. }
            | SynthesisOutcome::Failure { stats, .. }
            | SynthesisOutcome::BudgetExceeded { stats } => stats,
        }
    }
}

/// Closest existing annotation within `λ`; ties go to the lowest index.
fn closest_state(ism: &InformationStateMachine, b: &[f64], lambda: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, bk) in ism.beliefs().iter().enumerate() {
        let d = crate::belief::l1(bk.entries(), b);
        if d <= lambda && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
}

pub fn synthesize(
    instance: &GameInstance,
    lambda: f64,
    max_states: usize,
    max_seconds: f64,
) -> Result<SynthesisOutcome> {
    synthesize_with(
        instance,
        &SynthesisConfig {
            lambda,
            max_states,
            max_seconds,
        },
    )
}

/// Breadth-first worklist construction. For each popped state and each
/// observation in canonical order: fail if the fresh edge to the exact
/// successor belief is inconsistent, otherwise reuse the closest state
/// within `λ` when that edge is consistent, else create a new state.
pub fn synthesize_with(instance: &GameInstance, config: &SynthesisConfig) -> Result<SynthesisOutcome> {
    let report = instance.validate();
    if !report.is_valid() {
        return Err(Error::InvalidGame(report.violations.join("; ")));
    }
    if !(config.lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {}", config.lambda)));
    }
    let start = Instant::now();
    let budget = Duration::from_secs_f64(config.max_seconds.max(0.0));
    let lambda = config.lambda;
    let checker = EdgeChecker::new(instance, lambda);
    let sigma = instance.nonzero_observations();
    let alphas: Vec<Vec<f64>> = sigma.iter().map(|o| instance.alphas(*o)).collect();
    let indices: Vec<usize> = (0..sigma.len()).collect();

    let mut ism = InformationStateMachine::new(BeliefState::uniform(instance.num_policies())?);
    let mut worklist = VecDeque::from([ism.initial()]);
    let mut skipped = 0usize;
    let stats = |ism: &InformationStateMachine, skipped: usize| SynthesisStats {
        states: ism.num_states(),
        edges: ism.num_edges(),
        consistency_checks: checker.checks(),
        elapsed: start.elapsed(),
        skipped_observations: skipped,
    };

    while let Some(m) = worklist.pop_front() {
        if start.elapsed() > budget {
            return Ok(SynthesisOutcome::BudgetExceeded {
                stats: stats(&ism, skipped),
            });
        }
        let b = ism.belief(m).clone();
        // Fresh successors and their checks do not depend on the machine,
        // so they can be evaluated ahead of the sequential pass.
        let fresh: Vec<Option<Result<(BeliefState, Verdict)>>> = par::map(&indices, |&k| {
            if b.dot(&alphas[k]) <= ZERO_PROB {
                return None;
            }
            Some(transform(&b, sigma[k], instance).and_then(|next| {
                let v = checker.check(&b, sigma[k], &next)?;
                Ok((next, v))
            }))
        });
        for (k, item) in fresh.into_iter().enumerate() {
            let o = sigma[k];
            let Some(item) = item else {
                skipped += 1;
                continue;
            };
            let (next, verdict) = item?;
            if let Verdict::Refuted { witness, .. } = verdict {
                return Ok(SynthesisOutcome::Failure {
                    source_state: m,
                    source_belief: b,
                    observation: o,
                    attempted_target_belief: next,
                    witness,
                    stats: stats(&ism, skipped),
                });
            }
            let reuse = match closest_state(&ism, next.entries(), lambda) {
                Some(h) => checker.check(&b, o, ism.belief(h))?.is_consistent().then_some(h),
                None => None,
            };
            let dst = match reuse {
                Some(h) => h,
                None => {
                    if ism.num_states() >= config.max_states {
                        return Ok(SynthesisOutcome::BudgetExceeded {
                            stats: stats(&ism, skipped),
                        });
                    }
                    let id = ism.add_state(next);
                    worklist.push_back(id);
                    id
                }
            };
            ism.add_edge(m, o, dst)?;
        }
    }
    let stats = stats(&ism, skipped);
    Ok(SynthesisOutcome::Machine { ism, stats })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub edges_checked: usize,
    /// Edges whose one-step check is refuted.
    pub inconsistent_edges: Vec<(usize, Observation, usize)>,
    pub sequences: usize,
    /// Largest `||b(δ(m0, σ)) − τ(b_u, σ)||` over every sampled prefix.
    pub max_observed_gap: f64,
    /// Sequences whose gap exceeded `λ + 1e-6` somewhere.
    pub violations: usize,
    /// Sequences that reached an observation with no machine edge.
    pub undefined_runs: usize,
}

impl ConsistencyReport {
    pub fn is_clean(&self) -> bool {
        self.inconsistent_edges.is_empty() && self.violations == 0 && self.undefined_runs == 0
    }
}

/// Re-checks every edge, then samples observation sequences with the
/// exact belief driving player 2 and records how far the machine's
/// annotation drifts from the exact belief.
///
/// Sequences start from a uniformly drawn game state; player 1 moves
/// uniformly at random since its actions only shape which game states occur.
pub fn verify_consistency(
    ism: &InformationStateMachine,
    instance: &GameInstance,
    lambda: f64,
    num_sequences: usize,
    max_len: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    let checker = EdgeChecker::new(instance, lambda);
    let edges: Vec<(usize, Observation, usize)> = ism.edges().collect();
    let verdicts = par::map(&edges, |&(src, o, dst)| {
        checker.check(ism.belief(src), o, ism.belief(dst))
    });
    let mut inconsistent = Vec::new();
    for (e, v) in edges.iter().zip(verdicts) {
        if !v?.is_consistent() {
            inconsistent.push(*e);
        }
    }

    let arena = &instance.arena;
    let ns = arena.num_states();
    let na1 = arena.num_p1_actions();
    let tol = lambda + 1e-6;
    let samples = par::map_range(num_sequences, |k| -> Result<(f64, bool)> {
        let mut rng = stream_rng(seed, k as u64);
        let mut s = rng.random_range(0..ns);
        let mut exact = BeliefState::uniform(instance.num_policies())?;
        let mut m = ism.initial();
        let mut worst: f64 = 0.0;
        for _ in 0..max_len {
            let probs = action_distribution(&exact, s, instance);
            let a2 = sample_index(&mut rng, &probs);
            let o = Observation::new(s, a2);
            exact = transform(&exact, o, instance)?;
            match ism.advance(m, o)? {
                Some(next) => m = next,
                None => return Ok((worst, true)),
            }
            worst = worst.max(tv_distance(ism.belief(m), &exact)?);
            let a1 = rng.random_range(0..na1);
            s = sample_sparse(&mut rng, arena.successors(s, a1, a2));
        }
        Ok((worst, false))
    });
    let mut report = ConsistencyReport {
        edges_checked: edges.len(),
        inconsistent_edges: inconsistent,
        sequences: num_sequences,
        max_observed_gap: 0.0,
        violations: 0,
        undefined_runs: 0,
    };
    for r in samples {
        let (gap, undefined) = r?;
        report.max_observed_gap = report.max_observed_gap.max(gap);
        if gap > tol {
            report.violations += 1;
        }
        if undefined {
            report.undefined_runs += 1;
        }
    }
    Ok(report)
}
