//! Belief states over the opponent's policies and their exact updates.

use crate::error::{Error, Result};
use crate::game::{GameInstance, Observation, SwitchModel};

/// Denominators below this are treated as a zero-probability observation.
pub const ZERO_PROB: f64 = 1e-12;

/// Probability distribution over the `n` opponent policies.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState(Vec<f64>);

impl BeliefState {
    /// Builds a belief from raw weights, renormalizing. Fails on negative or
    /// non-finite entries or a zero total.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Domain("belief needs at least one entry".into()));
        }
        if entries.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Domain("belief entries must be finite and non-negative".into()));
        }
        let sum: f64 = entries.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Domain("belief entries sum to zero".into()));
        }
        Ok(BeliefState(entries.into_iter().map(|x| x / sum).collect()))
    }

    /// Wraps entries as-is. Callers guarantee they already form a distribution.
    pub fn from_normalized(entries: Vec<f64>) -> Self {
        BeliefState(entries)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::Domain("uniform belief needs n >= 1".into()));
        }
        Ok(BeliefState(vec![1.0 / n as f64; n]))
    }

    /// All mass on policy `i`.
    pub fn degenerate(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        BeliefState(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn min_entry(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Σ_i b_i α_i`: probability of an observation with per-policy
    /// likelihoods `alphas`.
    pub fn dot(&self, alphas: &[f64]) -> f64 {
        self.0.iter().zip(alphas).map(|(b, a)| b * a).sum()
    }
}

pub fn uniform_belief(n: usize) -> Result<BeliefState> {
    BeliefState::uniform(n)
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
    v
}

/// Unhalved L1 distance `Σ_i |b_i − b'_i|` (ranges over `[0, 2]`).
pub fn tv_distance(b: &BeliefState, other: &BeliefState) -> Result<f64> {
    if b.len() != other.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            found: other.len(),
        });
    }
    Ok(l1(b.entries(), other.entries()))
}

pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Bayes update of `b` given per-policy likelihoods `alphas`.
pub fn condition_on(b: &BeliefState, alphas: &[f64]) -> Result<BeliefState> {
    if alphas.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            found: alphas.len(),
        });
    }
    let denom = b.dot(alphas);
    if denom < ZERO_PROB {
        return Err(Error::ZeroProbabilityObservation { index: None });
    }
    let v = b.0.iter().zip(alphas).map(|(bi, ai)| bi * ai / denom).collect();
    Ok(BeliefState(normalized(v)))
}

/// Bayes update of `b` on observation `o`.
pub fn condition(b: &BeliefState, o: Observation, instance: &GameInstance) -> Result<BeliefState> {
    check_observation(o, instance)?;
    condition_on(b, &instance.alphas(o))
}

/// One step of the policy-change chain: `b'_i = Σ_j b_j T_ji`.
pub fn shift(b: &BeliefState, t: &SwitchModel) -> Result<BeliefState> {
    let n = b.len();
    if t.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: t.dim(),
        });
    }
    let mut out = vec![0.0; n];
    for (j, bj) in b.0.iter().enumerate() {
        for (o, tji) in out.iter_mut().zip(t.row(j)) {
            *o += bj * tji;
        }
    }
    Ok(BeliefState(normalized(out)))
}

/// `τ(b, o)`: condition on `o`, then apply one policy switch.
pub fn transform(b: &BeliefState, o: Observation, instance: &GameInstance) -> Result<BeliefState> {
    transform_with(b, o, instance, &instance.switch)
}

/// `τ` with an explicit switch matrix (used when the opponent's actual
/// switching differs from the design model).
pub fn transform_with(
    b: &BeliefState,
    o: Observation,
    instance: &GameInstance,
    switch: &SwitchModel,
) -> Result<BeliefState> {
    shift(&condition(b, o, instance)?, switch)
}

/// Left fold of [`transform`] over `seq`. A zero-probability observation is
/// reported with its index in `seq`.
pub fn transform_seq(b: &BeliefState, seq: &[Observation], instance: &GameInstance) -> Result<BeliefState> {
    let mut cur = b.clone();
    for (i, o) in seq.iter().enumerate() {
        cur = transform(&cur, *o, instance).map_err(|e| match e {
            Error::ZeroProbabilityObservation { .. } => Error::ZeroProbabilityObservation { index: Some(i) },
            other => other,
        })?;
    }
    Ok(cur)
}

fn check_observation(o: Observation, instance: &GameInstance) -> Result<()> {
    if instance.observation_in_range(o) {
        Ok(())
    } else {
        Err(Error::UnknownObservation {
            state: o.state,
            action: o.action,
        })
    }
}

/// `P(a2 | s, b) = Σ_i b_i π_i(s, a2)` for every `a2`.
pub fn action_distribution(b: &BeliefState, s: usize, instance: &GameInstance) -> Vec<f64> {
    let na2 = instance.arena.num_p2_actions();
    let mut out = vec![0.0; na2];
    for (bi, p) in b.0.iter().zip(&instance.policies) {
        for (o, pa) in out.iter_mut().zip(p.row(s)) {
            *o += bi * pa;
        }
    }
    out
}
