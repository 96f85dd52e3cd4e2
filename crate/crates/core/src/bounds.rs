//! Closed-form constants for termination, contraction and robustness, plus
//! a sampled check of the reward and transition discrepancy bounds.

use std::fmt;

use rand::Rng;

use crate::belief::{action_distribution, transform, tv_distance, BeliefState};
use crate::error::{Error, Result};
use crate::game::{GameInstance, Observation, SwitchModel};
use crate::ism::InformationStateMachine;
use crate::par;
use crate::rng::{sample_index, sample_sparse, stream_rng};

pub fn min_entry(t: &SwitchModel) -> f64 {
    t.min_entry()
}

fn alphas_checked(o: Observation, instance: &GameInstance) -> Result<Vec<f64>> {
    if !instance.observation_in_range(o) {
        return Err(Error::UnknownObservation {
            state: o.state,
            action: o.action,
        });
    }
    let a = instance.alphas(o);
    if a.iter().all(|x| *x <= 0.0) {
        return Err(Error::UnknownObservation {
            state: o.state,
            action: o.action,
        });
    }
    Ok(a)
}

fn max_sum(a: &[f64]) -> (f64, f64) {
    (a.iter().cloned().fold(0.0, f64::max), a.iter().sum())
}

/// `α_max(o) / (α_sum(o) + n·α_max(o))`.
pub fn kappa(o: Observation, instance: &GameInstance) -> Result<f64> {
    let a = alphas_checked(o, instance)?;
    let (amax, asum) = max_sum(&a);
    Ok(amax / (asum + a.len() as f64 * amax))
}

/// Largest `κ(o)` over the non-zero-probability alphabet (0 if it is empty).
pub fn kappa_max(instance: &GameInstance) -> f64 {
    instance
        .nonzero_observations()
        .into_iter()
        .filter_map(|o| kappa(o, instance).ok())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminationGuarantee {
    pub guaranteed: bool,
    pub t_star: f64,
    pub kappa_max: f64,
}

/// Synthesis terminates for every `λ > 0` when `t* > κ_max`.
pub fn termination_guarantee(instance: &GameInstance) -> TerminationGuarantee {
    let t_star = instance.switch.min_entry();
    let kappa_max = kappa_max(instance);
    TerminationGuarantee {
        guaranteed: t_star > kappa_max,
        t_star,
        kappa_max,
    }
}

/// Lipschitz factor of `b ↦ τ(b, o)` on beliefs bounded below by `t*`:
/// `(1 − n·t*)·α_max(o) / (t*·α_sum(o))`.
pub fn contraction_factor(o: Observation, instance: &GameInstance) -> Result<f64> {
    let t = instance.switch.min_entry();
    if t <= 0.0 {
        return Err(Error::Domain(
            "contraction factor needs a strictly positive switch matrix".into(),
        ));
    }
    let a = alphas_checked(o, instance)?;
    let (amax, asum) = max_sum(&a);
    Ok((1.0 - a.len() as f64 * t) * amax / (t * asum))
}

/// Maximum absolute column sum.
pub fn induced_one_norm(m: &[Vec<f64>]) -> f64 {
    let cols = m.iter().map(Vec::len).max().unwrap_or(0);
    (0..cols)
        .map(|j| m.iter().map(|row| row.get(j).map_or(0.0, |x| x.abs())).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `‖(T_A − T_D)ᵗ‖₁`, i.e. the largest absolute row sum of the difference.
pub fn switch_gap(t_a: &SwitchModel, t_d: &SwitchModel) -> Result<f64> {
    if t_a.dim() != t_d.dim() {
        return Err(Error::DimensionMismatch {
            expected: t_d.dim(),
            found: t_a.dim(),
        });
    }
    let n = t_a.dim();
    let transposed: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| t_a.get(i, j) - t_d.get(i, j)).collect())
        .collect();
    Ok(induced_one_norm(&transposed))
}

/// `L = max_o (1 − n·max(t_a*, t_d*))·α_max(o) / (min(t_a*, t_d*)·α_sum(o))`.
pub fn robustness_l(t_a: &SwitchModel, t_d: &SwitchModel, instance: &GameInstance) -> Result<f64> {
    let (ta, td) = (t_a.min_entry(), t_d.min_entry());
    if ta <= 0.0 || td <= 0.0 {
        return Err(Error::Domain(
            "robustness needs strictly positive switch matrices".into(),
        ));
    }
    if t_a.dim() != instance.num_policies() || t_d.dim() != instance.num_policies() {
        return Err(Error::DimensionMismatch {
            expected: instance.num_policies(),
            found: if t_a.dim() != instance.num_policies() {
                t_a.dim()
            } else {
                t_d.dim()
            },
        });
    }
    let n = instance.num_policies() as f64;
    let (hi, lo) = (ta.max(td), ta.min(td));
    let mut l: f64 = 0.0;
    for o in instance.nonzero_observations() {
        let (amax, asum) = max_sum(&instance.alphas(o));
        l = l.max((1.0 - n * hi) * amax / (lo * asum));
    }
    Ok(l)
}

/// `λ̄ = (λ + ‖(T_A − T_D)ᵗ‖₁) / (1 − L)` when `L < 1`.
pub fn robust_lambda(
    t_a: &SwitchModel,
    t_d: &SwitchModel,
    instance: &GameInstance,
    lambda: f64,
) -> Result<Option<f64>> {
    let l = robustness_l(t_a, t_d, instance)?;
    if l >= 1.0 {
        return Ok(None);
    }
    Ok(Some((lambda + switch_gap(t_a, t_d)?) / (1.0 - l)))
}

/// `max_{a1, a2} |R(s, a1, a2)|`.
pub fn reward_max(instance: &GameInstance, s: usize) -> f64 {
    instance.arena.max_abs_reward(s)
}

/// `Σ_{a2} max_j π_j(s, a2)`.
pub fn alpha_max_state(instance: &GameInstance, s: usize) -> f64 {
    (0..instance.arena.num_p2_actions())
        .map(|a2| instance.policies.iter().map(|p| p.prob(s, a2)).fold(0.0, f64::max))
        .sum()
}

/// Coefficients of `K = (R_max(s)·α_max(s) + γρ)/(1 − γ)` with `ρ` left
/// free: returns `(constant, coefficient of ρ)`.
pub fn value_gap_constant(instance: &GameInstance, s: usize, gamma: f64) -> (f64, f64) {
    let base = reward_max(instance, s) * alpha_max_state(instance, s) / (1.0 - gamma);
    (base, gamma / (1.0 - gamma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBound {
    pub observation: Observation,
    pub alpha_max: f64,
    pub alpha_sum: f64,
    pub kappa: f64,
    /// `None` when the switch matrix has a zero entry.
    pub contraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateBound {
    pub state: usize,
    pub reward_max: f64,
    pub alpha_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub observations: Vec<ObservationBound>,
    pub states: Vec<StateBound>,
    pub t_star: f64,
    pub kappa_max: f64,
    pub guaranteed: bool,
}

pub fn bound_report(instance: &GameInstance) -> BoundReport {
    let observations = instance
        .nonzero_observations()
        .into_iter()
        .map(|o| {
            let (alpha_max, alpha_sum) = max_sum(&instance.alphas(o));
            ObservationBound {
                observation: o,
                alpha_max,
                alpha_sum,
                kappa: kappa(o, instance).unwrap_or(0.0),
                contraction: contraction_factor(o, instance).ok(),
            }
        })
        .collect();
    let states = (0..instance.arena.num_states())
        .map(|s| StateBound {
            state: s,
            reward_max: reward_max(instance, s),
            alpha_max: alpha_max_state(instance, s),
        })
        .collect();
    let g = termination_guarantee(instance);
    BoundReport {
        observations,
        states,
        t_star: g.t_star,
        kappa_max: g.kappa_max,
        guaranteed: g.guaranteed,
    }
}

impl BoundReport {
    /// Observation table as CSV with state and action names.
    pub fn observations_csv(&self, instance: &GameInstance) -> String {
        let mut out = String::from("state,action,alpha_max,alpha_sum,kappa,contraction\n");
        for r in &self.observations {
            let c = r.contraction.map_or(String::new(), |c| format!("{c}"));
            out += &format!(
                "{},{},{},{},{},{}\n",
                instance.arena.states[r.observation.state],
                instance.arena.p2_actions[r.observation.action],
                r.alpha_max,
                r.alpha_sum,
                r.kappa,
                c
            );
        }
        out
    }

    pub fn states_csv(&self, instance: &GameInstance) -> String {
        let mut out = String::from("state,reward_max,alpha_max\n");
        for r in &self.states {
            out += &format!("{},{},{}\n", instance.arena.states[r.state], r.reward_max, r.alpha_max);
        }
        out
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "t*        {:.6}", self.t_star)?;
        writeln!(f, "kappa_max {:.6}", self.kappa_max)?;
        writeln!(
            f,
            "guaranteed termination: {}",
            if self.guaranteed { "yes" } else { "no" }
        )?;
        writeln!(f)?;
        writeln!(
            f,
            "{:>6} {:>6} {:>10} {:>10} {:>10} {:>12}",
            "state", "action", "alpha_max", "alpha_sum", "kappa", "contraction"
        )?;
        for r in &self.observations {
            let c = r.contraction.map_or("-".to_string(), |c| format!("{c:.6}"));
            writeln!(
                f,
                "{:>6} {:>6} {:>10.6} {:>10.6} {:>10.6} {:>12}",
                r.observation.state, r.observation.action, r.alpha_max, r.alpha_sum, r.kappa, c
            )?;
        }
        writeln!(f)?;
        writeln!(f, "{:>6} {:>10} {:>10}", "state", "R_max", "alpha_max")?;
        for r in &self.states {
            writeln!(f, "{:>6} {:>10.6} {:>10.6}", r.state, r.reward_max, r.alpha_max)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscrepancyReport {
    pub histories: usize,
    /// Number of `(history prefix, player-1 action)` pairs evaluated.
    pub evaluations: usize,
    pub max_reward_gap: f64,
    pub max_transition_gap: f64,
    /// Observed gap over its bound, maximized; 0 when both are 0.
    pub max_reward_ratio: f64,
    pub max_transition_ratio: f64,
    /// Histories cut short by an observation with no machine edge.
    pub undefined: usize,
}

impl DiscrepancyReport {
    pub fn within_bounds(&self) -> bool {
        self.max_reward_ratio <= 1.0 + 1e-6 && self.max_transition_ratio <= 1.0 + 1e-6
    }
}

fn ratio(gap: f64, bound: f64) -> f64 {
    if gap <= 1e-15 {
        0.0
    } else if bound <= 0.0 {
        f64::INFINITY
    } else {
        gap / bound
    }
}

#[derive(Default)]
struct Partial {
    evaluations: usize,
    reward_gap: f64,
    transition_gap: f64,
    reward_ratio: f64,
    transition_ratio: f64,
    undefined: bool,
}

/// Samples histories (player 2 driven by the exact belief, player 1
/// uniform) and compares, at every prefix and every player-1 action, the
/// exact-belief reward and next-state law with those of the machine.
pub fn check_discrepancy_bounds(
    instance: &GameInstance,
    ism: &InformationStateMachine,
    lambda: f64,
    histories: usize,
    max_len: usize,
    seed: u64,
) -> Result<DiscrepancyReport> {
    let arena = &instance.arena;
    let (na1, na2) = (arena.num_p1_actions(), arena.num_p2_actions());
    let parts = par::map_range(histories, |k| -> Result<Partial> {
        let mut rng = stream_rng(seed, k as u64);
        let mut part = Partial::default();
        let mut s = arena.initial;
        let mut exact = BeliefState::uniform(instance.num_policies())?;
        let mut m = ism.initial();
        for _ in 0..max_len {
            let p_exact = action_distribution(&exact, s, instance);
            let p_ism = action_distribution(ism.belief(m), s, instance);
            let reward_bound = reward_max(instance, s) * alpha_max_state(instance, s) * lambda;
            let transition_bound = alpha_max_state(instance, s) * lambda;
            for a1 in 0..na1 {
                let mut r_gap = 0.0;
                let mut d_tv = 0.0;
                for a2 in 0..na2 {
                    let diff = p_exact[a2] - p_ism[a2];
                    r_gap += diff * arena.reward(s, a1, a2);
                    d_tv += diff.abs() * arena.successors(s, a1, a2).iter().map(|(_, p)| p).sum::<f64>();
                }
                let r_gap = r_gap.abs();
                part.evaluations += 1;
                part.reward_gap = part.reward_gap.max(r_gap);
                part.transition_gap = part.transition_gap.max(d_tv);
                part.reward_ratio = part.reward_ratio.max(ratio(r_gap, reward_bound));
                part.transition_ratio = part.transition_ratio.max(ratio(d_tv, transition_bound));
            }
            let a2 = sample_index(&mut rng, &p_exact);
            let o = Observation::new(s, a2);
            exact = transform(&exact, o, instance)?;
            match ism.advance(m, o)? {
                Some(next) => m = next,
                None => {
                    part.undefined = true;
                    break;
                }
            }
            let a1 = rng.random_range(0..na1);
            s = sample_sparse(&mut rng, arena.successors(s, a1, a2));
        }
        Ok(part)
    });
    let mut report = DiscrepancyReport {
        histories,
        ..Default::default()
    };
    for p in parts {
        let p = p?;
        report.evaluations += p.evaluations;
        report.max_reward_gap = report.max_reward_gap.max(p.reward_gap);
        report.max_transition_gap = report.max_transition_gap.max(p.transition_gap);
        report.max_reward_ratio = report.max_reward_ratio.max(p.reward_ratio);
        report.max_transition_ratio = report.max_transition_ratio.max(p.transition_ratio);
        report.undefined += p.undefined as usize;
    }
    Ok(report)
}

/// Distance between the machine's belief and the exact one after `seq`,
/// or `None` if the machine has no run on `seq`.
pub fn tracking_gap(
    instance: &GameInstance,
    ism: &InformationStateMachine,
    seq: &[Observation],
) -> Result<Option<f64>> {
    let exact = crate::belief::transform_seq(&BeliefState::uniform(instance.num_policies())?, seq, instance)?;
    match ism.run(seq) {
        Ok(m) => Ok(Some(tv_distance(ism.belief(m), &exact)?)),
        Err(_) => Ok(None),
    }
}
