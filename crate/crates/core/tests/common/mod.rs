//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the library's belief or planning code.

#![allow(dead_code)]

use anticipation::planner::FiniteMdp;

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Bayes step followed by the switch mix; `None` when the observation is
/// impossible under `b`.
pub fn tau(b: &[f64], alphas: &[f64], switch: &[Vec<f64>]) -> Option<Vec<f64>> {
    let z: f64 = b.iter().zip(alphas).map(|(x, a)| x * a).sum();
    if z <= 1e-12 {
        return None;
    }
    let n = b.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let w = b[i] * alphas[i] / z;
        for j in 0..n {
            out[j] += w * switch[i][j];
        }
    }
    Some(out)
}

/// Every point of the simplex whose coordinates are multiples of `1/steps`.
pub fn simplex_grid(n: usize, steps: usize, mut visit: impl FnMut(&[f64])) {
    fn rec(prefix: &mut Vec<usize>, n: usize, left: usize, steps: usize, visit: &mut dyn FnMut(&[f64])) {
        if prefix.len() == n - 1 {
            let mut b: Vec<f64> = prefix.iter().map(|&k| k as f64 / steps as f64).collect();
            b.push(left as f64 / steps as f64);
            visit(&b);
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            rec(prefix, n, left - k, steps, visit);
            prefix.pop();
        }
    }
    rec(&mut Vec::new(), n, steps, steps, &mut visit);
}

/// Largest post-update distance to `target` over grid beliefs within
/// `lambda` of `source`, with the grid point achieving it.
pub fn grid_max_post(
    source: &[f64],
    target: &[f64],
    alphas: &[f64],
    switch: &[Vec<f64>],
    lambda: f64,
    steps: usize,
) -> (f64, Option<Vec<f64>>) {
    let mut best = (f64::NEG_INFINITY, None);
    simplex_grid(source.len(), steps, |b| {
        if l1(b, source) > lambda + 1e-12 {
            return;
        }
        if let Some(next) = tau(b, alphas, switch) {
            let d = l1(&next, target);
            if d > best.0 {
                best = (d, Some(b.to_vec()));
            }
        }
    });
    best
}

/// Value iteration stopped when the span of successive differences drops
/// to `span_tol`; returns the midpoint of the standard bracket around the
/// optimal values.
pub fn value_iteration(mdp: &FiniteMdp, gamma: f64, span_tol: f64) -> Vec<f64> {
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..mdp.num_actions())
                    .map(|a| mdp.reward(s, a) + gamma * mdp.row(s, a).iter().map(|(t, p)| p * v[*t]).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let diff: Vec<f64> = next.iter().zip(&v).map(|(a, b)| a - b).collect();
        let lo = diff.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = diff.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        v = next;
        if hi - lo <= span_tol {
            let shift = gamma / (1.0 - gamma) * 0.5 * (lo + hi);
            return v.iter().map(|x| x + shift).collect();
        }
    }
}

/// `max_s |max_a (r + γ P v) − v|`.
pub fn bellman_residual(mdp: &FiniteMdp, v: &[f64], gamma: f64) -> f64 {
    (0..mdp.num_states())
        .map(|s| {
            let best = (0..mdp.num_actions())
                .map(|a| mdp.reward(s, a) + gamma * mdp.row(s, a).iter().map(|(t, p)| p * v[*t]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            (best - v[s]).abs()
        })
        .fold(0.0, f64::max)
}

/// Draws from a finite distribution given a uniform `u` in `[0, 1)`.
pub fn draw(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Row-stochastic random matrix with every entry at least `floor`.
pub fn random_stochastic(rng: &mut impl rand::Rng, n: usize, floor: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| floor + (1.0 - n as f64 * floor) * x / s).collect()
        })
        .collect()
}

pub fn random_belief(rng: &mut impl rand::Rng, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| floor + (1.0 - n as f64 * floor) * x / s).collect()
}
