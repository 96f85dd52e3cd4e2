//! Edge consistency: can any belief within `λ` of the source annotation be
//! pushed, by one observation, farther than `λ` from the target annotation?
//!
//! The refutation search is linear once the signs of the target residuals
//! `e_j(b) = Σ_i T_ij α_i b_i − b'_j Σ_i α_i b_i` are fixed, so each sign
//! pattern is one small LP over `(b, x)` where `x` bounds `|b − b(m)|`
//! componentwise.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{condition_on, l1, shift, BeliefState};
use crate::error::{Error, Result};
use crate::game::{GameInstance, Observation, SwitchModel};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::par;

/// A pattern optimum above this witnesses the strict inequalities.
pub const STRICT_MARGIN: f64 = 1e-9;

/// Candidate edge `m --o--> m'` plus the tolerance it must respect.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeQuery {
    pub source_belief: BeliefState,
    pub target_belief: BeliefState,
    pub observation: Observation,
    pub lambda: f64,
    pub alphas: Vec<f64>,
    pub switch: SwitchModel,
}

impl EdgeQuery {
    pub fn new(
        instance: &GameInstance,
        source: BeliefState,
        observation: Observation,
        target: BeliefState,
        lambda: f64,
    ) -> Self {
        EdgeQuery {
            source_belief: source,
            target_belief: target,
            observation,
            lambda,
            alphas: instance.alphas(observation),
            switch: instance.switch.clone(),
        }
    }

    fn dim(&self) -> usize {
        self.source_belief.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        for found in [self.target_belief.len(), self.alphas.len(), self.switch.dim()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Domain(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Domain("observation likelihoods must lie in [0, 1]".into()));
        }
        if self.alphas.iter().all(|a| *a == 0.0) {
            return Err(Error::Domain(
                "observation has zero probability under every policy".into(),
            ));
        }
        Ok(())
    }

    /// `||b − b(m)||` and `||τ(b, o) − b(m')||` for a candidate `b`, or
    /// `None` when `o` has zero probability under `b`.
    pub fn distances(&self, b: &BeliefState) -> Option<(f64, f64)> {
        let pre = l1(b.entries(), self.source_belief.entries());
        let next = condition_on(b, &self.alphas).ok()?;
        let next = shift(&next, &self.switch).ok()?;
        Some((pre, l1(next.entries(), self.target_belief.entries())))
    }

    /// Whether `b` refutes the edge: inside the `λ`-ball, observation
    /// possible, and lands more than `λ` (plus `margin`) from the target.
    pub fn violates(&self, b: &BeliefState, margin: f64) -> bool {
        if b.dot(&self.alphas) <= 1e-12 {
            return false;
        }
        match self.distances(b) {
            Some((pre, post)) => pre <= self.lambda + 1e-9 && post > self.lambda + margin,
            None => false,
        }
    }

    /// Coefficients of `e_j` as a linear form in `b`.
    fn residual_forms(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let t = self.target_belief.entries();
        (0..n)
            .map(|j| {
                (0..n)
                    .map(|i| self.alphas[i] * (self.switch.get(i, j) - t[j]))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Consistent,
    Refuted {
        witness: BeliefState,
        pre_distance: f64,
        post_distance: f64,
    },
}

impl Verdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Verdict::Consistent)
    }
}

/// On-disk shape of a standalone edge query.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryDoc {
    lambda: f64,
    source: Vec<f64>,
    target: Vec<f64>,
    alphas: Vec<f64>,
    switch: Vec<Vec<f64>>,
    /// `[state, action]` indices; informational only.
    #[serde(default)]
    observation: Option<[usize; 2]>,
}

impl EdgeQuery {
    /// Reads a query from JSON with keys `lambda`, `source`, `target`,
    /// `alphas`, `switch` (row-major) and an optional `observation`.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: QueryDoc = serde_json::from_str(text)?;
        let q = EdgeQuery {
            source_belief: BeliefState::new(doc.source)?,
            target_belief: BeliefState::new(doc.target)?,
            observation: doc
                .observation
                .map_or(Observation::new(0, 0), |[s, a]| Observation::new(s, a)),
            lambda: doc.lambda,
            alphas: doc.alphas,
            switch: SwitchModel::from_rows(doc.switch)?,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn to_json(&self) -> String {
        let doc = QueryDoc {
            lambda: self.lambda,
            source: self.source_belief.entries().to_vec(),
            target: self.target_belief.entries().to_vec(),
            alphas: self.alphas.clone(),
            switch: self.switch.rows(),
            observation: Some([self.observation.state, self.observation.action]),
        };
        serde_json::to_string_pretty(&doc).expect("query serializes")
    }
}

/// Sign patterns in visiting order: the signs of `e_j` at the source belief
/// first, then the rest in binary order. Constant patterns are skipped since
/// `Σ_j e_j ≡ 0` forces every residual to zero there.
fn sign_patterns(forms: &[Vec<f64>], source: &[f64]) -> Vec<u64> {
    let n = forms.len();
    let full: u64 = (1u64 << n) - 1;
    let greedy = forms.iter().enumerate().fold(0u64, |acc, (j, f)| {
        let e: f64 = f.iter().zip(source).map(|(a, b)| a * b).sum();
        if e < 0.0 {
            acc | (1 << j)
        } else {
            acc
        }
    });
    let mut out = Vec::with_capacity(1 << n);
    if greedy != 0 && greedy != full {
        out.push(greedy);
    }
    out.extend((1..full).filter(|&p| p != greedy));
    out
}

/// Solves the LP for one sign pattern (bit `j` set means `s_j = −1`).
/// Returns the maximizing belief when the optimum exceeds the margin.
fn solve_pattern(q: &EdgeQuery, forms: &[Vec<f64>], pattern: u64, margin: f64) -> Result<Option<Vec<f64>>> {
    let n = q.dim();
    let sign = |j: usize| if pattern >> j & 1 == 1 { -1.0 } else { 1.0 };
    // variables: b_0..b_{n-1}, x_0..x_{n-1}
    let mut objective = vec![0.0; 2 * n];
    for i in 0..n {
        objective[i] = (0..n).map(|j| sign(j) * forms[j][i]).sum::<f64>() - q.lambda * q.alphas[i];
    }
    let c = q.source_belief.entries();
    // Relaxing b >= 0 leaves an L1 ball inside the hyperplane, where a
    // linear form peaks at g·c + λ/2·(max g − min g). Patterns that are
    // infeasible or cannot beat the margin under that relaxation are skipped.
    let ceiling = |g: &mut dyn Iterator<Item = f64>| {
        let (mut at_c, mut hi, mut lo) = (0.0, f64::NEG_INFINITY, f64::INFINITY);
        for (gi, ci) in g.zip(c) {
            at_c += gi * ci;
            hi = hi.max(gi);
            lo = lo.min(gi);
        }
        at_c + 0.5 * q.lambda * (hi - lo)
    };
    if ceiling(&mut objective[..n].iter().copied()) <= margin {
        return Ok(None);
    }
    for (j, f) in forms.iter().enumerate() {
        if ceiling(&mut f.iter().map(|v| sign(j) * v)) < -1e-9 {
            return Ok(None);
        }
    }
    let mut lp = LinearProgram::new(objective);
    let mut row = vec![0.0; 2 * n];
    row[..n].fill(1.0);
    lp.add(row, Relation::Eq, 1.0);
    for i in 0..n {
        let mut upper = vec![0.0; 2 * n];
        upper[i] = 1.0;
        upper[n + i] = -1.0;
        lp.add(upper, Relation::Le, c[i]);
        let mut lower = vec![0.0; 2 * n];
        lower[i] = 1.0;
        lower[n + i] = 1.0;
        lp.add(lower, Relation::Ge, c[i]);
    }
    let mut budget = vec![0.0; 2 * n];
    budget[n..].fill(1.0);
    lp.add(budget, Relation::Le, q.lambda);
    for (j, f) in forms.iter().enumerate() {
        let mut r = vec![0.0; 2 * n];
        for i in 0..n {
            r[i] = sign(j) * f[i];
        }
        lp.add(r, Relation::Ge, 0.0);
    }
    match lp.solve()? {
        LpOutcome::Optimal { x, value } if value > margin => Ok(Some(x[..n].to_vec())),
        LpOutcome::Optimal { .. } | LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::Lp("bounded edge program reported unbounded".into())),
    }
}

/// Decides edge consistency exactly (up to [`STRICT_MARGIN`]).
pub fn check_edge(q: &EdgeQuery) -> Result<Verdict> {
    check_edge_with_margin(q, STRICT_MARGIN)
}

/// Like [`check_edge`], but an excess `Σ|e_j| − λΣα_i b_i` up to `margin`
/// still counts as consistent.
pub fn check_edge_with_margin(q: &EdgeQuery, margin: f64) -> Result<Verdict> {
    q.validate()?;
    let forms = q.residual_forms();
    let patterns = sign_patterns(&forms, q.source_belief.entries());
    // Parallel fan-out only pays for larger policy sets.
    let hit: Option<Result<Vec<f64>>> = if patterns.len() >= 62 {
        par::find_first(&patterns, |&p| solve_pattern(q, &forms, p, margin).transpose())
    } else {
        patterns
            .iter()
            .find_map(|&p| solve_pattern(q, &forms, p, margin).transpose())
    };
    match hit {
        None => Ok(Verdict::Consistent),
        Some(Err(e)) => Err(e),
        Some(Ok(b)) => {
            let witness = BeliefState::new(b)?;
            let (pre, post) = q
                .distances(&witness)
                .ok_or_else(|| Error::Lp("witness makes the observation impossible".into()))?;
            Ok(Verdict::Refuted {
                witness,
                pre_distance: pre,
                post_distance: post,
            })
        }
    }
}

/// Vertices of `{b in simplex : ||b − c||_1 <= λ}`, found by enumerating
/// active sets of `n − 1` inequalities. Exponential; meant for `n <= 4`.
pub fn feasible_vertices(center: &[f64], lambda: f64) -> Vec<Vec<f64>> {
    let n = center.len();
    if n == 1 {
        return vec![vec![1.0]];
    }
    // inequalities a·b <= rhs
    let mut ineqs: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..n {
        let mut a = vec![0.0; n];
        a[i] = -1.0;
        ineqs.push((a, 0.0));
    }
    for s in 0..(1u64 << n) {
        let a: Vec<f64> = (0..n).map(|i| if s >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let rhs = lambda + a.iter().zip(center).map(|(x, y)| x * y).sum::<f64>();
        ineqs.push((a, rhs));
    }
    let feasible = |b: &[f64]| b.iter().all(|x| *x >= -1e-12) && l1(b, center) <= lambda + 1e-9;
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut pick = vec![0usize; n - 1];
    fn next_combo(pick: &mut [usize], total: usize) -> bool {
        let k = pick.len();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if pick[i] < total - k + i {
                pick[i] += 1;
                for j in i + 1..k {
                    pick[j] = pick[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }
    for (i, p) in pick.iter_mut().enumerate() {
        *p = i;
    }
    loop {
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        for j in 0..n {
            m[(0, j)] = 1.0;
        }
        rhs[0] = 1.0;
        for (r, &k) in pick.iter().enumerate() {
            for j in 0..n {
                m[(r + 1, j)] = ineqs[k].0[j];
            }
            rhs[r + 1] = ineqs[k].1;
        }
        if let Some(sol) = m.lu().solve(&rhs) {
            let b: Vec<f64> = sol.iter().map(|x| x.max(0.0)).collect();
            if sol.iter().all(|x| x.is_finite()) && feasible(sol.as_slice()) && !out.iter().any(|v| l1(v, &b) < 1e-9) {
                out.push(b);
            }
        }
        if !next_combo(&mut pick, ineqs.len()) {
            break;
        }
    }
    out
}

/// Randomized refutation search: Dirichlet proposals pulled into the
/// `λ`-ball, plus every polytope vertex when `n <= 4`. `None` proves nothing.
pub fn brute_force_refute(q: &EdgeQuery, samples: usize, seed: u64) -> Option<BeliefState> {
    let n = q.dim();
    if n == 1 {
        return None;
    }
    let c = q.source_belief.entries();
    let check = |v: Vec<f64>| -> Option<BeliefState> {
        let b = BeliefState::new(v).ok()?;
        q.violates(&b, 1e-9).then_some(b)
    };
    if n <= 4 {
        if let Some(b) = feasible_vertices(c, q.lambda).into_iter().find_map(check) {
            return Some(b);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let d: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = d.iter().sum();
        let d: Vec<f64> = d.iter().map(|x| x / total).collect();
        let dist = l1(&d, c);
        let theta = if dist > q.lambda { q.lambda / dist } else { 1.0 };
        let b: Vec<f64> = c.iter().zip(&d).map(|(ci, di)| ci + theta * (di - ci)).collect();
        if let Some(w) = check(b) {
            return Some(w);
        }
    }
    None
}

type CacheKey = (Vec<i64>, Vec<i64>, Observation, u64);

fn round_key(b: &BeliefState) -> Vec<i64> {
    b.entries().iter().map(|x| (x * 1e12).round() as i64).collect()
}

/// Edge checker bound to one game instance and `λ`, with a verdict cache
/// keyed by rounded annotations. Safe to share across threads.
pub struct EdgeChecker<'a> {
    instance: &'a GameInstance,
    lambda: f64,
    cache: Mutex<HashMap<CacheKey, Verdict>>,
    checks: AtomicUsize,
    hits: AtomicUsize,
}

impl<'a> EdgeChecker<'a> {
    pub fn new(instance: &'a GameInstance, lambda: f64) -> Self {
        EdgeChecker {
            instance,
            lambda,
            cache: Mutex::new(HashMap::new()),
            checks: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn check(&self, source: &BeliefState, o: Observation, target: &BeliefState) -> Result<Verdict> {
        self.checks.fetch_add(1, Ordering::Relaxed);
        let key = (round_key(source), round_key(target), o, self.lambda.to_bits());
        if let Some(v) = self.cache.lock().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v.clone());
        }
        let q = EdgeQuery::new(self.instance, source.clone(), o, target.clone(), self.lambda);
        let v = check_edge(&q)?;
        self.cache.lock().insert(key, v.clone());
        Ok(v)
    }

    /// Number of checks requested (including cache hits).
    pub fn checks(&self) -> usize {
        self.checks.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }
}
