//! Small dense two-phase simplex.
//!
//! Sized for the edge-consistency programs (tens of rows and columns).
//! Prices with the most negative reduced cost and drops to Bland's rule
//! after a run of degenerate pivots, so it cannot cycle.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-11;
const FEAS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// `maximize c·x  s.t.  rows, x >= 0`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Vec<f64>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        LinearProgram {
            num_vars: objective.len(),
            objective,
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn add(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars, "constraint width");
        self.rows.push((coeffs, rel, rhs));
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        Tableau::build(self).run(&self.objective)
    }
}

struct Tableau {
    m: usize,
    width: usize,
    num_vars: usize,
    art_start: usize,
    /// `m` constraint rows then the objective row; last column is the rhs.
    cells: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let n = lp.num_vars;
        let normalized: Vec<(Vec<f64>, Relation, f64)> = lp
            .rows
            .iter()
            .map(|(a, rel, b)| {
                if *b < 0.0 {
                    let flipped = match rel {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (a.iter().map(|x| -x).collect(), flipped, -b)
                } else {
                    (a.clone(), *rel, *b)
                }
            })
            .collect();
        let num_slack = normalized.iter().filter(|r| r.1 != Relation::Eq).count();
        let num_art = normalized.iter().filter(|r| r.1 != Relation::Le).count();
        let art_start = n + num_slack;
        let width = art_start + num_art + 1;
        let mut cells = vec![0.0; (m + 1) * width];
        let mut basis = vec![0; m];
        let (mut slack, mut art) = (n, art_start);
        for (i, (a, rel, b)) in normalized.iter().enumerate() {
            let row = &mut cells[i * width..(i + 1) * width];
            row[..n].copy_from_slice(a);
            row[width - 1] = *b;
            match rel {
                Relation::Le => {
                    row[slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                    row[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    row[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Tableau {
            m,
            width,
            num_vars: n,
            art_start,
            cells,
            basis,
        }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.width + c]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.at(r, c);
        for x in &mut self.cells[r * w..(r + 1) * w] {
            *x /= p;
        }
        let pivot_row: Vec<f64> = self.cells[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.m {
            if i == r {
                continue;
            }
            let f = self.at(i, c);
            if f != 0.0 {
                for (x, y) in self.cells[i * w..(i + 1) * w].iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
                self.cells[i * w + c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Optimizes the objective row over columns `< limit`.
    /// Returns `false` when unbounded.
    fn optimize(&mut self, limit: usize) -> Result<bool> {
        let obj = self.m;
        let max_iter = 50 * (self.m + self.width) + 1000;
        let mut stalled = 0usize;
        let mut bland = false;
        for _ in 0..max_iter {
            let entering = if bland {
                (0..limit).find(|&j| self.at(obj, j) < -COST_EPS)
            } else {
                let mut pick = None;
                let mut most = -COST_EPS;
                for j in 0..limit {
                    let v = self.at(obj, j);
                    if v < most {
                        most = v;
                        pick = Some(j);
                    }
                }
                pick
            };
            let Some(c) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, c);
                if a > PIVOT_EPS {
                    let ratio = self.at(i, self.width - 1) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-14 || (ratio <= br + 1e-14 && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Ok(false),
                Some((r, ratio)) => {
                    if ratio.abs() < 1e-14 {
                        stalled += 1;
                        bland |= stalled > 2 * (self.m + 1);
                    } else {
                        stalled = 0;
                    }
                    self.pivot(r, c)
                }
            }
        }
        Err(Error::Lp(format!("simplex iteration limit ({max_iter}) reached")))
    }

    fn run(mut self, objective: &[f64]) -> Result<LpOutcome> {
        let w = self.width;
        let obj = self.m;
        let num_art = w - 1 - self.art_start;
        if num_art > 0 {
            // phase 1: maximize -Σ artificials
            for j in self.art_start..w - 1 {
                self.cells[obj * w + j] = 1.0;
            }
            for i in 0..self.m {
                if self.basis[i] >= self.art_start {
                    for j in 0..w {
                        let v = self.at(i, j);
                        self.cells[obj * w + j] -= v;
                    }
                }
            }
            if !self.optimize(w - 1)? {
                return Err(Error::Lp("phase one reported unbounded".into()));
            }
            if self.at(obj, w - 1) < -FEAS_EPS {
                return Ok(LpOutcome::Infeasible);
            }
            // drive remaining artificials out of the basis
            for i in 0..self.m {
                if self.basis[i] >= self.art_start {
                    if let Some(c) = (0..self.art_start).find(|&j| self.at(i, j).abs() > 1e-9) {
                        self.pivot(i, c);
                    }
                }
            }
        }
        // phase 2
        for j in 0..w {
            self.cells[obj * w + j] = 0.0;
        }
        for (j, c) in objective.iter().enumerate() {
            self.cells[obj * w + j] = -c;
        }
        for i in 0..self.m {
            let b = self.basis[i];
            let cb = if b < self.num_vars { objective[b] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..w {
                    let v = self.at(i, j);
                    self.cells[obj * w + j] += cb * v;
                }
            }
        }
        if !self.optimize(self.art_start)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut x = vec![0.0; self.num_vars];
        for i in 0..self.m {
            if self.basis[i] < self.num_vars {
                x[self.basis[i]] = self.at(i, w - 1).max(0.0);
            }
        }
        let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpOutcome::Optimal { x, value })
    }
}
