//! Small dense linear programs in equality form, `min c^T x` subject to
//! `A x = b`, `x >= 0`, by the two-phase tableau simplex.
//!
//! Pricing is Dantzig's rule; after a run of degenerate pivots it falls back to
//! Bland's rule until the objective moves again. Row operations skip zeros in
//! the pivot row, which keeps the sparse constraint matrices used by the order
//! oracle cheap to pivot on.

use crate::error::{Error, Result};

const DEGENERATE_RUN: usize = 32;
const PIVOT_TOL: f64 = 1e-11;
const PRICE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    num_vars: usize,
    cost: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, f64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, cost: vec![0.0; num_vars], rows: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn set_cost(&mut self, var: usize, c: f64) {
        self.cost[var] = c;
    }

    /// Adds `sum_k coef_k x_{var_k} = rhs`.
    pub fn add_eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        debug_assert!(terms.iter().all(|&(v, _)| v < self.num_vars));
        self.rows.push((terms, rhs));
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    rows: usize,
    /// Structural columns followed by one artificial column per row.
    cols: usize,
    width: usize,
    data: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    reduced: Vec<f64>,
    value: f64,
    pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let rows = lp.rows.len();
        let cols = lp.num_vars;
        let width = cols + rows;
        let mut data = vec![0.0; rows * width];
        let mut rhs = vec![0.0; rows];
        for (r, (terms, b)) in lp.rows.iter().enumerate() {
            let sign = if *b < 0.0 { -1.0 } else { 1.0 };
            for &(v, a) in terms {
                data[r * width + v] += sign * a;
            }
            data[r * width + cols + r] = 1.0;
            rhs[r] = sign * b;
        }
        Self {
            rows,
            cols,
            width,
            data,
            rhs,
            basis: (cols..cols + rows).collect(),
            reduced: vec![0.0; width],
            value: 0.0,
            pivots: 0,
        }
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpSolution> {
        let scale = 1.0 + self.rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        // phase 1: minimize the sum of artificials
        let mut phase1 = vec![0.0; self.width];
        phase1[self.cols..].iter_mut().for_each(|c| *c = 1.0);
        self.price_out(&phase1);
        self.optimize(self.width)?;
        if self.value > 1e-9 * scale {
            return Err(Error::SolverFailure(format!("linear program is infeasible (residual {:e})", self.value)));
        }
        self.drive_out_artificials();
        // phase 2
        let mut cost = lp.cost.clone();
        cost.resize(self.width, 0.0);
        self.price_out(&cost);
        self.optimize(self.cols)?;
        let mut x = vec![0.0; self.cols];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.cols {
                x[b] = self.rhs[r].max(0.0);
            }
        }
        let objective = x.iter().zip(&lp.cost).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, objective, pivots: self.pivots })
    }

    /// Sets reduced costs and objective value for `cost` under the current basis.
    fn price_out(&mut self, cost: &[f64]) {
        self.reduced.copy_from_slice(cost);
        self.value = 0.0;
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.data[r * self.width..(r + 1) * self.width];
            for (z, a) in self.reduced.iter_mut().zip(row) {
                *z -= cb * a;
            }
            self.value += cb * self.rhs[r];
        }
    }

    /// Runs simplex pivots, letting only columns `< limit` enter.
    fn optimize(&mut self, limit: usize) -> Result<()> {
        let max_pivots = 50 * (self.rows + self.width) + 10_000;
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_RUN;
            let mut enter = None;
            let mut best = -PRICE_TOL;
            for j in 0..limit {
                let z = self.reduced[j];
                if z < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = z;
                }
            }
            let Some(c) = enter else {
                return Ok(());
            };
            let mut leave: Option<usize> = None;
            let mut ratio = f64::INFINITY;
            for r in 0..self.rows {
                let a = self.data[r * self.width + c];
                if a > PIVOT_TOL {
                    let t = self.rhs[r].max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some(l) => t < ratio || (t == ratio && self.basis[r] < self.basis[l]),
                    };
                    if better {
                        ratio = t;
                        leave = Some(r);
                    }
                }
            }
            let Some(r) = leave else {
                return Err(Error::SolverFailure("linear program is unbounded".into()));
            };
            if self.pivots >= max_pivots {
                return Err(Error::SolverFailure(format!("simplex exceeded {max_pivots} pivots")));
            }
            if ratio > 0.0 {
                degenerate = 0;
            } else {
                degenerate += 1;
            }
            self.pivot(r, c);
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.data[r * w + c];
        let inv = 1.0 / p;
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v *= inv;
        }
        self.rhs[r] *= inv;
        self.data[r * w + c] = 1.0;
        let nz: Vec<usize> = (0..w).filter(|&j| self.data[r * w + j] != 0.0).collect();
        let (pivot_row, pivot_rhs) = (self.data[r * w..(r + 1) * w].to_vec(), self.rhs[r]);
        for q in 0..self.rows {
            if q == r {
                continue;
            }
            let f = self.data[q * w + c];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.data[q * w..(q + 1) * w];
            for &j in &nz {
                row[j] -= f * pivot_row[j];
            }
            row[c] = 0.0;
            self.rhs[q] -= f * pivot_rhs;
        }
        let f = self.reduced[c];
        if f != 0.0 {
            for &j in &nz {
                self.reduced[j] -= f * pivot_row[j];
            }
            self.reduced[c] = 0.0;
            self.value += f * pivot_rhs;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Replaces basic artificials (at zero level after phase 1) by structural
    /// columns where possible; rows where none exists are redundant and stay put.
    fn drive_out_artificials(&mut self) {
        for r in 0..self.rows {
            if self.basis[r] < self.cols {
                continue;
            }
            let row = &self.data[r * self.width..r * self.width + self.cols];
            let best = (0..self.cols)
                .filter(|&j| row[j].abs() > 1e-9)
                .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()));
            if let Some(c) = best {
                self.pivot(r, c);
            }
        }
    }
}
