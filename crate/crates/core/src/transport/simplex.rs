//! Dense transportation simplex.
//!
//! The basis is kept as an explicit spanning tree over the bipartite graph of
//! supply nodes `0..n` and demand nodes `n..n+m`, with exactly `n + m - 1` basic
//! cells. Degenerate (zero-flow) basic cells are ordinary tree edges, so
//! degeneracy needs no perturbation. Pricing takes the most negative reduced cost
//! within a block of rows (partial Dantzig); after a run of degenerate pivots the
//! solver falls back to Bland's smallest-index rule until the objective strictly
//! decreases again, which rules out cycling.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_RUN: usize = 16;
/// Number of row blocks used by partial pricing.
const PRICING_BLOCKS: usize = 8;

#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub flow: Matrix,
    /// Dual potentials with `u_i + v_j <= c_ij` (up to roundoff) at optimality.
    pub row_potential: Vec<f64>,
    pub col_potential: Vec<f64>,
    pub cost: f64,
    pub pivots: usize,
}

/// Reusable solver that keeps its last optimal basis. Re-solving with the same
/// marginals and a new cost starts from that basis, which stays primal feasible.
#[derive(Debug, Clone)]
pub struct TransportSimplex {
    supply: Vec<f64>,
    demand: Vec<f64>,
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
    max_pivots: usize,
}

struct Tree {
    /// For each node: (parent node, basic cell index linking to it).
    parent: Vec<Option<(usize, usize)>>,
    depth: Vec<usize>,
}

impl TransportSimplex {
    pub fn new(supply: &[f64], demand: &[f64]) -> Result<Self> {
        let (n, m) = (supply.len(), demand.len());
        if n == 0 || m == 0 {
            return Err(Error::Empty);
        }
        if supply.iter().chain(demand).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::SolverFailure("marginals must be finite and nonnegative".into()));
        }
        let (sa, sb): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
        if (sa - sb).abs() > 1e-9 * sa.max(sb).max(1.0) {
            return Err(Error::SolverFailure(format!("unbalanced problem: supply {sa} vs demand {sb}")));
        }
        let (cells, flow) = north_west_corner(supply, demand);
        Ok(Self {
            supply: supply.to_vec(),
            demand: demand.to_vec(),
            cells,
            flow,
            max_pivots: 200 * (n + m) * (n + m) + 10_000,
        })
    }

    pub fn n(&self) -> usize {
        self.supply.len()
    }

    pub fn m(&self) -> usize {
        self.demand.len()
    }

    pub fn solve(&mut self, cost: &Matrix) -> Result<TransportSolution> {
        let (n, m) = (self.n(), self.m());
        if cost.shape() != (n, m) {
            return Err(Error::ShapeMismatch(format!("cost is {:?}, expected ({n}, {m})", cost.shape())));
        }
        if !cost.is_finite() {
            return Err(Error::NonFinite("transport cost".into()));
        }
        let tol = 1e-12 * cost.max_abs();
        let mut is_basic = vec![false; n * m];
        for &(i, j) in &self.cells {
            is_basic[i * m + j] = true;
        }
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; m];
        let mut pivots = 0usize;
        let mut degenerate_run = 0usize;
        let mut cursor = 0usize;
        loop {
            let adj = self.adjacency();
            let tree = self.potentials(cost, &adj, &mut u, &mut v);
            let bland = degenerate_run >= DEGENERATE_RUN;
            let entering = if bland {
                price_bland(cost, &u, &v, &is_basic, tol)
            } else {
                price_partial(cost, &u, &v, &is_basic, tol, &mut cursor)
            };
            let Some((ei, ej)) = entering else {
                break;
            };
            if pivots >= self.max_pivots {
                return Err(Error::SolverFailure(format!("transportation simplex exceeded {} pivots", self.max_pivots)));
            }
            pivots += 1;
            let (minus, plus) = self.cycle(&tree, ei, ej);
            // leaving cell: smallest flow among decreasing edges, ties to smallest index
            let mut leave = minus[0];
            for &c in &minus[1..] {
                let (fc, fl) = (self.flow[c], self.flow[leave]);
                if fc < fl || (fc == fl && self.cells[c] < self.cells[leave]) {
                    leave = c;
                }
            }
            let theta = self.flow[leave];
            for &c in &minus {
                self.flow[c] -= theta;
            }
            for &c in &plus {
                self.flow[c] += theta;
            }
            let (li, lj) = self.cells[leave];
            is_basic[li * m + lj] = false;
            is_basic[ei * m + ej] = true;
            self.cells[leave] = (ei, ej);
            self.flow[leave] = theta;
            if theta > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
        }
        let mut flow = Matrix::zeros(n, m);
        let mut total = 0.0;
        for (&(i, j), &f) in self.cells.iter().zip(&self.flow) {
            flow[(i, j)] = f;
            total += f * cost[(i, j)];
        }
        Ok(TransportSolution { flow, row_potential: u, col_potential: v, cost: total, pivots })
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut adj = vec![Vec::new(); n + self.m()];
        for (c, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push(c);
            adj[n + j].push(c);
        }
        adj
    }

    fn potentials(&self, cost: &Matrix, adj: &[Vec<usize>], u: &mut [f64], v: &mut [f64]) -> Tree {
        let n = self.n();
        let nodes = n + self.m();
        let mut parent = vec![None; nodes];
        let mut depth = vec![0usize; nodes];
        let mut seen = vec![false; nodes];
        let mut stack = vec![0usize];
        seen[0] = true;
        u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &c in &adj[node] {
                let (i, j) = self.cells[c];
                let other = if node < n { n + j } else { i };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                parent[other] = Some((node, c));
                depth[other] = depth[node] + 1;
                if other < n {
                    u[i] = cost[(i, j)] - v[j];
                } else {
                    v[j] = cost[(i, j)] - u[i];
                }
                stack.push(other);
            }
        }
        debug_assert!(seen.iter().all(|&s| s), "basis is not a spanning tree");
        Tree { parent, depth }
    }

    /// Basic cells on the cycle closed by entering `(i, j)`, split into the ones
    /// whose flow decreases and the ones whose flow increases.
    fn cycle(&self, tree: &Tree, i: usize, j: usize) -> (Vec<usize>, Vec<usize>) {
        let n = self.n();
        let mut a = n + j;
        let mut b = i;
        let mut from_col = Vec::new();
        let mut from_row = Vec::new();
        while tree.depth[a] > tree.depth[b] {
            let (p, c) = tree.parent[a].expect("non-root node has a parent");
            from_col.push(c);
            a = p;
        }
        while tree.depth[b] > tree.depth[a] {
            let (p, c) = tree.parent[b].expect("non-root node has a parent");
            from_row.push(c);
            b = p;
        }
        while a != b {
            let (pa, ca) = tree.parent[a].expect("non-root node has a parent");
            let (pb, cb) = tree.parent[b].expect("non-root node has a parent");
            from_col.push(ca);
            from_row.push(cb);
            a = pa;
            b = pb;
        }
        from_row.reverse();
        let path = from_col.into_iter().chain(from_row);
        let mut minus = Vec::new();
        let mut plus = Vec::new();
        for (k, c) in path.enumerate() {
            if k % 2 == 0 {
                minus.push(c);
            } else {
                plus.push(c);
            }
        }
        (minus, plus)
    }
}

fn north_west_corner(supply: &[f64], demand: &[f64]) -> (Vec<(usize, usize)>, Vec<f64>) {
    let (n, m) = (supply.len(), demand.len());
    let mut ra = supply.to_vec();
    let mut rb = demand.to_vec();
    let mut cells = Vec::with_capacity(n + m - 1);
    let mut flow = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra[i].min(rb[j]);
        cells.push((i, j));
        flow.push(x);
        ra[i] -= x;
        rb[j] -= x;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if i == n - 1 {
            j += 1;
        } else if j == m - 1 || ra[i] <= rb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    (cells, flow)
}

/// First cell in index order with negative reduced cost.
fn price_bland(cost: &Matrix, u: &[f64], v: &[f64], is_basic: &[bool], tol: f64) -> Option<(usize, usize)> {
    let m = v.len();
    for (i, ui) in u.iter().enumerate() {
        let row = cost.row(i);
        for j in 0..m {
            if !is_basic[i * m + j] && row[j] - ui - v[j] < -tol {
                return Some((i, j));
            }
        }
    }
    None
}

/// Partial Dantzig pricing: scan row blocks starting at `cursor` and return the
/// most negative reduced cost of the first block that has one.
fn price_partial(
    cost: &Matrix,
    u: &[f64],
    v: &[f64],
    is_basic: &[bool],
    tol: f64,
    cursor: &mut usize,
) -> Option<(usize, usize)> {
    let (n, m) = (u.len(), v.len());
    let block = n.div_ceil(PRICING_BLOCKS).max(1);
    let mut best: Option<(usize, usize)> = None;
    let mut best_r = -tol;
    for step in 0..n {
        let i = (*cursor + step) % n;
        let row = cost.row(i);
        let ui = u[i];
        for j in 0..m {
            if is_basic[i * m + j] {
                continue;
            }
            let r = row[j] - ui - v[j];
            if r < best_r {
                best_r = r;
                best = Some((i, j));
            }
        }
        if best.is_some() && (step + 1) % block == 0 {
            *cursor = (i + 1) % n;
            return best;
        }
    }
    best
}

/// One-shot solve of `min <cost, pi>` over couplings of `supply` and `demand`.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &Matrix) -> Result<TransportSolution> {
    TransportSimplex::new(supply, demand)?.solve(cost)
}
