//! Entropic optimal transport by Sinkhorn scaling.
//!
//! Solves `min <C, P> + eps * sum P_ij (ln P_ij - 1)` over couplings of `a` and
//! `b`. The solution has the form `P_ij = exp((f_i + g_j - C_ij) / eps)`.
//! Iterations run on scaling vectors against a kernel that already absorbs the
//! current potentials; whenever a scaling vector drifts far from one it is folded
//! back into the potentials and the kernel rebuilt. If a scaling factor still
//! leaves `[1e-300, 1e300]` the solver switches to log-sum-exp updates for the
//! rest of the call.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rayon::prelude::*;

const SCALING_FLOOR: f64 = 1e-300;
const SCALING_CEIL: f64 = 1e300;
/// Fold scalings into the potentials once `|ln u|` exceeds this.
const ABSORB_LOG: f64 = 200.0;
/// Parallelize only when the matrix is large enough to pay for it.
const PAR_THRESHOLD: usize = 1 << 14;
/// Epsilon-scaling schedule used on cold starts.
const STAGE_FACTOR: f64 = 0.25;
const STAGE_TOL: f64 = 1e-6;
const STAGE_MAX_ITER: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SinkhornStatus {
    Converged,
    MaxIterExceeded,
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub plan: Matrix,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
    /// L1 violation of the row marginal (columns are exact after the last update).
    pub marginal_error: f64,
    pub status: SinkhornStatus,
    pub used_log_domain: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// Core solver on strictly positive marginals. `warm` supplies initial dual
/// potentials (e.g. from a previous, nearby problem).
pub fn sinkhorn_potentials(
    a: &[f64],
    b: &[f64],
    cost: &Matrix,
    opts: SinkhornOptions,
    warm: Option<(&[f64], &[f64])>,
) -> Result<SinkhornSolution> {
    let (n, m) = cost.shape();
    if a.len() != n || b.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "cost is {n}x{m} but marginals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(opts.epsilon > 0.0) || !opts.epsilon.is_finite() {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    if a.iter().chain(b).any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidConfig("sinkhorn marginals must be strictly positive".into()));
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite("sinkhorn cost".into()));
    }
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let cost_t = cost.transpose();
    let problem = Problem { a, b, cost, cost_t: &cost_t, log_a: &log_a, log_b: &log_b };

    let mut g = match warm {
        Some((_, g0)) if g0.len() == m && g0.iter().all(|x| x.is_finite()) => g0.to_vec(),
        _ => vec![0.0; m],
    };
    let mut used = 0usize;
    let mut used_log = false;
    if warm.is_none() {
        // cold start at small epsilon: anneal from the cost scale down
        let (lo, hi) = cost.as_slice().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &c| (l.min(c), h.max(c)));
        let mut stage_eps = (hi - lo) / 4.0;
        while stage_eps > 4.0 * opts.epsilon && used < opts.max_iter {
            let budget = (opts.max_iter - used).min(STAGE_MAX_ITER);
            let st = problem.solve(stage_eps, opts.tol.max(STAGE_TOL), budget, g)?;
            used += st.iterations;
            used_log |= st.used_log_domain;
            g = st.g;
            stage_eps *= STAGE_FACTOR;
        }
    }
    let mut sol = problem.solve(opts.epsilon, opts.tol, opts.max_iter.saturating_sub(used), g)?;
    sol.iterations += used;
    sol.used_log_domain |= used_log;
    Ok(sol)
}

struct Problem<'a> {
    a: &'a [f64],
    b: &'a [f64],
    cost: &'a Matrix,
    cost_t: &'a Matrix,
    log_a: &'a [f64],
    log_b: &'a [f64],
}

impl Problem<'_> {
    fn solve(&self, eps: f64, tol: f64, max_iter: usize, mut g: Vec<f64>) -> Result<SinkhornSolution> {
        let Problem { a, b, cost, cost_t, log_a, log_b } = *self;
        let (n, m) = cost.shape();
        let mut f = lse_update(cost, &g, log_a, eps);
        g = lse_update(cost_t, &f, log_b, eps);
        check_finite(&f, &g)?;

        let mut used_log = false;
        let mut iterations = 0usize;
        let mut kernel = build_kernel(cost, &f, &g, eps);
        let mut u = vec![1.0; n];
        let mut v = vec![1.0; m];
        let mut err = f64::INFINITY;

        while iterations < max_iter {
            if used_log {
                let plan_rows = log_row_sums(cost, &f, &g, eps);
                err = l1_error(&plan_rows, a);
                if err <= tol {
                    break;
                }
                f = lse_update(cost, &g, log_a, eps);
                g = lse_update(cost_t, &f, log_b, eps);
                check_finite(&f, &g)?;
                iterations += 1;
                continue;
            }
            let kv = mat_vec(&kernel, &v);
            err = a.iter().zip(&u).zip(&kv).map(|((ai, ui), k)| (ui * k - ai).abs()).sum();
            if err <= tol {
                break;
            }
            let new_u: Vec<f64> = a.iter().zip(&kv).map(|(ai, k)| ai / k).collect();
            let ktu = mat_t_vec(&kernel, &new_u);
            let new_v: Vec<f64> = b.iter().zip(&ktu).map(|(bj, k)| bj / k).collect();
            iterations += 1;
            let in_range = |x: &f64| x.is_finite() && (SCALING_FLOOR..=SCALING_CEIL).contains(x);
            if !(new_u.iter().all(in_range) && new_v.iter().all(in_range)) {
                log::debug!("sinkhorn: scaling left [1e-300, 1e300] at iteration {iterations}, switching to log domain");
                absorb(&mut f, &mut g, &u, &v, eps);
                used_log = true;
                continue;
            }
            u = new_u;
            v = new_v;
            let drift = u.iter().chain(&v).fold(0.0_f64, |acc, x| acc.max(x.ln().abs()));
            if drift > ABSORB_LOG {
                absorb(&mut f, &mut g, &u, &v, eps);
                u.iter_mut().for_each(|x| *x = 1.0);
                v.iter_mut().for_each(|x| *x = 1.0);
                kernel = build_kernel(cost, &f, &g, eps);
            }
        }

        let plan = if used_log {
            build_kernel(cost, &f, &g, eps)
        } else {
            absorb(&mut f, &mut g, &u, &v, eps);
            let mut p = kernel;
            for i in 0..n {
                let ui = u[i];
                for (pij, vj) in p.row_mut(i).iter_mut().zip(&v) {
                    *pij *= ui * vj;
                }
            }
            p
        };
        if !plan.is_finite() {
            return Err(Error::NumericalUnderflow("sinkhorn plan".into()));
        }
        let status = if err <= tol { SinkhornStatus::Converged } else { SinkhornStatus::MaxIterExceeded };
        Ok(SinkhornSolution {
            plan,
            f,
            g,
            iterations,
            marginal_error: err,
            status,
            used_log_domain: used_log,
        })
    }
}

fn check_finite(f: &[f64], g: &[f64]) -> Result<()> {
    if f.iter().chain(g).all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalUnderflow("sinkhorn potentials".into()))
    }
}

fn absorb(f: &mut [f64], g: &mut [f64], u: &[f64], v: &[f64], eps: f64) {
    for (fi, ui) in f.iter_mut().zip(u) {
        *fi += eps * ui.ln();
    }
    for (gj, vj) in g.iter_mut().zip(v) {
        *gj += eps * vj.ln();
    }
}

fn l1_error(x: &[f64], target: &[f64]) -> f64 {
    x.iter().zip(target).map(|(p, q)| (p - q).abs()).sum()
}

/// `out_i = eps * log_w_i - eps * LSE_j((pot_j - C_ij) / eps)`.
fn lse_update(cost: &Matrix, pot: &[f64], log_w: &[f64], eps: f64) -> Vec<f64> {
    let row = |i: usize| {
        let c = cost.row(i);
        let mut mx = f64::NEG_INFINITY;
        for (cij, pj) in c.iter().zip(pot) {
            mx = mx.max((pj - cij) / eps);
        }
        let s: f64 = c.iter().zip(pot).map(|(cij, pj)| ((pj - cij) / eps - mx).exp()).sum();
        eps * log_w[i] - eps * (mx + s.ln())
    };
    if cost.rows() * cost.cols() >= PAR_THRESHOLD {
        (0..cost.rows()).into_par_iter().map(row).collect()
    } else {
        (0..cost.rows()).map(row).collect()
    }
}

fn log_row_sums(cost: &Matrix, f: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let row = |i: usize| -> f64 {
        cost.row(i)
            .iter()
            .zip(g)
            .map(|(cij, gj)| ((f[i] + gj - cij) / eps).exp())
            .sum()
    };
    if cost.rows() * cost.cols() >= PAR_THRESHOLD {
        (0..cost.rows()).into_par_iter().map(row).collect()
    } else {
        (0..cost.rows()).map(row).collect()
    }
}

fn build_kernel(cost: &Matrix, f: &[f64], g: &[f64], eps: f64) -> Matrix {
    let (n, m) = cost.shape();
    let mut k = Matrix::zeros(n, m);
    let fill = |(i, out): (usize, &mut [f64])| {
        for ((o, cij), gj) in out.iter_mut().zip(cost.row(i)).zip(g) {
            *o = ((f[i] + gj - cij) / eps).exp();
        }
    };
    if n * m >= PAR_THRESHOLD {
        k.as_mut_slice().par_chunks_mut(m).enumerate().for_each(fill);
    } else {
        k.as_mut_slice().chunks_mut(m).enumerate().for_each(fill);
    }
    k
}

fn mat_vec(k: &Matrix, v: &[f64]) -> Vec<f64> {
    let row = |i: usize| -> f64 { k.row(i).iter().zip(v).map(|(a, b)| a * b).sum() };
    if k.rows() * k.cols() >= PAR_THRESHOLD {
        (0..k.rows()).into_par_iter().map(row).collect()
    } else {
        (0..k.rows()).map(row).collect()
    }
}

/// `K^T u`; every column sum runs over rows in index order, so the result does
/// not depend on the thread count.
fn mat_t_vec(k: &Matrix, u: &[f64]) -> Vec<f64> {
    let (n, m) = k.shape();
    const BLOCK: usize = 256;
    let mut out = vec![0.0; m];
    let block = |(b, chunk): (usize, &mut [f64])| {
        let start = b * BLOCK;
        for i in 0..n {
            let ui = u[i];
            let row = &k.row(i)[start..start + chunk.len()];
            for (o, kij) in chunk.iter_mut().zip(row) {
                *o += kij * ui;
            }
        }
    };
    if n * m >= PAR_THRESHOLD {
        out.par_chunks_mut(BLOCK).enumerate().for_each(block);
    } else {
        out.chunks_mut(BLOCK).enumerate().for_each(block);
    }
    out
}

/// Rounds a nonnegative matrix onto the couplings of `a` and `b`: rows and
/// columns are first scaled down to their targets, then the remaining mass is
/// added back as a rank-one correction.
pub fn round_to_marginals(plan: &Matrix, a: &[f64], b: &[f64]) -> Matrix {
    let (n, m) = plan.shape();
    let mut p = plan.clone();
    let rows = p.row_sums();
    for i in 0..n {
        if rows[i] > a[i] {
            let s = a[i] / rows[i];
            p.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
    }
    let cols = p.col_sums();
    let scale: Vec<f64> = cols
        .iter()
        .zip(b)
        .map(|(c, bj)| if *c > *bj { bj / c } else { 1.0 })
        .collect();
    for i in 0..n {
        for (x, s) in p.row_mut(i).iter_mut().zip(&scale) {
            *x *= s;
        }
    }
    let err_r: Vec<f64> = a.iter().zip(p.row_sums()).map(|(ai, r)| (ai - r).max(0.0)).collect();
    let err_c: Vec<f64> = b.iter().zip(p.col_sums()).map(|(bj, c)| (bj - c).max(0.0)).collect();
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            let ri = err_r[i] / total;
            if ri > 0.0 {
                for (x, cj) in p.row_mut(i).iter_mut().zip(&err_c) {
                    *x += ri * cj;
                }
            }
        }
    }
    debug_assert_eq!(p.shape(), (n, m));
    p
}

/// Lower bound on `min_{P in Pi(a,b)} <C, P>` from arbitrary row potentials `f`:
/// the pair `(f', g)` with `g = min_i(C_ij - f_i)` and `f' = min_j(C_ij - g_j)` is
/// dual feasible.
pub fn dual_lower_bound(cost: &Matrix, a: &[f64], b: &[f64], f: &[f64]) -> f64 {
    let (n, m) = cost.shape();
    let mut g = vec![f64::INFINITY; m];
    for i in 0..n {
        for (gj, cij) in g.iter_mut().zip(cost.row(i)) {
            *gj = gj.min(cij - f[i]);
        }
    }
    let f2: Vec<f64> = (0..n)
        .map(|i| cost.row(i).iter().zip(&g).fold(f64::INFINITY, |acc, (c, gj)| acc.min(c - gj)))
        .collect();
    a.iter().zip(&f2).map(|(x, y)| x * y).sum::<f64>() + b.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>()
}
