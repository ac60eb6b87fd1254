use super::{
    apply, linear_cost, weighted_sq_residual, BarycentricMatrix, LineSearch, Oracle, OracleState, ProjectionResult,
    SolverConfig, TraceRecord, PAR_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::measure::{check_same_dim, DiscreteMeasure};
use rayon::prelude::*;

/// A vertex of the feasible set with its weight in the current iterate.
struct Atom {
    entries: Vec<(usize, f64)>,
    weight: f64,
}

/// Frank-Wolfe on `J(A)` starting from the matrix whose rows all equal `nu`'s
/// weights (every atom sent to the barycenter of `nu`).
pub fn project_backward(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cfg: &SolverConfig) -> Result<ProjectionResult> {
    check_same_dim(mu, nu)?;
    cfg.validate()?;
    if let Some(i) = mu.weights().iter().position(|&w| w <= 0.0) {
        return Err(Error::ZeroWeightAtom(i));
    }
    // columns of null target atoms are identically zero in every feasible A
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu.weights()[j] > 0.0).collect();
    let y: Vec<Vec<f64>> = cols.iter().map(|&j| nu.points()[j].clone()).collect();
    let b: Vec<f64> = cols.iter().map(|&j| nu.weights()[j]).collect();
    let (x, w) = (mu.points(), mu.weights());
    let (n, m) = (x.len(), y.len());

    let mut a = Matrix::from_fn(n, m, |_, j| b[j]);
    let pairwise = cfg.pairwise_steps && cfg.oracle == Oracle::ExactLp && cfg.line_search == LineSearch::ClosedForm;
    let mut atoms: Vec<Atom> = Vec::new();
    if pairwise {
        atoms.push(Atom { entries: a.as_slice().iter().copied().enumerate().collect(), weight: 1.0 });
    }
    let mut oracle = OracleState::new(cfg.oracle, w, &b)?;
    let kind = cfg.oracle.kind();
    let mut trace = Vec::new();
    let mut gap_tol = cfg.gap_tol.unwrap_or(f64::NAN);
    let mut converged = false;

    for k in 0..=cfg.max_iter {
        let p = apply(&a, &y);
        let obj = weighted_sq_residual(&p, x, w);
        let cost = linear_cost(&p, x, &y);
        if !(obj.is_finite() && cost.is_finite()) {
            return Err(Error::NonFinite(format!("objective or gradient at iteration {k}")));
        }
        if k == 0 && cfg.gap_tol.is_none() {
            gap_tol = 1e-7 * (1.0 + obj);
        }
        let step = oracle.solve(&cost, k)?;
        // <G, A> with G = diag(w) C
        let lin_a = weighted_inner(&cost, &a, w);
        let gap = (lin_a - step.lower_bound).max(0.0);
        let record = |step_size: f64| TraceRecord {
            k,
            objective: obj,
            gap,
            step: step_size,
            oracle: kind,
            epsilon: step.epsilon,
        };
        if gap <= gap_tol {
            converged = true;
            trace.push(record(0.0));
            break;
        }
        if k == cfg.max_iter {
            trace.push(record(0.0));
            break;
        }

        // search direction: shift weight from the worst active atom to the oracle vertex
        let mut worst: Option<usize> = None;
        let mut max_step = 1.0;
        if pairwise && !atoms.is_empty() {
            let (idx, _) = atoms
                .iter()
                .enumerate()
                .map(|(t, at)| (t, sparse_inner(&cost, &at.entries, w, m)))
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
            worst = Some(idx);
            max_step = atoms[idx].weight;
        }
        let dir = match worst {
            None => sub(&step.s, &a),
            Some(t) => {
                let mut d = step.s.clone();
                let data = d.as_mut_slice();
                for &(idx, v) in &atoms[t].entries {
                    data[idx] -= v;
                }
                d
            }
        };
        let slope = weighted_inner(&cost, &dir, w);
        let gamma = match cfg.line_search {
            LineSearch::ClosedForm => {
                let dy = apply(&dir, &y);
                let curv: f64 = dy
                    .iter()
                    .zip(w)
                    .map(|(r, wi)| wi * r.iter().map(|v| v * v).sum::<f64>())
                    .sum();
                if curv > 0.0 {
                    (-slope / (2.0 * curv)).clamp(0.0, max_step)
                } else if slope < 0.0 {
                    max_step
                } else {
                    0.0
                }
            }
            LineSearch::Fixed => 2.0 / (k as f64 + 2.0),
        };
        trace.push(record(gamma));
        if gamma > 0.0 {
            axpy(&mut a, gamma, &dir);
            if pairwise {
                update_atoms(&mut atoms, worst, gamma, max_step, step.vertex.unwrap_or_default());
            }
        }
    }

    let iterations = trace.last().map_or(0, |r| r.k);
    let images = apply(&a, &y);
    let distance = weighted_sq_residual(&images, x, w).max(0.0).sqrt();
    let projected = DiscreteMeasure::new(images, w.to_vec())?;
    let mut full = Matrix::zeros(n, nu.len());
    for i in 0..n {
        for (jj, &j) in cols.iter().enumerate() {
            full[(i, j)] = a[(i, jj)];
        }
    }
    log::debug!("projection: distance {distance:e} after {iterations} iterations (converged: {converged})");
    Ok(ProjectionResult {
        barycentric: BarycentricMatrix::new(full),
        distance,
        converged,
        iterations,
        trace,
        projected,
    })
}

fn update_atoms(atoms: &mut Vec<Atom>, worst: Option<usize>, gamma: f64, max_step: f64, vertex: Vec<(usize, f64)>) {
    if let Some(t) = worst {
        atoms[t].weight -= gamma;
        if gamma >= max_step {
            atoms[t].weight = 0.0;
        }
    }
    match atoms.iter_mut().find(|at| at.entries.len() == vertex.len() && at.entries.iter().zip(&vertex).all(|(a, b)| a.0 == b.0)) {
        Some(at) => at.weight += gamma,
        None => atoms.push(Atom { entries: vertex, weight: gamma }),
    }
    atoms.retain(|at| at.weight > 0.0);
}

/// `sum_ij w_i C_ij M_ij`, reduced in row order.
fn weighted_inner(c: &Matrix, mtx: &Matrix, w: &[f64]) -> f64 {
    let row = |i: usize| -> f64 { w[i] * c.row(i).iter().zip(mtx.row(i)).map(|(a, b)| a * b).sum::<f64>() };
    let parts: Vec<f64> = if c.rows() * c.cols() >= PAR_THRESHOLD {
        (0..c.rows()).into_par_iter().map(row).collect()
    } else {
        (0..c.rows()).map(row).collect()
    };
    parts.iter().sum()
}

fn sparse_inner(c: &Matrix, entries: &[(usize, f64)], w: &[f64], m: usize) -> f64 {
    let data = c.as_slice();
    entries.iter().map(|&(idx, v)| w[idx / m] * data[idx] * v).sum()
}

fn sub(s: &Matrix, a: &Matrix) -> Matrix {
    let data = s.as_slice().iter().zip(a.as_slice()).map(|(x, y)| x - y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn axpy(a: &mut Matrix, gamma: f64, d: &Matrix) {
    for (x, v) in a.as_mut_slice().iter_mut().zip(d.as_slice()) {
        // clamp roundoff below zero; exact arithmetic keeps A nonnegative
        *x = (*x + gamma * v).max(0.0);
    }
}
