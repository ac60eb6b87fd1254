//! Exact and entropic optimal transport between discrete measures.

mod simplex;
mod sinkhorn;

pub use simplex::{solve_transport, TransportSimplex, TransportSolution};
pub use sinkhorn::{
    dual_lower_bound, round_to_marginals, sinkhorn_potentials, SinkhornOptions, SinkhornSolution,
    SinkhornStatus,
};

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::measure::{check_same_dim, DiscreteMeasure};

/// Tolerance used when validating plan marginals.
pub const MARGINAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::NonFinite("cost matrix".into()));
        }
        Ok(Self(matrix))
    }

    pub fn squared_euclidean(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Self> {
        check_same_dim(mu, nu)?;
        let (x, y) = (mu.points(), nu.points());
        Ok(Self(Matrix::from_fn(x.len(), y.len(), |i, j| sq_dist(&x[i], &y[j]))))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub matrix: Matrix,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    /// `<cost, matrix>` for the cost the plan was computed against.
    pub cost: f64,
}

impl TransportPlan {
    /// Largest absolute deviation of the row and column sums from the marginals.
    pub fn marginal_violation(&self) -> f64 {
        let r = self
            .matrix
            .row_sums()
            .iter()
            .zip(&self.row_marginal)
            .fold(0.0_f64, |acc, (s, w)| acc.max((s - w).abs()));
        self.matrix
            .col_sums()
            .iter()
            .zip(&self.col_marginal)
            .fold(r, |acc, (s, w)| acc.max((s - w).abs()))
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.matrix.as_slice().iter().all(|&p| p >= 0.0) && self.marginal_violation() <= tol
    }
}

/// Exact 2-Wasserstein distance and an optimal plan.
pub fn w2_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, TransportPlan)> {
    let cost = CostMatrix::squared_euclidean(mu, nu)?;
    let sol = solve_transport(mu.weights(), nu.weights(), cost.matrix())?;
    let plan = TransportPlan {
        matrix: sol.flow,
        row_marginal: mu.weights().to_vec(),
        col_marginal: nu.weights().to_vec(),
        cost: sol.cost,
    };
    Ok((sol.cost.max(0.0).sqrt(), plan))
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub plan: TransportPlan,
    pub status: SinkhornStatus,
    pub iterations: usize,
    pub marginal_error: f64,
    pub used_log_domain: bool,
}

/// Entropic OT between `mu` and `nu` with regularization `epsilon` (KL against
/// the uniform product `1 ⊗ 1`). On `MaxIterExceeded` the last iterate is
/// returned with the status set.
pub fn sinkhorn(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornResult> {
    let c = cost.matrix();
    if c.shape() != (mu.len(), nu.len()) {
        return Err(Error::ShapeMismatch(format!(
            "cost is {:?}, measures have {} and {} atoms",
            c.shape(),
            mu.len(),
            nu.len()
        )));
    }
    // zero-mass atoms carry no plan mass; solve on the positive part
    let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu.weights()[j] > 0.0).collect();
    let a: Vec<f64> = rows.iter().map(|&i| mu.weights()[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| nu.weights()[j]).collect();
    let sub = Matrix::from_fn(rows.len(), cols.len(), |i, j| c[(rows[i], cols[j])]);
    let sol = sinkhorn_potentials(&a, &b, &sub, SinkhornOptions { epsilon, tol, max_iter }, None)?;
    let mut matrix = Matrix::zeros(mu.len(), nu.len());
    for (ii, &i) in rows.iter().enumerate() {
        for (jj, &j) in cols.iter().enumerate() {
            matrix[(i, j)] = sol.plan[(ii, jj)];
        }
    }
    let plan_cost = matrix.dot(c);
    Ok(SinkhornResult {
        plan: TransportPlan {
            matrix,
            row_marginal: mu.weights().to_vec(),
            col_marginal: nu.weights().to_vec(),
            cost: plan_cost,
        },
        status: sol.status,
        iterations: sol.iterations,
        marginal_error: sol.marginal_error,
        used_log_domain: sol.used_log_domain,
    })
}
