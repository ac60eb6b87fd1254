//! Backward projection of `mu` onto the set of measures dominated by `nu` in
//! convex order.
//!
//! The projection moves each atom `x_i` to a convex combination
//! `sum_j A_ij y_j` of the target atoms, where the row-stochastic matrix `A`
//! must also push `mu` onto `nu` (`sum_i mu_i A_ij = nu_j`). The squared
//! distance is the convex quadratic
//!
//! ```text
//! J(A) = sum_i mu_i |sum_j A_ij y_j - x_i|^2
//! ```
//!
//! minimized by Frank-Wolfe. In coupling coordinates `pi_ij = mu_i A_ij` the
//! feasible set is the transportation polytope, so every linear subproblem is an
//! optimal transport problem.

mod frank_wolfe;

pub use frank_wolfe::project_backward;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::measure::{check_same_dim, DiscreteMeasure};
use crate::transport::{dual_lower_bound, round_to_marginals, sinkhorn_potentials, SinkhornOptions, TransportSimplex};
use rayon::prelude::*;
use serde::Serialize;

/// Work size above which row loops run on the rayon pool.
pub(crate) const PAR_THRESHOLD: usize = 1 << 14;

const SINKHORN_TOL: f64 = 1e-9;
const SINKHORN_MAX_ITER: usize = 100;

/// Row-stochastic `n x m` matrix with column constraint `mu^T A = nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricMatrix(Matrix);

impl BarycentricMatrix {
    /// Wraps `matrix` without checking feasibility; see [`Self::feasibility_error`].
    pub fn new(matrix: Matrix) -> Self {
        Self(matrix)
    }

    pub fn checked(matrix: Matrix, mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: f64) -> Result<Self> {
        let a = Self(matrix);
        let err = a.feasibility_error(mu, nu)?;
        if err > tol {
            return Err(Error::InvalidConfig(format!("barycentric matrix violates its constraints by {err:e}")));
        }
        Ok(a)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Largest violation among negativity, row sums and the weighted column sums.
    pub fn feasibility_error(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
        check_shape(&self.0, mu, nu)?;
        let a = &self.0;
        let mut err = a.as_slice().iter().fold(0.0_f64, |acc, &v| acc.max(-v));
        for s in a.row_sums() {
            err = err.max((s - 1.0).abs());
        }
        let mut col = vec![0.0; a.cols()];
        for (i, &w) in mu.weights().iter().enumerate() {
            for (c, v) in col.iter_mut().zip(a.row(i)) {
                *c += w * v;
            }
        }
        for (c, t) in col.iter().zip(nu.weights()) {
            err = err.max((c - t).abs());
        }
        Ok(err)
    }

    /// Images `Phi(x_i) = sum_j A_ij y_j`.
    pub fn images(&self, nu: &DiscreteMeasure) -> Vec<Vec<f64>> {
        apply(&self.0, nu.points())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Lp,
    Entropic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Oracle {
    ExactLp,
    /// Sinkhorn with `eps_k = max(eps0 * decay^k, min_eps)`. `eps0 = None` picks a
    /// tenth of the mean absolute linearized cost at the first iterate.
    Entropic { eps0: Option<f64>, decay: f64, min_eps: f64 },
}

impl Oracle {
    pub fn entropic() -> Self {
        Oracle::Entropic { eps0: None, decay: 0.7, min_eps: 1e-6 }
    }

    pub fn kind(&self) -> OracleKind {
        match self {
            Oracle::ExactLp => OracleKind::Lp,
            Oracle::Entropic { .. } => OracleKind::Entropic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearch {
    /// Exact minimization of the quadratic along the search direction.
    ClosedForm,
    /// The classical `2 / (k + 2)` schedule.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub oracle: Oracle,
    pub max_iter: usize,
    /// Stop once the duality gap is at most this. `None` means
    /// `1e-7 * (1 + J(A_0))`.
    pub gap_tol: Option<f64>,
    pub line_search: LineSearch,
    /// Pairwise steps: move weight from the worst vertex in the current convex
    /// combination to the oracle vertex instead of shrinking toward it. Plain
    /// Frank-Wolfe zigzags near faces of the polytope; this does not. Only used
    /// with the exact oracle and closed-form line search.
    pub pairwise_steps: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            oracle: Oracle::ExactLp,
            max_iter: 1000,
            gap_tol: None,
            line_search: LineSearch::ClosedForm,
            pairwise_steps: true,
        }
    }
}

impl SolverConfig {
    pub fn entropic() -> Self {
        Self { oracle: Oracle::entropic(), max_iter: 100, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.gap_tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("gap tolerance must be positive, got {t}")));
            }
        }
        if let Oracle::Entropic { eps0, decay, min_eps } = self.oracle {
            if !(min_eps > 0.0 && min_eps.is_finite()) {
                return Err(Error::InvalidConfig(format!("minimum epsilon must be positive, got {min_eps}")));
            }
            if !(decay > 0.0 && decay < 1.0) {
                return Err(Error::InvalidConfig(format!("epsilon decay must lie in (0, 1), got {decay}")));
            }
            if let Some(e) = eps0 {
                if !(e > min_eps && e.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "initial epsilon {e} must exceed the minimum epsilon {min_eps}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    /// `J(A_k)`.
    pub objective: f64,
    /// Duality gap at `A_k`. For the entropic oracle this is the certified gap
    /// against a dual lower bound of the exact linear subproblem.
    pub gap: f64,
    /// Step taken from `A_k` (0 on the last record).
    pub step: f64,
    pub oracle: OracleKind,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionResult {
    #[serde(skip)]
    pub barycentric: BarycentricMatrix,
    pub distance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceRecord>,
    pub projected: DiscreteMeasure,
}

impl ProjectionResult {
    pub fn final_gap(&self) -> f64 {
        self.trace.last().map_or(f64::INFINITY, |r| r.gap)
    }
}

fn check_shape(a: &Matrix, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    check_same_dim(mu, nu)?;
    if a.shape() != (mu.len(), nu.len()) {
        return Err(Error::ShapeMismatch(format!(
            "matrix is {:?} but the measures have {} and {} atoms",
            a.shape(),
            mu.len(),
            nu.len()
        )));
    }
    Ok(())
}

/// `A Y` with rows of `Y` given as points.
pub(crate) fn apply(a: &Matrix, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = y.first().map_or(0, Vec::len);
    let row = |i: usize| {
        let mut acc = vec![0.0; d];
        for (aij, yj) in a.row(i).iter().zip(y) {
            if *aij != 0.0 {
                for (o, v) in acc.iter_mut().zip(yj) {
                    *o += aij * v;
                }
            }
        }
        acc
    };
    if a.rows() * a.cols() >= PAR_THRESHOLD {
        (0..a.rows()).into_par_iter().map(row).collect()
    } else {
        (0..a.rows()).map(row).collect()
    }
}

/// `sum_i w_i |p_i - x_i|^2`.
pub(crate) fn weighted_sq_residual(p: &[Vec<f64>], x: &[Vec<f64>], w: &[f64]) -> f64 {
    p.iter()
        .zip(x)
        .zip(w)
        .map(|((pi, xi), wi)| wi * pi.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

/// Linearized cost `C_ij = 2 <p_i - x_i, y_j>`; the gradient is `diag(w) C`.
pub(crate) fn linear_cost(p: &[Vec<f64>], x: &[Vec<f64>], y: &[Vec<f64>]) -> Matrix {
    let (n, m) = (p.len(), y.len());
    let mut c = Matrix::zeros(n, m);
    let fill = |(i, out): (usize, &mut [f64])| {
        let r: Vec<f64> = p[i].iter().zip(&x[i]).map(|(a, b)| 2.0 * (a - b)).collect();
        for (o, yj) in out.iter_mut().zip(y) {
            *o = r.iter().zip(yj).map(|(a, b)| a * b).sum();
        }
    };
    if n * m >= PAR_THRESHOLD {
        c.as_mut_slice().par_chunks_mut(m.max(1)).enumerate().for_each(fill);
    } else {
        c.as_mut_slice().chunks_mut(m.max(1)).enumerate().for_each(fill);
    }
    c
}

pub fn objective(a: &Matrix, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    check_shape(a, mu, nu)?;
    Ok(weighted_sq_residual(&apply(a, nu.points()), mu.points(), mu.weights()))
}

/// `G_ij = 2 mu_i <(AY)_i - x_i, y_j>`.
pub fn gradient(a: &Matrix, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Matrix> {
    check_shape(a, mu, nu)?;
    let mut g = linear_cost(&apply(a, nu.points()), mu.points(), nu.points());
    for (i, &w) in mu.weights().iter().enumerate() {
        g.row_mut(i).iter_mut().for_each(|v| *v *= w);
    }
    Ok(g)
}

/// Output of one linear-subproblem solve, in barycentric coordinates.
pub(crate) struct OracleStep {
    pub s: Matrix,
    /// Lower bound on `min_S <G, S>` over the feasible set (exact for the LP oracle).
    pub lower_bound: f64,
    pub epsilon: Option<f64>,
    /// Sparse vertex `(flat index, value)` when the oracle returns a vertex.
    pub vertex: Option<Vec<(usize, f64)>>,
}

/// Stateful oracle that warm-starts each solve from the previous one.
pub(crate) struct OracleState<'a> {
    oracle: Oracle,
    w: &'a [f64],
    b: &'a [f64],
    simplex: Option<TransportSimplex>,
    eps0: Option<f64>,
    potentials: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'a> OracleState<'a> {
    /// `w` and `b` must be strictly positive.
    pub fn new(oracle: Oracle, w: &'a [f64], b: &'a [f64]) -> Result<Self> {
        let simplex = match oracle {
            Oracle::ExactLp => Some(TransportSimplex::new(w, b)?),
            Oracle::Entropic { .. } => None,
        };
        let eps0 = match oracle {
            Oracle::Entropic { eps0, .. } => eps0,
            Oracle::ExactLp => None,
        };
        Ok(Self { oracle, w, b, simplex, eps0, potentials: None })
    }

    pub fn epsilon(&mut self, cost: &Matrix, k: usize) -> Option<f64> {
        let Oracle::Entropic { decay, min_eps, .. } = self.oracle else {
            return None;
        };
        let eps0 = *self.eps0.get_or_insert_with(|| {
            let len = cost.as_slice().len().max(1) as f64;
            let scale = 0.1 * cost.as_slice().iter().map(|c| c.abs()).sum::<f64>() / len;
            if scale > min_eps {
                scale
            } else {
                min_eps
            }
        });
        Some((eps0 * decay.powi(k.min(i32::MAX as usize) as i32)).max(min_eps))
    }

    /// Solves `min <C, pi>` over couplings of `(w, b)` (or its entropic relaxation)
    /// and returns the minimizer in barycentric coordinates `S = pi / w`.
    pub fn solve(&mut self, cost: &Matrix, k: usize) -> Result<OracleStep> {
        let (n, m) = cost.shape();
        let epsilon = self.epsilon(cost, k);
        match epsilon {
            None => {
                let simplex = self.simplex.as_mut().expect("exact oracle keeps a simplex");
                let sol = simplex.solve(cost)?;
                log::trace!("exact oracle: {} pivots", sol.pivots);
                let mut s = sol.flow;
                let mut vertex = Vec::new();
                for i in 0..n {
                    let wi = self.w[i];
                    for (j, v) in s.row_mut(i).iter_mut().enumerate() {
                        // roundoff flows would give one vertex several supports
                        if *v <= 1e-15 {
                            *v = 0.0;
                        } else {
                            *v /= wi;
                            vertex.push((i * m + j, *v));
                        }
                    }
                }
                Ok(OracleStep { s, lower_bound: sol.cost, epsilon, vertex: Some(vertex) })
            }
            Some(eps) => {
                let opts = SinkhornOptions { epsilon: eps, tol: SINKHORN_TOL, max_iter: SINKHORN_MAX_ITER };
                let warm = self.potentials.as_ref().map(|(f, g)| (f.as_slice(), g.as_slice()));
                let sol = sinkhorn_potentials(self.w, self.b, cost, opts, warm)?;
                log::debug!(
                    "entropic oracle: eps {eps:e}, {} sinkhorn iterations, {:?}, log domain: {}",
                    sol.iterations,
                    sol.status,
                    sol.used_log_domain
                );
                let lower_bound = dual_lower_bound(cost, self.w, self.b, &sol.f);
                let mut s = round_to_marginals(&sol.plan, self.w, self.b);
                for i in 0..n {
                    let wi = self.w[i];
                    s.row_mut(i).iter_mut().for_each(|v| *v /= wi);
                }
                self.potentials = Some((sol.f, sol.g));
                Ok(OracleStep { s, lower_bound, epsilon, vertex: None })
            }
        }
    }
}

/// Minimizer of `<G, S>` over barycentric matrices (exact LP) or of its
/// entropic relaxation at `eps_k`.
pub fn fw_oracle(
    g: &Matrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
    k: usize,
) -> Result<BarycentricMatrix> {
    check_shape(g, mu, nu)?;
    cfg.validate()?;
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if let Some(i) = mu.weights().iter().position(|&w| w <= 0.0) {
        return Err(Error::ZeroWeightAtom(i));
    }
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu.weights()[j] > 0.0).collect();
    let b: Vec<f64> = cols.iter().map(|&j| nu.weights()[j]).collect();
    let cost = Matrix::from_fn(mu.len(), cols.len(), |i, jj| g[(i, cols[jj])] / mu.weights()[i]);
    let mut state = OracleState::new(cfg.oracle, mu.weights(), &b)?;
    let step = state.solve(&cost, k)?;
    let mut s = Matrix::zeros(mu.len(), nu.len());
    for i in 0..mu.len() {
        for (jj, &j) in cols.iter().enumerate() {
            s[(i, j)] = step.s[(i, jj)];
        }
    }
    Ok(BarycentricMatrix(s))
}

pub fn projection_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cfg: &SolverConfig) -> Result<f64> {
    Ok(project_backward(mu, nu, cfg)?.distance)
}

#[cfg(test)]
mod tests;
