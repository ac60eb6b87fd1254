//! Reference procedures for convex order that do not go through the projection
//! solver: a martingale-coupling feasibility LP, a grid LP for the forward
//! projection in one dimension, and a random search over convex test functions.

use crate::error::{Error, Result};
use crate::lp::LinearProgram;
use crate::matrix::Matrix;
use crate::measure::{check_same_dim, diameter, DiscreteMeasure, RngSeed};
use crate::transport::TransportPlan;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

/// Affine pieces per random convex test function.
const PIECES: usize = 5;
/// Integral gap below which a test function does not count as a violation.
const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct MartingaleCoupling {
    pub plan: TransportPlan,
    /// `max_i |sum_j pi_ij y_j - mu_i x_i|_inf / mu_i` over atoms with `mu_i > 0`.
    pub martingale_residual: f64,
}

#[derive(Debug, Clone)]
pub enum OrderVerdict {
    /// `mu` is dominated by `nu`; carries a martingale coupling.
    True(MartingaleCoupling),
    /// Minimal total L1 violation of the martingale constraints.
    False(f64),
}

impl OrderVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, OrderVerdict::True(_))
    }
}

/// Default decision tolerance `1e-7 * (1 + diameter)`.
pub fn default_tolerance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(1e-7 * (1.0 + diameter(mu, nu)?))
}

/// Decides `mu ⪯ nu` by minimizing the total violation of `E[Y | X] = X` over
/// couplings of `mu` and `nu`.
pub fn is_convex_order(mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: Option<f64>) -> Result<OrderVerdict> {
    check_same_dim(mu, nu)?;
    let tol = match tol {
        Some(t) => t,
        None => default_tolerance(mu, nu)?,
    };
    let (n, m, d) = (mu.len(), nu.len(), mu.dim());
    let (x, y) = (mu.points(), nu.points());
    let slack0 = n * m;
    // pi_ij, then (s+, s-) for each (i, k)
    let mut lp = LinearProgram::new(n * m + 2 * n * d);
    for v in slack0..lp.num_vars() {
        lp.set_cost(v, 1.0);
    }
    for i in 0..n {
        lp.add_eq((0..m).map(|j| (i * m + j, 1.0)).collect(), mu.weights()[i]);
    }
    for j in 0..m {
        lp.add_eq((0..n).map(|i| (i * m + j, 1.0)).collect(), nu.weights()[j]);
    }
    for i in 0..n {
        for k in 0..d {
            let mut terms: Vec<(usize, f64)> = (0..m).map(|j| (i * m + j, y[j][k])).collect();
            let s = slack0 + 2 * (i * d + k);
            terms.push((s, -1.0));
            terms.push((s + 1, 1.0));
            lp.add_eq(terms, mu.weights()[i] * x[i][k]);
        }
    }
    let sol = lp.solve()?;
    if sol.objective > tol {
        return Ok(OrderVerdict::False(sol.objective));
    }
    let matrix = Matrix::from_vec(n, m, sol.x[..n * m].to_vec());
    let mut residual = 0.0_f64;
    for i in 0..n {
        let w = mu.weights()[i];
        if w <= 0.0 {
            continue;
        }
        for k in 0..d {
            let s: f64 = (0..m).map(|j| matrix[(i, j)] * y[j][k]).sum();
            residual = residual.max((s - w * x[i][k]).abs() / w);
        }
    }
    let cost = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| matrix[(i, j)] * crate::matrix::sq_dist(&x[i], &y[j]))
        .sum();
    Ok(OrderVerdict::True(MartingaleCoupling {
        plan: TransportPlan {
            matrix,
            row_marginal: mu.weights().to_vec(),
            col_marginal: nu.weights().to_vec(),
            cost,
        },
        martingale_residual: residual,
    }))
}

/// Equally spaced points `lo, ..., hi` on the line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    points: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig(format!("grid needs lo < hi, got [{lo}, {hi}]")));
        }
        if points < 2 {
            return Err(Error::InvalidConfig(format!("grid needs at least 2 points, got {points}")));
        }
        Ok(Self { lo, hi, points })
    }

    /// Grid over the convex hull of both supports, widened by `margin` on each side.
    pub fn covering(mu: &DiscreteMeasure, nu: &DiscreteMeasure, points: usize, margin: f64) -> Result<Self> {
        let (lo, hi) = hull_1d(mu, nu)?;
        let (lo, hi) = if hi > lo { (lo - margin, hi + margin) } else { (lo - margin.max(0.5), hi + margin.max(0.5)) };
        Self::new(lo, hi, points)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn point(&self, g: usize) -> f64 {
        if g + 1 == self.points {
            self.hi
        } else {
            self.lo + g as f64 * self.spacing()
        }
    }
}

fn hull_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, f64)> {
    check_same_dim(mu, nu)?;
    if mu.dim() != 1 {
        return Err(Error::DimensionMismatch(format!("grid projection needs 1-D measures, got dimension {}", mu.dim())));
    }
    Ok(mu
        .points()
        .iter()
        .chain(nu.points())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[0]), h.max(p[0]))))
}

/// Grid-restricted forward projection in 1-D: the smallest `W2(eta, nu)` over
/// measures `eta` on the grid that dominate `mu`. Returns an upper bound on the
/// forward projection distance that tightens as the grid is refined.
///
/// The optimal `eta` generally puts mass outside the hull of both supports, so
/// a grid that stops at the hull can be far from tight. A margin of about the
/// hull width on each side (see [`Grid1D::covering`]) is enough in practice.
pub fn forward_projection_grid(mu: &DiscreteMeasure, nu: &DiscreteMeasure, grid: &Grid1D) -> Result<f64> {
    let (lo, hi) = hull_1d(mu, nu)?;
    if grid.lo > lo || grid.hi < hi {
        return Err(Error::GridTooCoarse { lo, hi });
    }
    let (n, m, gn) = (mu.len(), nu.len(), grid.len());
    let p0 = 0;
    let q0 = n * gn;
    let mut lp = LinearProgram::new(n * gn + gn * m);
    for g in 0..gn {
        for j in 0..m {
            let diff = grid.point(g) - nu.points()[j][0];
            lp.set_cost(q0 + g * m + j, diff * diff);
        }
    }
    for i in 0..n {
        lp.add_eq((0..gn).map(|g| (p0 + i * gn + g, 1.0)).collect(), mu.weights()[i]);
    }
    for j in 0..m {
        lp.add_eq((0..gn).map(|g| (q0 + g * m + j, 1.0)).collect(), nu.weights()[j]);
    }
    for g in 0..gn {
        let mut terms: Vec<(usize, f64)> = (0..n).map(|i| (p0 + i * gn + g, 1.0)).collect();
        terms.extend((0..m).map(|j| (q0 + g * m + j, -1.0)));
        lp.add_eq(terms, 0.0);
    }
    for i in 0..n {
        let terms = (0..gn).map(|g| (p0 + i * gn + g, grid.point(g))).collect();
        lp.add_eq(terms, mu.points()[i][0] * mu.weights()[i]);
    }
    Ok(lp.solve()?.objective.max(0.0).sqrt())
}

/// A convex function `phi(x) = max_k <a_k, x> + b_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseAffine {
    pub slopes: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
}

impl PiecewiseAffine {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.slopes
            .iter()
            .zip(&self.intercepts)
            .map(|(a, b)| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn integrate(&self, m: &DiscreteMeasure) -> f64 {
        m.iter().map(|(p, w)| w * self.eval(p)).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexCheckReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `int phi dmu - int phi dnu` seen.
    pub worst_gap: f64,
    /// The function attaining `worst_gap` when it is a violation.
    pub witness: Option<PiecewiseAffine>,
}

/// Random search for a convex `phi` with `int phi dmu > int phi dnu`, which
/// disproves `mu ⪯ nu`. Finding none is only evidence for the order.
pub fn convex_inequality_check(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    trials: usize,
    seed: RngSeed,
) -> Result<ConvexCheckReport> {
    check_same_dim(mu, nu)?;
    let d = mu.dim();
    let mut rng = seed.rng();
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut report = ConvexCheckReport { trials, violations: 0, worst_gap: f64::NEG_INFINITY, witness: None };
    for _ in 0..trials {
        let slopes: Vec<Vec<f64>> = (0..PIECES).map(|_| (0..d).map(|_| normal()).collect()).collect();
        let intercepts: Vec<f64> = (0..PIECES).map(|_| normal()).collect();
        let phi = PiecewiseAffine { slopes, intercepts };
        check_function(&phi, mu, nu, &mut report);
    }
    Ok(report)
}

fn check_function(phi: &PiecewiseAffine, mu: &DiscreteMeasure, nu: &DiscreteMeasure, report: &mut ConvexCheckReport) {
    let gap = phi.integrate(mu) - phi.integrate(nu);
    let violation = gap > VIOLATION_TOL;
    if violation {
        report.violations += 1;
    }
    if gap > report.worst_gap {
        report.worst_gap = gap;
        report.witness = if violation { Some(phi.clone()) } else { None };
    }
}
