//! Finitely supported probability measures.
//!
//! A [`DiscreteMeasure`] is a point cloud in `R^d` with simplex weights. Atoms at
//! coincident locations are kept as separate atoms so that index-based objects
//! (couplings, barycentric matrices) stay aligned with the input order.

mod csv_io;
mod sampling;

pub use csv_io::{read_csv, read_csv_from, write_csv, write_csv_to};
pub use sampling::{cholesky_psd, sample, smooth, Family, RngSeed};

use crate::error::{Error, Result};
use crate::matrix::sq_dist;
use serde::{Deserialize, Serialize};

/// Tolerance on `|sum(weights) - 1|` accepted by [`DiscreteMeasure::new`].
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Sums closer than this to one are stored as given.
const RENORMALIZE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates and builds a measure. Weights must be nonnegative and sum to one
    /// within [`WEIGHT_SUM_TOL`]; they are renormalized when the sum is off by more
    /// than `1e-12`.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::Empty);
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::DimensionMismatch("points must have dimension >= 1".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "point {i} has dimension {} (expected {d})",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("coordinate of point {i}")));
            }
        }
        for (index, &weight) in weights.iter().enumerate() {
            if !weight.is_finite() {
                return Err(Error::NonFinite(format!("weight {index}")));
            }
            if weight < 0.0 {
                return Err(Error::NegativeWeight { index, weight });
            }
        }
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return Err(Error::ZeroMass);
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightSum(total));
        }
        let weights = if (total - 1.0).abs() > RENORMALIZE_THRESHOLD {
            weights.into_iter().map(|w| w / total).collect()
        } else {
            weights
        };
        Ok(Self { points, weights })
    }

    /// Uniform weights on the given samples; duplicates are kept.
    pub fn empirical(samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty);
        }
        let w = 1.0 / samples.len() as f64;
        let n = samples.len();
        Self::new(samples, vec![w; n])
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        Self::new(vec![point], vec![1.0])
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.iter().map(Vec::as_slice).zip(self.weights.iter().copied())
    }

    pub fn barycenter(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (p, w) in self.iter() {
            for (o, x) in out.iter_mut().zip(p) {
                *o += w * x;
            }
        }
        out
    }

    /// `sum_i w_i * sum_k |x_ik|^5`, i.e. the fifth power of the 5-norm integrated
    /// against the measure.
    pub fn moment5(&self) -> f64 {
        self.iter()
            .map(|(p, w)| w * p.iter().map(|x| x.abs().powi(5)).sum::<f64>())
            .sum()
    }

    /// Pushforward under `x -> A x + b`. `a` is given row by row (`out_dim x dim`).
    pub fn affine_map(&self, a: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        let d = self.dim();
        if a.len() != b.len() || a.iter().any(|row| row.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "affine map needs a {}x{d} matrix and length-{} offset",
                b.len(),
                b.len()
            )));
        }
        let points = self
            .points
            .iter()
            .map(|x| {
                a.iter()
                    .zip(b)
                    .map(|(row, bk)| row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>() + bk)
                    .collect()
            })
            .collect();
        Self::new(points, self.weights.clone())
    }

    pub fn translate(&self, shift: &[f64]) -> Result<Self> {
        let d = self.dim();
        let eye: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        self.affine_map(&eye, shift)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        let d = self.dim();
        let a: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { c } else { 0.0 }).collect())
            .collect();
        self.affine_map(&a, &vec![0.0; d])
    }

    /// Same measure with zero-weight atoms removed.
    pub fn without_null_atoms(&self) -> Self {
        let (points, weights) = self
            .points
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(p, w)| (p.clone(), *w))
            .unzip();
        Self { points, weights }
    }
}

pub(crate) fn check_same_dim(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "measures live in R^{} and R^{}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Largest Euclidean distance between two atoms of `spt(a) ∪ spt(b)`.
pub fn diameter(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    check_same_dim(a, b)?;
    let all: Vec<&[f64]> = a.points().iter().chain(b.points()).map(Vec::as_slice).collect();
    let mut best = 0.0_f64;
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            best = best.max(sq_dist(all[i], all[j]));
        }
    }
    Ok(best.sqrt())
}
