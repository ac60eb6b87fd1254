//! The two reference experiments: projection distance against sample size for
//! a uniform sample and its Gaussian convolution, and the Frank-Wolfe trace on a
//! pair of correlated Gaussians.

use crate::error::Result;
use crate::measure::{sample, DiscreteMeasure, Family, RngSeed};
use crate::projection::{project_backward, ProjectionResult, SolverConfig};
use rayon::prelude::*;
use serde::Serialize;

pub const FIG1_SIZES: [usize; 6] = [50, 100, 200, 400, 800, 1600];
pub const FIG1_REPLICATES: usize = 5;
pub const FIG3_SIZE: usize = 2000;
pub const FIG3_MAX_ITER: usize = 40;

/// `mu` uniform on the unit square, `nu` the same law convolved with `N(0, I)`;
/// population-level `mu ⪯ nu`.
pub fn uniform_pair(n: usize, seed: RngSeed) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let unit = Family::UniformBox { lo: 0.0, hi: 1.0, dim: 2 };
    let conv = Family::GaussianConvolution { base: Box::new(unit.clone()), cov: identity(2) };
    let mu = DiscreteMeasure::empirical(sample(&unit, n, seed.derive(0))?)?;
    let nu = DiscreteMeasure::empirical(sample(&conv, n, seed.derive(1))?)?;
    Ok((mu, nu))
}

/// `mu = N(0, [[2, -2], [-2, 3]])` and `nu = N((1, 1), [[3, -2], [-2, 4]])`. The
/// means differ, so `mu` is not dominated by `nu`.
pub fn gaussian_pair(n: usize, seed: RngSeed) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let mu = Family::Gaussian { mean: vec![0.0, 0.0], cov: vec![vec![2.0, -2.0], vec![-2.0, 3.0]] };
    let nu = Family::Gaussian { mean: vec![1.0, 1.0], cov: vec![vec![3.0, -2.0], vec![-2.0, 4.0]] };
    Ok((
        DiscreteMeasure::empirical(sample(&mu, n, seed.derive(0))?)?,
        DiscreteMeasure::empirical(sample(&nu, n, seed.derive(1))?)?,
    ))
}

pub(crate) fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig1Row {
    pub n: usize,
    pub seed: usize,
    pub statistic: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Seed of replicate `rep` at sample size `n`, derived from the master seed.
pub fn fig1_seed(master: RngSeed, n: usize, rep: usize) -> RngSeed {
    master.derive(n as u64).derive(rep as u64)
}

/// One row per `(n, replicate)`, in that order whatever order the cells finish in.
pub fn fig1(sizes: &[usize], replicates: usize, master: RngSeed, solver: &SolverConfig) -> Result<Vec<Fig1Row>> {
    let cells: Vec<(usize, usize)> = sizes.iter().flat_map(|&n| (0..replicates).map(move |r| (n, r))).collect();
    cells
        .par_iter()
        .map(|&(n, rep)| {
            let (mu, nu) = uniform_pair(n, fig1_seed(master, n, rep))?;
            let r = project_backward(&mu, &nu, solver)?;
            log::info!("fig1: n = {n}, replicate {rep}: statistic {:.5}", r.distance);
            Ok(Fig1Row { n, seed: rep, statistic: r.distance, iterations: r.iterations, converged: r.converged })
        })
        .collect()
}

/// The Gaussian-pair projection run from the barycenter start.
pub fn fig3(n: usize, master: RngSeed, solver: &SolverConfig) -> Result<ProjectionResult> {
    let (mu, nu) = gaussian_pair(n, master)?;
    project_backward(&mu, &nu, solver)
}

/// Median of a nonempty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
