use super::DiscreteMeasure;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Seed for every random stream in the crate. Equal seeds give bit-identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Deterministically derives an independent child seed (SplitMix64 finalizer).
    pub fn derive(self, stream: u64) -> RngSeed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15_u64.wrapping_mul(stream.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Family {
    /// Independent uniform coordinates on `[lo, hi)^dim`.
    UniformBox { lo: f64, hi: f64, dim: usize },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// A draw from `base` plus independent centered Gaussian noise with covariance `cov`.
    GaussianConvolution { base: Box<Family>, cov: Vec<Vec<f64>> },
}

impl Family {
    pub fn dim(&self) -> usize {
        match self {
            Family::UniformBox { dim, .. } => *dim,
            Family::Gaussian { mean, .. } => mean.len(),
            Family::GaussianConvolution { base, .. } => base.dim(),
        }
    }
}

enum Sampler {
    Uniform { lo: f64, hi: f64, dim: usize },
    Gaussian { mean: Vec<f64>, chol: Vec<Vec<f64>> },
    Convolution { base: Box<Sampler>, chol: Vec<Vec<f64>> },
}

impl Sampler {
    fn build(family: &Family) -> Result<Self> {
        match family {
            Family::UniformBox { lo, hi, dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidConfig("uniform box needs dim >= 1".into()));
                }
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::InvalidConfig(format!("uniform box needs lo < hi, got [{lo}, {hi}]")));
                }
                Ok(Sampler::Uniform { lo: *lo, hi: *hi, dim: *dim })
            }
            Family::Gaussian { mean, cov } => {
                if mean.is_empty() || cov.len() != mean.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "gaussian mean has length {} but covariance has {} rows",
                        mean.len(),
                        cov.len()
                    )));
                }
                Ok(Sampler::Gaussian { mean: mean.clone(), chol: cholesky_psd(cov)? })
            }
            Family::GaussianConvolution { base, cov } => {
                let base = Sampler::build(base)?;
                if cov.len() != base.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "noise covariance is {}x{} but base family has dimension {}",
                        cov.len(),
                        cov.len(),
                        base.dim()
                    )));
                }
                Ok(Sampler::Convolution { base: Box::new(base), chol: cholesky_psd(cov)? })
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Sampler::Uniform { dim, .. } => *dim,
            Sampler::Gaussian { mean, .. } => mean.len(),
            Sampler::Convolution { base, .. } => base.dim(),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Sampler::Uniform { lo, hi, dim } => (0..*dim).map(|_| rng.random_range(*lo..*hi)).collect(),
            Sampler::Gaussian { mean, chol } => {
                let mut x = correlated_normal(chol, rng);
                for (xi, m) in x.iter_mut().zip(mean) {
                    *xi += m;
                }
                x
            }
            Sampler::Convolution { base, chol } => {
                let mut x = base.draw(rng);
                for (xi, z) in x.iter_mut().zip(correlated_normal(chol, rng)) {
                    *xi += z;
                }
                x
            }
        }
    }
}

fn correlated_normal<R: Rng>(chol: &[Vec<f64>], rng: &mut R) -> Vec<f64> {
    let d = chol.len();
    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    (0..d)
        .map(|i| (0..=i).map(|k| chol[i][k] * z[k]).sum())
        .collect()
}

/// Draws `n` i.i.d. points from `family`.
pub fn sample(family: &Family, n: usize, seed: RngSeed) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Empty);
    }
    let sampler = Sampler::build(family)?;
    let mut rng = seed.rng();
    Ok((0..n).map(|_| sampler.draw(&mut rng)).collect())
}

/// Lower-triangular factor `L` with `L L^T = cov` for a symmetric positive
/// semidefinite matrix. Pivots below `1e-10` (relative to the largest diagonal
/// entry) are treated as zero; a pivot below `-1e-10` or an inconsistent zero
/// column means the matrix is not PSD.
pub fn cholesky_psd(cov: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = cov.len();
    if cov.iter().any(|r| r.len() != d) {
        return Err(Error::NonPsdCovariance("covariance must be square".into()));
    }
    let scale = (0..d).fold(1.0_f64, |acc, i| acc.max(cov[i][i].abs()));
    let tol = 1e-10 * scale;
    for i in 0..d {
        for j in 0..i {
            if (cov[i][j] - cov[j][i]).abs() > tol {
                return Err(Error::NonPsdCovariance(format!("entry ({i},{j}) is not symmetric")));
            }
            if !cov[i][j].is_finite() {
                return Err(Error::NonPsdCovariance("non-finite entry".into()));
            }
        }
    }
    let mut l = vec![vec![0.0; d]; d];
    for j in 0..d {
        let pivot = cov[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if pivot < -tol || !pivot.is_finite() {
            return Err(Error::NonPsdCovariance(format!("negative pivot {pivot:e} at {j}")));
        }
        if pivot <= tol {
            for i in j + 1..d {
                let resid = cov[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if resid.abs() > tol.sqrt() * scale.sqrt() {
                    return Err(Error::NonPsdCovariance(format!("zero pivot at {j} with coupling {resid:e}")));
                }
            }
            continue;
        }
        let ljj = pivot.sqrt();
        l[j][j] = ljj;
        for i in j + 1..d {
            let s = cov[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = s / ljj;
        }
    }
    Ok(l)
}

/// Monte-Carlo Gaussian smoothing: each atom `x_i` becomes `replicas` atoms
/// `x_i + sigma z` with weight `w_i / replicas`.
pub fn smooth(m: &DiscreteMeasure, sigma: f64, replicas: usize, seed: RngSeed) -> Result<DiscreteMeasure> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidSigma(sigma));
    }
    if replicas == 0 {
        return Err(Error::InvalidConfig("smoothing needs at least one replica".into()));
    }
    let mut rng = seed.rng();
    let mut points = Vec::with_capacity(m.len() * replicas);
    let mut weights = Vec::with_capacity(m.len() * replicas);
    for (x, w) in m.iter() {
        for _ in 0..replicas {
            points.push(
                x.iter()
                    .map(|xi| xi + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            weights.push(w / replicas as f64);
        }
    }
    DiscreteMeasure::new(points, weights)
}
