//! The convex order test: reject `mu ⪯ nu` when the projection distance of the
//! empirical measures exceeds a critical value `t(alpha)`, plus the
//! non-asymptotic bounds that calibrate it.
//!
//! Two regimes are supported. Under a log-Sobolev inequality the bounds depend
//! on the fifth moments of the samples; under bounded support they depend on the
//! diameter and on moment orders `k1, k2 > 4`.

use crate::error::{Error, Result};
use crate::measure::{check_same_dim, diameter, DiscreteMeasure};
use crate::projection::{project_backward, OracleKind, SolverConfig};
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "cvxorder/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regime {
    /// Both measures satisfy a log-Sobolev inequality with constant `kappa`.
    LogSobolev { kappa: f64 },
    /// Supports of diameter at most `diameter`. `None` means the observed
    /// diameter of the pooled samples, which underestimates the true one.
    ///
    /// `c` is the constant in `C2(k) = c^(k/2)`; the underlying moment bound only
    /// asserts that some such constant exists, so 1.0 is a placeholder, not a
    /// derived value.
    BoundedSupport { diameter: Option<f64>, k1: f64, k2: f64, c: f64 },
}

impl Regime {
    pub fn bounded(k1: f64, k2: f64) -> Self {
        Regime::BoundedSupport { diameter: None, k1, k2, c: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidRegime(msg));
        match *self {
            Regime::LogSobolev { kappa } if !(kappa > 0.0 && kappa.is_finite()) => {
                bad(format!("kappa must be positive, got {kappa}"))
            }
            Regime::BoundedSupport { diameter: Some(d), .. } if !(d > 0.0 && d.is_finite()) => {
                bad(format!("diameter must be positive, got {d}"))
            }
            Regime::BoundedSupport { k1, k2, .. } if !(k1 > 4.0 && k2 > 4.0 && k1.is_finite() && k2.is_finite()) => {
                bad(format!("moment orders must exceed 4, got k1 = {k1}, k2 = {k2}"))
            }
            Regime::BoundedSupport { c, .. } if !(c > 0.0 && c.is_finite()) => bad(format!("c must be positive, got {c}")),
            _ => Ok(()),
        }
    }
}

/// Data-dependent inputs of the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub dim: usize,
    /// Plug-in fifth moments (see [`DiscreteMeasure::moment5`]).
    pub m5_mu: f64,
    pub m5_nu: f64,
    /// Observed diameter of the pooled supports.
    pub diameter: f64,
}

impl SampleStats {
    pub fn from_measures(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Self> {
        check_same_dim(mu, nu)?;
        Ok(Self { dim: mu.dim(), m5_mu: mu.moment5(), m5_nu: nu.moment5(), diameter: diameter(mu, nu)? })
    }

    fn check(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidRegime("dimension must be positive".into()));
        }
        let ok = |x: f64| x >= 0.0 && x.is_finite();
        if !(ok(self.m5_mu) && ok(self.m5_nu) && ok(self.diameter)) {
            return Err(Error::NonFinite("sample statistics".into()));
        }
        Ok(())
    }
}

/// The diameter the bounded-support formulas use, or an error for a log-Sobolev regime.
fn support_diameter(regime: &Regime, stats: &SampleStats) -> Result<f64> {
    match *regime {
        Regime::BoundedSupport { diameter, .. } => {
            let d = diameter.unwrap_or(stats.diameter);
            if d > 0.0 && d.is_finite() {
                Ok(d)
            } else {
                Err(Error::InvalidRegime(format!("support diameter must be positive, got {d}")))
            }
        }
        Regime::LogSobolev { .. } => Err(Error::InvalidRegime("no diameter in the log-Sobolev regime".into())),
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

fn check_sizes(n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::Empty);
    }
    Ok(())
}

fn indicator_d4(d: usize) -> f64 {
    if d == 4 {
        1.0
    } else {
        0.0
    }
}

pub fn c1(k: f64) -> f64 {
    3f64.powf(12.0 * k / (k - 4.0) + 1.0) * (1.0 / (3f64.powf(k / 2.0 - 2.0) - 1.0) + 3.0)
}

pub fn c2(k: f64, c: f64) -> f64 {
    c.powf(k / 2.0)
}

/// The sample-size term of `t(alpha)`, which is also the smallest `t` at which
/// the p-value bound is rigorous.
pub fn rate_term(regime: &Regime, stats: &SampleStats, n: usize, m: usize) -> Result<f64> {
    regime.validate()?;
    stats.check()?;
    check_sizes(n, m)?;
    let (lo, hi) = (n.min(m) as f64, n.max(m) as f64);
    let d = stats.dim;
    let term = match *regime {
        Regime::LogSobolev { .. } => {
            let m5 = stats.m5_mu.max(stats.m5_nu);
            80.0 * (d as f64).sqrt()
                * m5.powf(0.2)
                * (hi.ln().powf(2.0 * indicator_d4(d)) / lo).powf(1.0 / d.max(4) as f64)
        }
        Regime::BoundedSupport { k1, k2, c, .. } => {
            let diam = support_diameter(regime, stats)?;
            8f64.sqrt() * diam * c1(k1).max(c2(k1, c)).sqrt() / (n as f64).powf(1.0 / k1).min((m as f64).powf(1.0 / k2))
        }
    };
    if !term.is_finite() {
        return Err(Error::InvalidRegime(format!("rate term overflows ({term}); moment orders too close to 4?")));
    }
    Ok(term)
}

/// The concentration term of `t(alpha)`.
pub fn concentration_term(regime: &Regime, stats: &SampleStats, alpha: f64, n: usize, m: usize) -> Result<f64> {
    regime.validate()?;
    check_alpha(alpha)?;
    check_sizes(n, m)?;
    let lo = n.min(m) as f64;
    let log_term = (2.0 / alpha).ln();
    Ok(match *regime {
        Regime::LogSobolev { kappa } => (32.0 * kappa * log_term / lo).sqrt(),
        Regime::BoundedSupport { .. } => {
            let diam = support_diameter(regime, stats)?;
            (32.0 * diam.powi(4) * log_term / lo).powf(0.25)
        }
    })
}

/// Critical value `t(alpha)`: the larger of the rate and concentration terms.
pub fn critical_value(regime: &Regime, stats: &SampleStats, alpha: f64, n: usize, m: usize) -> Result<f64> {
    check_alpha(alpha)?;
    let rate = rate_term(regime, stats, n, m)?;
    Ok(rate.max(concentration_term(regime, stats, alpha, n, m)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PValueBound {
    /// Clamped to `[0, 1]`.
    pub bound: f64,
    /// Whether `t` clears the rate term; below it the bound is not rigorous.
    pub valid: bool,
}

/// Upper bound on `P(statistic >= t)` under the null hypothesis.
pub fn p_value_bound(regime: &Regime, stats: &SampleStats, t: f64, n: usize, m: usize) -> Result<PValueBound> {
    if !(t >= 0.0) {
        return Err(Error::InvalidConfig(format!("threshold must be nonnegative, got {t}")));
    }
    let rate = rate_term(regime, stats, n, m)?;
    let (nf, mf) = (n as f64, m as f64);
    let raw = match *regime {
        Regime::LogSobolev { kappa } => (-nf * t * t / (32.0 * kappa)).exp() + (-mf * t * t / (32.0 * kappa)).exp(),
        Regime::BoundedSupport { .. } => {
            let d4 = support_diameter(regime, stats)?.powi(4);
            let t4 = t.powi(4);
            (-nf * t4 / (32.0 * d4)).exp() + (-mf * t4 / (32.0 * d4)).exp()
        }
    };
    Ok(PValueBound { bound: raw.clamp(0.0, 1.0), valid: t >= rate })
}

/// Type II error bound under the strict alternative `W2(mu, P_nu) >= 2 t(alpha)`,
/// returned with `t(alpha)`. The bound is `alpha` itself.
pub fn type2_bound(regime: &Regime, stats: &SampleStats, alpha: f64, n: usize, m: usize) -> Result<(f64, f64)> {
    let t = critical_value(regime, stats, alpha, n, m)?;
    Ok((alpha, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateBound {
    /// Deviation of the empirical statistic from the population distance.
    pub epsilon: f64,
    /// Probability with which the deviation holds, clamped to `[0, 1]`.
    pub probability: f64,
}

/// Finite-sample deviation bound for the statistic around the population
/// projection distance.
pub fn rate_bound(regime: &Regime, stats: &SampleStats, n: usize, m: usize) -> Result<RateBound> {
    regime.validate()?;
    stats.check()?;
    check_sizes(n, m)?;
    let lo = n.min(m) as f64;
    let d = stats.dim;
    let (epsilon, probability) = match *regime {
        Regime::LogSobolev { kappa } => {
            let m5 = stats.m5_mu.max(stats.m5_nu).max(1.0);
            let exponent = (1.0 / d as f64).min(0.25);
            let eps = 42.0 * (d as f64).sqrt() * m5.powf(0.2) * lo.powf(-exponent) * lo.ln().powf(0.5 * indicator_d4(d));
            (eps, 1.0 - 2.0 * (-lo.sqrt() / (2.0 * kappa)).exp())
        }
        Regime::BoundedSupport { k1, k2, c, .. } => {
            let diam = support_diameter(regime, stats)?;
            let (kmax, kmin) = (k1.max(k2), k1.min(k2));
            let first = 3f64.powf(12.0 * kmax / (kmin - 4.0) + 1.0) * (1.0 / (3f64.powf(kmin / 2.0 - 2.0) - 1.0) + 3.0);
            let eps = 2.0 * diam * first.max(c.powf(kmax / 2.0)).sqrt() * lo.powf(-1.0 / kmax);
            (eps, 1.0 - 2.0 * (-2.0 * lo.sqrt() / diam.powi(4)).exp())
        }
    };
    if !epsilon.is_finite() {
        return Err(Error::InvalidRegime(format!("rate bound overflows ({epsilon})")));
    }
    Ok(RateBound { epsilon, probability: probability.clamp(0.0, 1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Reject,
    Accept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    /// `t_alpha` is the critical value from the regime's formulas.
    Formula,
    /// `t_alpha` was supplied by the caller.
    User,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub dim: usize,
    pub threshold_source: ThresholdSource,
    /// The formula critical value, kept when a user threshold replaces it.
    pub formula_t_alpha: f64,
    pub m5_mu: f64,
    pub m5_nu: f64,
    /// Diameter used by the bounded-support formulas, if any.
    pub diameter: Option<f64>,
    /// True when `diameter` is the observed one rather than user supplied.
    pub diameter_estimated: bool,
    pub oracle: OracleKind,
    pub converged: bool,
    pub iterations: usize,
    pub final_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub schema: &'static str,
    pub statistic: f64,
    pub t_alpha: f64,
    pub alpha: f64,
    pub decision: Decision,
    pub p_value_bound: f64,
    pub p_value_valid: bool,
    pub regime: Regime,
    pub n: usize,
    pub m: usize,
    /// Type II error bound under the strict alternative.
    pub type2_bound: f64,
    pub diagnostics: Diagnostics,
}

/// Runs the test of `H0: mu ⪯ nu` on two samples.
pub fn run_test(
    mu_samples: &[Vec<f64>],
    nu_samples: &[Vec<f64>],
    regime: &Regime,
    alpha: f64,
    solver: &SolverConfig,
) -> Result<TestReport> {
    check_alpha(alpha)?;
    regime.validate()?;
    let mu = DiscreteMeasure::empirical(mu_samples.to_vec())?;
    let nu = DiscreteMeasure::empirical(nu_samples.to_vec())?;
    test_measures(&mu, &nu, regime, alpha, solver)
}

/// [`run_test`] on measures that are already built; `n` and `m` are the atom
/// counts.
pub fn test_measures(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    regime: &Regime,
    alpha: f64,
    solver: &SolverConfig,
) -> Result<TestReport> {
    check_alpha(alpha)?;
    regime.validate()?;
    solver.validate()?;
    let stats = SampleStats::from_measures(mu, nu)?;
    let (n, m) = (mu.len(), nu.len());
    // fail on bad regime parameters before the solve
    critical_value(regime, &stats, alpha, n, m)?;

    let proj = project_backward(mu, nu, solver)?;
    let statistic = proj.distance;
    let (type2, t_alpha) = type2_bound(regime, &stats, alpha, n, m)?;
    let p = p_value_bound(regime, &stats, statistic, n, m)?;
    let decision = if statistic >= t_alpha { Decision::Reject } else { Decision::Accept };
    let (diameter, diameter_estimated) = match *regime {
        Regime::BoundedSupport { diameter: Some(d), .. } => (Some(d), false),
        Regime::BoundedSupport { diameter: None, .. } => (Some(stats.diameter), true),
        Regime::LogSobolev { .. } => (None, false),
    };
    Ok(TestReport {
        schema: SCHEMA,
        statistic,
        t_alpha,
        alpha,
        decision,
        p_value_bound: p.bound,
        p_value_valid: p.valid,
        regime: *regime,
        n,
        m,
        type2_bound: type2,
        diagnostics: Diagnostics {
            dim: stats.dim,
            threshold_source: ThresholdSource::Formula,
            formula_t_alpha: t_alpha,
            m5_mu: stats.m5_mu,
            m5_nu: stats.m5_nu,
            diameter,
            diameter_estimated,
            oracle: solver.oracle.kind(),
            converged: proj.converged,
            iterations: proj.iterations,
            final_gap: proj.final_gap(),
        },
    })
}

impl TestReport {
    /// Re-decides with a caller-chosen rejection threshold `t`. The type II bound
    /// `alpha` only covers thresholds up to the formula critical value; above it
    /// the report falls back to the trivial bound 1.
    pub fn with_threshold(mut self, t: f64) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidConfig(format!("threshold must be finite and nonnegative, got {t}")));
        }
        self.t_alpha = t;
        self.decision = if self.statistic >= t { Decision::Reject } else { Decision::Accept };
        self.type2_bound = if t <= self.diagnostics.formula_t_alpha { self.alpha } else { 1.0 };
        self.diagnostics.threshold_source = ThresholdSource::User;
        Ok(self)
    }
}

#[cfg(test)]
mod tests;
