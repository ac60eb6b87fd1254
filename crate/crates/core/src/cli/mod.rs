//! Command-line front end of the `cvxorder` binary.
//!
//! Exit codes: 0 when the test accepts (and for every other successful command),
//! 3 when it rejects, 2 for invalid input (bad flags, unreadable or malformed
//! files, incompatible measures) and 1 for failures during computation.

pub mod experiments;

use crate::error::Error;
use crate::hypothesis::{test_measures, Decision, Regime, SCHEMA};
use crate::measure::{diameter, read_csv, sample, write_csv, DiscreteMeasure, Family, RngSeed};
use crate::projection::{project_backward, Oracle, ProjectionResult, SolverConfig, TraceRecord};
use experiments::identity;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_ACCEPT: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_REJECT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cvxorder", version, about = "Two-sample tests of convex order via Wasserstein projections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic dataset and write it as a measure CSV.
    Gen(GenArgs),
    /// Test H0: mu is dominated by nu in convex order.
    Test(TestArgs),
    /// Project mu backward onto the measures dominated by nu.
    Project(ProjectArgs),
    /// Reproduce a reference experiment as tidy CSV.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyName {
    /// Uniform on [lo, hi]^d.
    UnifBox,
    /// Normal with the given mean and covariance (default standard normal).
    Gaussian,
    /// Uniform on [lo, hi]^d plus N(0, cov) noise (default identity covariance).
    UnifGaussConv,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub family: FamilyName,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub lo: f64,
    #[arg(long, default_value_t = 1.0)]
    pub hi: f64,
    /// Comma-separated mean, e.g. "1,1".
    #[arg(long)]
    pub mean: Option<String>,
    /// Covariance rows separated by ';', entries by ',', e.g. "3,-2;-2,4".
    #[arg(long)]
    pub cov: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleName {
    Lp,
    Entropic,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = OracleName::Lp)]
    pub oracle: OracleName,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Frank-Wolfe gap tolerance; default 1e-7 * (1 + J(A_0)).
    #[arg(long)]
    pub gap_tol: Option<f64>,
    /// Initial entropic regularization; default a tenth of the mean linearized cost.
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    pub eps_decay: f64,
}

impl SolverArgs {
    pub fn config(&self) -> Result<SolverConfig, Error> {
        let mut cfg = match self.oracle {
            OracleName::Lp => SolverConfig::default(),
            OracleName::Entropic => {
                let mut c = SolverConfig::entropic();
                if let Oracle::Entropic { ref mut eps0, ref mut decay, .. } = c.oracle {
                    *eps0 = self.eps0;
                    *decay = self.eps_decay;
                }
                c
            }
        };
        if self.oracle == OracleName::Lp && self.eps0.is_some() {
            return Err(Error::InvalidConfig("--eps0 only applies to the entropic oracle".into()));
        }
        if let Some(k) = self.max_iter {
            cfg.max_iter = k;
        }
        cfg.gap_tol = self.gap_tol;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeName {
    LogSobolev,
    Bounded,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[arg(long)]
    pub mu: PathBuf,
    #[arg(long)]
    pub nu: PathBuf,
    /// Report JSON path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum)]
    pub regime: RegimeName,
    /// Log-Sobolev constant (required for --regime log-sobolev).
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Support diameter bound; the observed diameter when omitted.
    #[arg(long)]
    pub diameter: Option<f64>,
    #[arg(long, default_value_t = 8.0)]
    pub k1: f64,
    #[arg(long, default_value_t = 8.0)]
    pub k2: f64,
    /// The unspecified constant C in C2(k) = C^(k/2).
    #[arg(long, default_value_t = 1.0)]
    pub c_const: f64,
    /// Reject when the statistic is at least this, instead of the formula t(alpha).
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

impl TestArgs {
    pub fn regime(&self) -> Result<Regime, Error> {
        let r = match self.regime {
            RegimeName::LogSobolev => Regime::LogSobolev {
                kappa: self.kappa.ok_or_else(|| Error::InvalidRegime("--regime log-sobolev needs --kappa".into()))?,
            },
            RegimeName::Bounded => {
                Regime::BoundedSupport { diameter: self.diameter, k1: self.k1, k2: self.k2, c: self.c_const }
            }
        };
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub mu: PathBuf,
    #[arg(long)]
    pub nu: PathBuf,
    /// Output directory for result.json, projected.csv and trace.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    Fig1DistanceVsN,
    Fig3GaussianFw,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub name: ExperimentName,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Sample sizes for fig1 (comma-separated) or the single size for fig3.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Replicates per sample size (fig1).
    #[arg(long, default_value_t = experiments::FIG1_REPLICATES)]
    pub replicates: usize,
    #[arg(long, value_enum, default_value_t = OracleName::Entropic)]
    pub oracle: OracleName,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub gap_tol: Option<f64>,
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    pub eps_decay: f64,
}

impl ExperimentArgs {
    fn solver(&self) -> SolverArgs {
        SolverArgs {
            oracle: self.oracle,
            max_iter: self.max_iter,
            gap_tol: self.gap_tol,
            eps0: self.eps0,
            eps_decay: self.eps_decay,
        }
    }
}

/// An error tagged with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

fn invalid(error: Error) -> Failure {
    Failure { code: EXIT_INVALID, error }
}

fn failed(error: Error) -> Failure {
    Failure { code: EXIT_ERROR, error }
}

/// Runs a parsed command and returns its exit code.
pub fn run(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(|_| EXIT_ACCEPT),
        Command::Test(a) => cmd_test(&a),
        Command::Project(a) => cmd_project(&a).map(|_| EXIT_ACCEPT),
        Command::Experiment(a) => cmd_experiment(&a).map(|_| EXIT_ACCEPT),
    }
}

/// Parses `std::env::args`, runs, and reports errors on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_ACCEPT };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

fn parse_vector(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{t}': {e}"))))
        .collect()
}

fn parse_matrix(s: &str) -> Result<Vec<Vec<f64>>, Error> {
    s.split(';').map(parse_vector).collect()
}

pub fn family_from_args(a: &GenArgs) -> Result<Family, Error> {
    let cov = a.cov.as_deref().map(parse_matrix).transpose()?;
    let unit = Family::UniformBox { lo: a.lo, hi: a.hi, dim: a.d };
    Ok(match a.family {
        FamilyName::UnifBox => unit,
        FamilyName::Gaussian => {
            let mean = match &a.mean {
                Some(s) => parse_vector(s)?,
                None => vec![0.0; a.d],
            };
            let cov = cov.unwrap_or_else(|| identity(mean.len()));
            Family::Gaussian { mean, cov }
        }
        FamilyName::UnifGaussConv => {
            Family::GaussianConvolution { base: Box::new(unit), cov: cov.unwrap_or_else(|| identity(a.d)) }
        }
    })
}

fn cmd_gen(a: &GenArgs) -> Result<(), Failure> {
    let family = family_from_args(a).map_err(invalid)?;
    let m = sample(&family, a.n, RngSeed(a.seed)).and_then(DiscreteMeasure::empirical).map_err(invalid)?;
    write_csv(&a.out, &m).map_err(failed)?;
    let diam = diameter(&m, &m).map_err(failed)?;
    println!("n = {}, d = {}, barycenter = {:?}, diameter = {diam:.6}", m.len(), m.dim(), m.barycenter());
    Ok(())
}

fn load_pair(mu: &Path, nu: &Path) -> Result<(DiscreteMeasure, DiscreteMeasure), Failure> {
    let load = |p: &Path| read_csv(p).map_err(|e| invalid(Error::Parse(format!("{}: {e}", p.display()))));
    let (a, b) = (load(mu)?, load(nu)?);
    if a.dim() != b.dim() {
        return Err(invalid(Error::DimensionMismatch(format!("mu has dimension {}, nu has {}", a.dim(), b.dim()))));
    }
    Ok((a, b))
}

fn cmd_test(a: &TestArgs) -> Result<i32, Failure> {
    let regime = a.regime().map_err(invalid)?;
    let solver = a.solver.config().map_err(invalid)?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(invalid(Error::InvalidAlpha(a.alpha)));
    }
    if let Some(t) = a.threshold {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid(Error::InvalidConfig(format!("--threshold must be finite and nonnegative, got {t}"))));
        }
    }
    let (mu, nu) = load_pair(&a.mu, &a.nu)?;
    let mut report = test_measures(&mu, &nu, &regime, a.alpha, &solver).map_err(|e| match e {
        Error::ZeroWeightAtom(_) | Error::InvalidRegime(_) | Error::InvalidAlpha(_) => invalid(e),
        e => failed(e),
    })?;
    if let Some(t) = a.threshold {
        report = report.with_threshold(t).map_err(invalid)?;
    }
    let json = serde_json::to_string_pretty(&report).map_err(|e| failed(e.into()))?;
    match &a.out {
        Some(p) => fs::write(p, json + "\n").map_err(|e| failed(e.into()))?,
        None => println!("{json}"),
    }
    eprintln!(
        "statistic {:.6}, t(alpha) {:.6}: {:?}",
        report.statistic, report.t_alpha, report.decision
    );
    Ok(match report.decision {
        Decision::Accept => EXIT_ACCEPT,
        Decision::Reject => EXIT_REJECT,
    })
}

/// `ProjectionResult` as JSON with the schema tag.
pub fn projection_json(r: &ProjectionResult) -> Result<String, Error> {
    let mut v = serde_json::to_value(r)?;
    if let Some(obj) = v.as_object_mut() {
        obj.insert("schema".into(), SCHEMA.into());
    }
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

pub fn write_trace<W: Write>(w: W, trace: &[TraceRecord]) -> Result<(), Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["k", "objective", "gap", "step", "epsilon"])?;
    for r in trace {
        let eps = r.epsilon.map(|e| e.to_string()).unwrap_or_default();
        wtr.write_record([r.k.to_string(), r.objective.to_string(), r.gap.to_string(), r.step.to_string(), eps])?;
    }
    wtr.flush()?;
    Ok(())
}

fn cmd_project(a: &ProjectArgs) -> Result<(), Failure> {
    let solver = a.solver.config().map_err(invalid)?;
    let (mu, nu) = load_pair(&a.mu, &a.nu)?;
    let r = project_backward(&mu, &nu, &solver).map_err(|e| match e {
        Error::ZeroWeightAtom(_) => invalid(e),
        e => failed(e),
    })?;
    let write = || -> Result<(), Error> {
        fs::create_dir_all(&a.out)?;
        fs::write(a.out.join("result.json"), projection_json(&r)?)?;
        write_csv(a.out.join("projected.csv"), &r.projected)?;
        write_trace(fs::File::create(a.out.join("trace.csv"))?, &r.trace)?;
        Ok(())
    };
    write().map_err(failed)?;
    eprintln!("distance {:.6} after {} iterations (converged: {})", r.distance, r.iterations, r.converged);
    Ok(())
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<(), Failure> {
    let solver = a.solver().config().map_err(invalid)?;
    let seed = RngSeed(a.seed);
    match a.name {
        ExperimentName::Fig1DistanceVsN => {
            let sizes = a.n.clone().unwrap_or_else(|| experiments::FIG1_SIZES.to_vec());
            if sizes.is_empty() || sizes.contains(&0) || a.replicates == 0 {
                return Err(invalid(Error::InvalidConfig("fig1 needs positive sizes and replicates".into())));
            }
            let rows = experiments::fig1(&sizes, a.replicates, seed, &solver).map_err(failed)?;
            let write = || -> Result<(), Error> {
                let mut wtr = csv::Writer::from_path(&a.out)?;
                for row in &rows {
                    wtr.serialize(row)?;
                }
                wtr.flush()?;
                Ok(())
            };
            write().map_err(failed)?;
            for &n in &sizes {
                let stats: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.statistic).collect();
                eprintln!("n = {n}: median statistic {:.5}", experiments::median(&stats));
            }
        }
        ExperimentName::Fig3GaussianFw => {
            let n = match a.n.as_deref() {
                None => experiments::FIG3_SIZE,
                Some([n]) if *n > 0 => *n,
                Some(_) => return Err(invalid(Error::InvalidConfig("fig3 takes a single positive --n".into()))),
            };
            let solver = SolverConfig { max_iter: a.max_iter.unwrap_or(experiments::FIG3_MAX_ITER), ..solver };
            let r = experiments::fig3(n, seed, &solver).map_err(failed)?;
            let file = fs::File::create(&a.out).map_err(|e| failed(e.into()))?;
            write_trace(file, &r.trace).map_err(failed)?;
            eprintln!("final objective {:.6} after {} iterations", r.distance * r.distance, r.iterations);
        }
    }
    Ok(())
}
