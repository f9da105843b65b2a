//! Command-line front end: argument parsing and the four subcommands.
//!
//! Exit codes: 0 accept (or success), 1 reject, 2 usage or data error.

pub mod config;
pub mod io;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use hdmt::kme::{kernel_setting, kme_test, Kernel};
use hdmt::model::{CovMatrix, Mode, QuantileSource, Setting, TestConfig, TestReport};
use hdmt::parallel::with_threads;
use hdmt::simulate::{
    coverage_check, empirical_separation, mc_error_rates, Estimator, Population, Scenario, SeparationOptions,
};
use hdmt::statistics::OpNormOptions;
use hdmt::testing::{run_test, separation_bounds};

use config::{Experiment, ModeName, QuantileName, SettingName, SimConfig};
use io::{fmt_f64, fmt_opt, output, read_cov, read_sample};

pub const EXIT_ACCEPT: u8 = 0;
pub const EXIT_REJECT: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hdmt",
    version,
    about = "Tests whether high-dimensional means are within a radius eta"
)]
pub struct Cli {
    /// Worker threads for Monte Carlo trials.
    #[arg(long, env = "HDMT_THREADS", global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the test on CSV data; prints a JSON report.
    Test(TestArgs),
    /// Monte Carlo error rates or empirical separation over a TOML grid.
    Simulate(SimulateArgs),
    /// Closed-form separation bounds.
    Separation(SeparationArgs),
    /// Empirical coverage of the covariance-functional deviation bounds.
    Coverage(CoverageArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    Gaussian,
    Bounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    OpNorm,
    TraceSq,
}

fn parse_alpha(s: &str) -> std::result::Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("must lie in (0, 1), got {a}"))
    }
}

fn parse_nonneg(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a finite nonnegative number, got {v}"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v = parse_nonneg(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

fn parse_kernel(s: &str) -> std::result::Result<Kernel, String> {
    match s.split_once(':') {
        None if s == "linear" => Ok(Kernel::Linear),
        Some(("rbf", g)) => {
            let gamma = parse_positive(g)?;
            Kernel::rbf(gamma).map_err(|e| e.to_string())
        }
        _ => Err(format!("expected `linear` or `rbf:GAMMA`, got {s}")),
    }
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[arg(long, value_enum, default_value = "one")]
    pub mode: ModeArg,
    #[arg(long, default_value = "0.05", value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long, default_value = "0", value_parser = parse_nonneg)]
    pub eta: f64,
    /// Defaults to gaussian, or bounded with a kernel.
    #[arg(long, value_enum)]
    pub setting: Option<SettingArg>,
    /// Norm bound L of the bounded setting.
    #[arg(long, value_parser = parse_positive)]
    pub bound: Option<f64>,
    /// `linear` or `rbf:GAMMA`: run the kernel (MMD) test.
    #[arg(long, value_parser = parse_kernel)]
    pub kernel: Option<Kernel>,
    /// Estimate the quantiles from the data (the default).
    #[arg(long, conflicts_with = "oracle_cov")]
    pub plugin: bool,
    /// Known covariance(s) as square CSV matrices.
    #[arg(long, num_args = 1..=2, value_name = "FILE")]
    pub oracle_cov: Vec<PathBuf>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sample CSV files: x, and y for the two-sample test.
    #[arg(required = true, num_args = 1..=2)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML grid description.
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Overrides the trial count of the config.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeparationArgs {
    #[arg(long, value_enum, default_value = "one")]
    pub mode: ModeArg,
    #[arg(long, value_delimiter = ',', default_value = "0.05", value_parser = parse_alpha)]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0", value_parser = parse_nonneg)]
    pub eta: Vec<f64>,
    /// Sample sizes (the second sample has the same size).
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    /// `Σ = scale²·I_D`.
    #[arg(long, value_name = "D", conflicts_with = "oracle_cov")]
    pub isotropic: Option<usize>,
    #[arg(long, default_value = "1", value_parser = parse_nonneg)]
    pub scale: f64,
    #[arg(long, num_args = 1..=2, value_name = "FILE")]
    pub oracle_cov: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long, value_enum)]
    pub estimator: EstimatorArg,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub setting: SettingArg,
    /// Dimension; Gaussian data has `Σ = scale²·I`, bounded data is uniform
    /// on the sphere of radius `scale`.
    #[arg(long, value_name = "D")]
    pub isotropic: usize,
    #[arg(long, default_value = "1", value_parser = parse_nonneg)]
    pub scale: f64,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3", value_parser = parse_nonneg)]
    pub u: Vec<f64>,
    #[arg(long, default_value = "1000")]
    pub trials: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The JSON document printed by `test`.
#[derive(Debug, Serialize)]
pub struct JsonReport {
    pub u_stat: f64,
    pub threshold: f64,
    pub reject: bool,
    pub q1: f64,
    pub q2: f64,
    pub d_e_hat: Option<f64>,
    pub d_star_hat: Option<f64>,
    pub alpha: f64,
    pub eta: f64,
    pub setting: String,
    pub mode: String,
    pub warnings: Vec<String>,
}

impl JsonReport {
    fn new(r: TestReport, cfg: &TestConfig) -> Self {
        JsonReport {
            u_stat: r.u_stat,
            threshold: r.threshold,
            reject: r.reject,
            q1: r.q1_used,
            q2: r.q2_used,
            d_e_hat: r.d_e_hat,
            d_star_hat: r.d_star_hat,
            alpha: cfg.alpha(),
            eta: cfg.eta(),
            setting: cfg.setting().name().to_string(),
            mode: cfg.mode().name().to_string(),
            warnings: r.warnings,
        }
    }
}

fn mode_of(m: ModeArg) -> Mode {
    match m {
        ModeArg::One => Mode::OneSample,
        ModeArg::Two => Mode::TwoSample,
    }
}

fn setting_of(s: SettingArg, bound: Option<f64>) -> Result<Setting> {
    match (s, bound) {
        (SettingArg::Gaussian, _) => Ok(Setting::Gaussian),
        (SettingArg::Bounded, Some(l)) => Ok(Setting::bounded(l)?),
        (SettingArg::Bounded, None) => bail!("--setting bounded needs --bound"),
    }
}

fn oracle_source(files: &[PathBuf], mode: Mode) -> Result<QuantileSource> {
    let sigma = read_cov(&files[0])?;
    let s = match (files.get(1), mode) {
        (Some(f), Mode::TwoSample) => Some(read_cov(f)?),
        (None, Mode::TwoSample) => Some(sigma.clone()),
        (Some(_), Mode::OneSample) => bail!("--oracle-cov takes one file in one-sample mode"),
        (None, Mode::OneSample) => None,
    };
    Ok(QuantileSource::Oracle { sigma, s })
}

fn cmd_test(args: &TestArgs) -> Result<u8> {
    let mode = mode_of(args.mode);
    let expected = match mode {
        Mode::OneSample => 1,
        Mode::TwoSample => 2,
    };
    if args.inputs.len() != expected {
        bail!(
            "--mode {} takes {expected} input file(s), got {}",
            mode.name(),
            args.inputs.len()
        );
    }
    let x = read_sample(&args.inputs[0])?;
    let y = args.inputs.get(1).map(|p| read_sample(p)).transpose()?;
    let source = if args.oracle_cov.is_empty() {
        QuantileSource::PlugIn
    } else {
        oracle_source(&args.oracle_cov, mode)?
    };
    let (cfg, report) = match args.kernel {
        Some(k) => {
            let setting = match args.setting {
                Some(SettingArg::Gaussian) => bail!("--kernel requires the bounded setting"),
                _ => kernel_setting(&k, args.bound)?,
            };
            let cfg = TestConfig::new(args.eta, args.alpha, setting, mode, source)?;
            let r = kme_test(&cfg, &x, y.as_ref(), &k)?;
            (cfg, r)
        }
        None => {
            let setting = setting_of(args.setting.unwrap_or(SettingArg::Gaussian), args.bound)?;
            let cfg = TestConfig::new(args.eta, args.alpha, setting, mode, source)?;
            let r = run_test(&cfg, &x, y.as_ref())?;
            (cfg, r)
        }
    };
    let reject = report.reject;
    eprintln!(
        "{}: U = {:.5e}, threshold = {:.5e}",
        if reject { "reject" } else { "accept" },
        report.u_stat,
        report.threshold
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &JsonReport::new(report, &cfg))?;
    writeln!(out)?;
    Ok(if reject { EXIT_REJECT } else { EXIT_ACCEPT })
}

fn unit(d: usize, norm: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[0] = norm;
    v
}

fn population(cfg: &SimConfig, d: usize, mean: Vec<f64>) -> Result<Population> {
    Ok(match cfg.setting {
        SettingName::Gaussian => Population::gaussian(mean, DMatrix::identity(d, d) * cfg.scale)?,
        SettingName::Bounded => Population::sphere(mean, cfg.scale)?,
    })
}

fn sim_scenario(cfg: &SimConfig, d: usize, n: usize, signal: f64) -> Result<Scenario> {
    let x = population(cfg, d, unit(d, signal))?;
    Ok(match cfg.mode {
        ModeName::One => Scenario::one_sample(x, n)?,
        ModeName::Two => Scenario::two_sample(x, n, population(cfg, d, vec![0.0; d])?, n)?,
    })
}

fn sim_test_config(cfg: &SimConfig, d: usize, alpha: f64, eta: f64) -> Result<TestConfig> {
    let (mode, setting) = match (cfg.mode, cfg.setting) {
        (ModeName::One, s) => (Mode::OneSample, s),
        (ModeName::Two, s) => (Mode::TwoSample, s),
    };
    let setting = match setting {
        SettingName::Gaussian => Setting::Gaussian,
        SettingName::Bounded => Setting::bounded(cfg.bound.unwrap_or(f64::NAN))?,
    };
    let source = match cfg.quantiles {
        QuantileName::Plugin => QuantileSource::PlugIn,
        QuantileName::Oracle => {
            let var = match cfg.setting {
                SettingName::Gaussian => cfg.scale * cfg.scale,
                SettingName::Bounded => cfg.scale * cfg.scale / d as f64,
            };
            let sigma = CovMatrix::scaled_identity(d, var);
            let s = (mode == Mode::TwoSample).then(|| sigma.clone());
            QuantileSource::Oracle { sigma, s }
        }
    };
    Ok(TestConfig::new(eta, alpha, setting, mode, source)?)
}

/// Writes the simulate table. Shared by the binary and the tests.
pub fn simulate_table<W: Write>(cfg: &SimConfig, seed: u64, trials: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "d",
        "n",
        "alpha",
        "eta",
        "delta",
        "type1_hat",
        "type2_hat",
        "ci",
        "seed",
    ])?;
    for &d in &cfg.d {
        for &n in &cfg.n {
            for &alpha in &cfg.alpha {
                for &eta in &cfg.eta {
                    let tc = sim_test_config(cfg, d, alpha, eta)?;
                    let head = [d.to_string(), n.to_string(), fmt_f64(alpha), fmt_f64(eta)];
                    match &cfg.experiment {
                        Experiment::Rates { delta } => {
                            for &delta in delta {
                                let sc = sim_scenario(cfg, d, n, eta + delta)?;
                                let r = mc_error_rates(&tc, &sc, trials, seed)?;
                                let row = head.iter().cloned().chain([
                                    fmt_f64(delta),
                                    fmt_opt(r.type1_hat),
                                    fmt_opt(r.type2_hat),
                                    fmt_f64(r.ci_halfwidth),
                                    seed.to_string(),
                                ]);
                                w.write_record(row)?;
                            }
                        }
                        Experiment::Separation { power_target, tol } => {
                            let so = SeparationOptions::new(trials, *power_target, *tol, seed)?;
                            let est = empirical_separation(&tc, &sim_scenario(cfg, d, n, 0.0)?, &so)?;
                            for warning in &est.warnings {
                                eprintln!("warning: d={d} n={n}: {warning}");
                            }
                            let row = head.iter().cloned().chain([
                                fmt_f64(est.delta),
                                String::new(),
                                String::new(),
                                fmt_f64(0.5 * (est.hi - est.lo)),
                                seed.to_string(),
                            ]);
                            w.write_record(row)?;
                        }
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let text =
        std::fs::read_to_string(&args.config).with_context(|| format!("cannot read {}", args.config.display()))?;
    let cfg = SimConfig::parse(&text).with_context(|| args.config.display().to_string())?;
    let trials = args.trials.unwrap_or(cfg.trials);
    simulate_table(&cfg, args.seed, trials, output(args.out.as_deref())?)?;
    Ok(EXIT_ACCEPT)
}

fn cmd_separation(args: &SeparationArgs) -> Result<u8> {
    let mode = mode_of(args.mode);
    let (sigma, s) = match (args.isotropic, args.oracle_cov.as_slice()) {
        (Some(0), _) => bail!("--isotropic needs a positive dimension"),
        (Some(d), _) => {
            let c = CovMatrix::scaled_identity(d, args.scale * args.scale);
            (c.clone(), (mode == Mode::TwoSample).then_some(c))
        }
        (None, []) => bail!("supply --isotropic D or --oracle-cov FILE"),
        (None, files) => match oracle_source(files, mode)? {
            QuantileSource::Oracle { sigma, s } => (sigma, s),
            QuantileSource::PlugIn => unreachable!("oracle_source always returns known covariances"),
        },
    };
    let opts = OpNormOptions::default();
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record([
        "alpha",
        "eta",
        "n",
        "sigma",
        "d_e",
        "d_star",
        "delta_lower",
        "delta_guaranteed",
        "delta_upper",
    ])?;
    for &alpha in &args.alpha {
        for &eta in &args.eta {
            for &n in &args.n {
                let b = separation_bounds(&sigma, n, s.as_ref().map(|s| (s, n)), alpha, eta, &opts)?;
                w.write_record([
                    fmt_f64(alpha),
                    fmt_f64(eta),
                    n.to_string(),
                    fmt_f64(b.sigma),
                    fmt_f64(b.d_e),
                    fmt_f64(b.d_star),
                    fmt_opt(b.delta_lower),
                    fmt_f64(b.delta_guaranteed),
                    fmt_f64(b.delta_upper),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(EXIT_ACCEPT)
}

fn cmd_coverage(args: &CoverageArgs) -> Result<u8> {
    let d = args.isotropic;
    if d == 0 {
        bail!("--isotropic needs a positive dimension");
    }
    let pop = match args.setting {
        SettingArg::Gaussian => Population::gaussian(vec![0.0; d], DMatrix::identity(d, d) * args.scale)?,
        SettingArg::Bounded => Population::sphere(vec![0.0; d], args.scale)?,
    };
    let sc = Scenario::one_sample(pop, args.n)?;
    let (est, name) = match args.estimator {
        EstimatorArg::OpNorm => (Estimator::OpNormSqrt, "op-norm"),
        EstimatorArg::TraceSq => (Estimator::TraceSqSqrt, "trace-sq"),
    };
    let setting = match args.setting {
        SettingArg::Gaussian => "gaussian",
        SettingArg::Bounded => "bounded",
    };
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record([
        "estimator",
        "setting",
        "d",
        "n",
        "u",
        "trials",
        "coverage",
        "stated",
        "ci",
        "bound",
        "passes",
    ])?;
    let mut all = true;
    for &u in &args.u {
        let c = coverage_check(est, &sc, u, args.trials, args.seed)?;
        all &= c.passes;
        w.write_record([
            name.to_string(),
            setting.to_string(),
            d.to_string(),
            args.n.to_string(),
            fmt_f64(u),
            c.trials.to_string(),
            fmt_f64(c.coverage),
            fmt_f64(c.stated),
            fmt_f64(c.ci_halfwidth),
            fmt_f64(c.bound),
            c.passes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(if all { EXIT_ACCEPT } else { EXIT_REJECT })
}

pub fn execute(cli: &Cli) -> Result<u8> {
    with_threads(cli.threads, || match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Separation(a) => cmd_separation(a),
        Command::Coverage(a) => cmd_coverage(a),
    })
}

/// Parses `args` and runs the command, mapping every failure to exit code 2.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_ACCEPT };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
