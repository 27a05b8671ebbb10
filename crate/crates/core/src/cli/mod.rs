//! Command-line front end: `estimate`, `simulate` and `truth`.

pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::cohort::Cohort;
use crate::cox::CoxError;
use crate::matching::MatchMode;
use crate::pipeline::{analyze, Analysis, AnalysisConfig, PipelineError};
use crate::simulate::{
    generate_cohort, run_mc, true_att, with_threads, McSummary, SimConfig, SimError, TruthCurves,
    WALD_Z,
};

use config::{parse_cap, parse_scheme, read_config, RawOptions};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{source_name}:{line}: {message}")]
    Schema {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{model} model did not converge: {detail}")]
    CoxFailure { model: String, detail: String },
    #[error(transparent)]
    Budget(SimError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } => 2,
            CliError::CoxFailure { .. } => 3,
            CliError::Budget(_) => 4,
            _ => 1,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Cox { model, source } => match source {
                CoxError::MaxIterationsExceeded { .. } | CoxError::SingularInformation { .. } => {
                    CliError::CoxFailure {
                        model: model.to_string(),
                        detail: source.to_string(),
                    }
                }
                other => CliError::Other(format!("{model} model: {other}")),
            },
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::FailureBudgetExceeded { .. } => CliError::Budget(e),
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "matchsurv", version, about = "Matched, censoring-weighted survival curves for time-dependent treatment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate S1, S0 and their difference on a cohort CSV.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Monte-Carlo study on a preset scenario.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write the replication-0 cohort of the first scenario as CSV.
        #[arg(long)]
        cohort_out: Option<PathBuf>,
    },
    /// Ground-truth curves of a preset scenario.
    Truth {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// prognostic | propensity | double
    #[arg(long)]
    pub mode: Option<MatchMode>,
    #[arg(long)]
    pub xi_t: Option<f64>,
    #[arg(long)]
    pub xi_d: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub tau1: Option<f64>,
    /// Comma-separated evaluation times.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// null | strong | medium | negative | table1
    #[arg(long)]
    pub preset: Option<String>,
    /// Subjects per simulated cohort.
    #[arg(long)]
    pub n: Option<usize>,
    /// Counterfactual sample size for the ground truth.
    #[arg(long)]
    pub truth_m: Option<usize>,
    /// ipcw | unweighted
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<crate::weights::WeightScheme>,
    /// none | abs:<max> | quantile:<q>
    #[arg(long, value_parser = parse_cap)]
    pub cap: Option<crate::weights::WeightCap>,
}

impl CommonArgs {
    fn options(&self) -> Result<RawOptions, CliError> {
        let file = match &self.config {
            Some(p) => read_config(p)?,
            None => RawOptions::default(),
        };
        let flags = RawOptions {
            mode: self.mode,
            xi_t: self.xi_t,
            xi_d: self.xi_d,
            tau: self.tau,
            tau1: self.tau1,
            times: self.times.clone(),
            seed: self.seed,
            reps: self.reps,
            threads: self.threads,
            preset: self.preset.clone(),
            n: self.n,
            truth_m: self.truth_m,
            scheme: self.scheme,
            cap: self.cap,
            params: Default::default(),
        };
        Ok(file.overlay(flags))
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate { input, common } => {
            let opts = common.options()?;
            with_threads(opts.threads(), || estimate(&input, &common.out, &opts))
        }
        Command::Simulate { common, cohort_out } => {
            let opts = common.options()?;
            with_threads(opts.threads(), || {
                simulate(&common.out, &opts, cohort_out.as_deref())
            })
        }
        Command::Truth { common } => {
            let opts = common.options()?;
            with_threads(opts.threads(), || truth(&common.out, &opts))
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

#[derive(Serialize)]
struct FitSummary<'a> {
    model: &'a str,
    beta: &'a [f64],
    std_errors: Option<Vec<f64>>,
    iterations: usize,
    converged: bool,
    n_events: usize,
}

#[derive(Serialize)]
struct PointSummary {
    t: f64,
    s1: f64,
    s1_se: f64,
    s0: f64,
    s0_se: f64,
    delta: f64,
    delta_se: f64,
    delta_ci: [f64; 2],
}

#[derive(Serialize)]
struct EstimateSummary<'a> {
    config: &'a AnalysisConfig,
    n: usize,
    p: usize,
    treated: usize,
    eligible_treated: usize,
    matched: usize,
    unmatched_treated: &'a [i64],
    match_rate: f64,
    fits: Vec<FitSummary<'a>>,
    estimates: Vec<PointSummary>,
    warnings: &'a [String],
}

fn analysis_config(opts: &RawOptions) -> Result<AnalysisConfig, CliError> {
    let criterion = opts.criterion(MatchMode::Prognostic)?;
    let mut cfg = AnalysisConfig::new(criterion, opts.tau.unwrap_or(3.0), opts.tau1.unwrap_or(5.0));
    if let Some(s) = opts.scheme {
        cfg.scheme = s;
    }
    if let Some(c) = opts.cap {
        cfg.cap = c;
    }
    Ok(cfg)
}

pub fn run_estimate(cohort: &Cohort, opts: &RawOptions) -> Result<Analysis, CliError> {
    let cfg = analysis_config(opts)?;
    Ok(analyze(cohort, &cfg)?)
}

fn estimate(input: &Path, out: &Path, opts: &RawOptions) -> Result<(), CliError> {
    let cohort = io::read_cohort_file(input)?;
    let cfg = analysis_config(opts)?;
    let analysis = analyze(&cohort, &cfg)?;
    let times: Vec<f64> = opts.times().into_iter().filter(|t| *t <= cfg.tau1).collect();
    ensure_dir(out)?;
    io::write_curves(&out.join("curves.csv"), &analysis, &times)?;
    io::write_matches(&out.join("matches.csv"), &analysis)?;

    let mut estimates = Vec::new();
    println!(
        "{:>6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}   95% CI (delta)",
        "t", "S1", "se", "S0", "se", "delta", "se"
    );
    for &t in &times {
        let r = io::curve_row(&analysis, t)?;
        let ci = [r[5] - WALD_Z * r[6], r[5] + WALD_Z * r[6]];
        println!(
            "{:>6.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}   [{:.3}, {:.3}]",
            r[0], r[1], r[2], r[3], r[4], r[5], r[6], ci[0], ci[1]
        );
        estimates.push(PointSummary {
            t,
            s1: r[1],
            s1_se: r[2],
            s0: r[3],
            s0_se: r[4],
            delta: r[5],
            delta_se: r[6],
            delta_ci: ci,
        });
    }
    for w in &analysis.warnings {
        eprintln!("warning: {w}");
    }
    let fits = [
        &analysis.fits.treatment,
        &analysis.fits.prognostic,
        &analysis.fits.censoring,
    ]
    .into_iter()
    .map(|f| FitSummary {
        model: f.kind.name(),
        beta: &f.beta,
        std_errors: f.standard_errors(),
        iterations: f.iterations,
        converged: f.converged,
        n_events: f.n_events,
    })
    .collect();
    let summary = EstimateSummary {
        config: &cfg,
        n: cohort.len(),
        p: cohort.p(),
        treated: cohort.treated_count(),
        eligible_treated: analysis.matching.eligible_treated,
        matched: analysis.matching.pairs.len(),
        unmatched_treated: &analysis.matching.unmatched_treated,
        match_rate: analysis.matching.match_rate,
        fits,
        estimates,
        warnings: &analysis.warnings,
    };
    io::write_json(&out.join("summary.json"), &summary)
}

/// Scenarios selected by `--preset` (default `null`) with overrides applied.
pub fn sim_configs(opts: &RawOptions) -> Result<Vec<SimConfig>, CliError> {
    let preset = opts.preset.as_deref().unwrap_or("null");
    let mut cfgs = if preset == "table1" {
        SimConfig::table1()
    } else {
        vec![SimConfig::preset(preset)?]
    };
    for cfg in &mut cfgs {
        if opts.mode.is_some() || opts.xi_t.is_some() || opts.xi_d.is_some() {
            cfg.criterion = opts.criterion(cfg.criterion.mode)?;
        }
        if let Some(t) = opts.tau {
            cfg.tau = t;
        }
        if let Some(t) = opts.tau1 {
            cfg.tau1 = t;
        }
        if let Some(t) = &opts.times {
            cfg.times = t.clone();
        }
        if let Some(n) = opts.n {
            cfg.n = n;
        }
        if let Some(s) = opts.scheme {
            cfg.scheme = s;
        }
        cfg.seed = opts.seed();
        for (k, v) in &opts.params {
            cfg.params.set(k, *v);
        }
        cfg.validate()?;
    }
    Ok(cfgs)
}

#[derive(Serialize)]
struct SimSummary<'a> {
    reps: usize,
    truth_m: usize,
    scenarios: Vec<ScenarioSummary<'a>>,
}

#[derive(Serialize)]
struct ScenarioSummary<'a> {
    config: &'a SimConfig,
    truth_population: usize,
    replications: usize,
    failed: usize,
    match_rate: &'a crate::simulate::MatchRateSummary,
    skipped_jumps: usize,
}

fn compute_truths(cfgs: &[SimConfig], m: usize) -> Result<Vec<(String, TruthCurves)>, CliError> {
    cfgs.iter()
        .map(|c| Ok((c.name.clone(), true_att(c, &c.times, m)?)))
        .collect()
}

fn print_mc_table(summaries: &[McSummary]) {
    println!(
        "{:<28} {:>5} {:>6} {:>7} {:>7} {:>7} {:>7} {:>6}",
        "Setting", "t", "Q", "Est", "Bias", "ESD", "ASE", "CP%"
    );
    for s in summaries {
        for r in &s.rows {
            let esd = r.esd.map(|x| format!("{x:.3}")).unwrap_or_else(|| "NA".into());
            println!(
                "{:<28} {:>5.2} {:>6} {:>7.3} {:>7.3} {:>7} {:>7.3} {:>6.1}",
                r.setting,
                r.t,
                r.quantity.label(),
                r.est,
                r.bias,
                esd,
                r.ase,
                100.0 * r.cp
            );
        }
        println!(
            "{:<28} match rate {:.3} (min {:.3}, max {:.3}); {} failed",
            s.setting, s.match_rate.mean, s.match_rate.min, s.match_rate.max, s.failed
        );
    }
}

fn simulate(out: &Path, opts: &RawOptions, cohort_out: Option<&Path>) -> Result<(), CliError> {
    let cfgs = sim_configs(opts)?;
    let reps = opts.reps.unwrap_or(1000);
    let m = opts.truth_m();
    if let Some(path) = cohort_out {
        let (cohort, _) = generate_cohort(&cfgs[0], 0)?;
        io::write_cohort(path, &cohort)?;
    }
    let truths = compute_truths(&cfgs, m)?;
    let summaries = cfgs
        .iter()
        .zip(&truths)
        .map(|(c, (_, t))| run_mc(c, reps, t))
        .collect::<Result<Vec<_>, _>>()?;
    ensure_dir(out)?;
    io::write_mc_summary(&out.join("mc_summary.csv"), &summaries)?;
    io::write_truth(&out.join("truth.csv"), &truths)?;
    print_mc_table(&summaries);
    let scenarios = cfgs
        .iter()
        .zip(&summaries)
        .zip(&truths)
        .map(|((c, s), (_, t))| ScenarioSummary {
            config: c,
            truth_population: t.population,
            replications: s.reps,
            failed: s.failed,
            match_rate: &s.match_rate,
            skipped_jumps: s.skipped_jumps,
        })
        .collect();
    io::write_json(
        &out.join("summary.json"),
        &SimSummary {
            reps,
            truth_m: m,
            scenarios,
        },
    )
}

fn truth(out: &Path, opts: &RawOptions) -> Result<(), CliError> {
    let cfgs = sim_configs(opts)?;
    let truths = compute_truths(&cfgs, opts.truth_m())?;
    ensure_dir(out)?;
    io::write_truth(&out.join("truth.csv"), &truths)?;
    println!("{:<28} {:>5} {:>7} {:>7} {:>7}", "Setting", "t", "S1", "S0", "delta");
    for (name, t) in &truths {
        for i in 0..t.times.len() {
            println!(
                "{:<28} {:>5.2} {:>7.3} {:>7.3} {:>7.3}",
                name, t.times[i], t.s1[i], t.s0[i], t.delta[i]
            );
        }
    }
    Ok(())
}
