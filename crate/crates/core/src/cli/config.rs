//! Flat `key = value` configuration files and the merged run settings.

use std::collections::BTreeMap;
use std::path::Path;

use crate::matching::{MatchCriterion, MatchMode};
use crate::simulate::{DEFAULT_SEED, DEFAULT_TIMES, DEFAULT_TRUTH_M};
use crate::weights::{WeightCap, WeightScheme};

use super::CliError;

/// Options that may come from a config file or the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawOptions {
    pub mode: Option<MatchMode>,
    pub xi_t: Option<f64>,
    pub xi_d: Option<f64>,
    pub tau: Option<f64>,
    pub tau1: Option<f64>,
    pub times: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub threads: Option<usize>,
    pub preset: Option<String>,
    pub n: Option<usize>,
    pub truth_m: Option<usize>,
    pub scheme: Option<WeightScheme>,
    pub cap: Option<WeightCap>,
    /// Generator overrides such as `beta11 = 0.5`.
    pub params: BTreeMap<String, f64>,
}

const PARAM_KEYS: [&str; 12] = [
    "lambda0_t", "lambda0_d", "lambda1_d", "lambda0_c", "beta10", "beta11", "beta20", "beta21",
    "beta30", "beta31", "beta32", "beta40",
];

impl RawOptions {
    /// Fields set in `over` replace those in `self`.
    pub fn overlay(mut self, over: RawOptions) -> RawOptions {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f; } )* };
        }
        take!(mode, xi_t, xi_d, tau, tau1, times, seed, reps, threads, preset, n, truth_m, scheme, cap);
        self.params.extend(over.params);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn times(&self) -> Vec<f64> {
        self.times.clone().unwrap_or_else(|| DEFAULT_TIMES.to_vec())
    }

    pub fn truth_m(&self) -> usize {
        self.truth_m.unwrap_or(DEFAULT_TRUTH_M)
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or(0)
    }

    /// Criterion with 1.1 filled in for every caliper the mode requires.
    pub fn criterion(&self, default_mode: MatchMode) -> Result<MatchCriterion, CliError> {
        let mode = self.mode.unwrap_or(default_mode);
        let (need_t, need_d) = match mode {
            MatchMode::Prognostic => (false, true),
            MatchMode::Propensity => (true, false),
            MatchMode::Double => (true, true),
        };
        let xi_t = self.xi_t.or(need_t.then_some(1.1));
        let xi_d = self.xi_d.or(need_d.then_some(1.1));
        MatchCriterion::new(mode, xi_t, xi_d).map_err(|e| CliError::Usage(e.to_string()))
    }
}

pub fn parse_times(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad time '{x}'")))
        .collect()
}

pub fn parse_scheme(s: &str) -> Result<WeightScheme, String> {
    match s {
        "ipcw" => Ok(WeightScheme::Ipcw),
        "unweighted" => Ok(WeightScheme::Unweighted),
        _ => Err(format!("unknown weight scheme '{s}' (ipcw | unweighted)")),
    }
}

/// `none`, `abs:<max>` or `quantile:<q>`.
pub fn parse_cap(s: &str) -> Result<WeightCap, String> {
    if s == "none" {
        return Ok(WeightCap::None);
    }
    let bad = || format!("bad weight cap '{s}' (none | abs:<max> | quantile:<q>)");
    let (kind, value) = s.split_once(':').ok_or_else(bad)?;
    let v: f64 = value.parse().map_err(|_| bad())?;
    match kind {
        "abs" => Ok(WeightCap::Absolute(v)),
        "quantile" => Ok(WeightCap::Quantile(v)),
        _ => Err(bad()),
    }
}

fn set_key(opts: &mut RawOptions, key: &str, value: &str) -> Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
        v.parse().map_err(|_| format!("invalid value '{v}' for '{key}'"))
    }
    match key {
        "mode" => opts.mode = Some(value.parse()?),
        "xi_t" => opts.xi_t = Some(num(key, value)?),
        "xi_d" => opts.xi_d = Some(num(key, value)?),
        "tau" => opts.tau = Some(num(key, value)?),
        "tau1" => opts.tau1 = Some(num(key, value)?),
        "times" => opts.times = Some(parse_times(value)?),
        "seed" => opts.seed = Some(num(key, value)?),
        "reps" => opts.reps = Some(num(key, value)?),
        "threads" => opts.threads = Some(num(key, value)?),
        "preset" => opts.preset = Some(value.to_string()),
        "n" => opts.n = Some(num(key, value)?),
        "truth_m" => opts.truth_m = Some(num(key, value)?),
        "scheme" => opts.scheme = Some(parse_scheme(value)?),
        "cap" => opts.cap = Some(parse_cap(value)?),
        k if PARAM_KEYS.contains(&k) => {
            opts.params.insert(k.to_string(), num(key, value)?);
        }
        _ => return Err(format!("unknown key '{key}'")),
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<RawOptions, CliError> {
    let mut opts = RawOptions::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let schema = |message: String| CliError::Schema {
            source_name: "config".into(),
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| schema("expected 'key = value'".into()))?;
        set_key(&mut opts, key.trim(), value.trim()).map_err(schema)?;
    }
    Ok(opts)
}

pub fn read_config(path: &Path) -> Result<RawOptions, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Schema { line, message, .. } => CliError::Schema {
            source_name: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}
