//! Counterfactual cohort generator, ground-truth curves and the Monte-Carlo
//! harness producing Est / Bias / ESD / ASE / CP tables.
//!
//! Every subject draws `Z1, Zt, Zd ~ N(0, 1)` and four exponential times:
//!
//! | time | rate |
//! |------|------|
//! | treatment `T` | `l0T exp(b10 Z1 + b11 Zt)` |
//! | treatment-free death `D0` | `l0D exp(b20 Z1 + b21 Zd)` |
//! | post-treatment residual `R` | `l1D exp(b30 Z1 + b31 Zd + b32)` |
//! | censoring `C` | `l0C exp(b40 Z1)` |
//!
//! Replication `r` draws from its own ChaCha stream keyed by `(seed, r)`, so
//! results do not depend on execution order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cohort::{validate_cohort, Cohort, SubjectRecord};
use crate::matching::{MatchCriterion, MatchMode};
use crate::pipeline::{analyze, AnalysisConfig};
use crate::variance::CompensatedSum;
use crate::weights::WeightScheme;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("no simulated subject was treated before death and tau")]
    EmptyTreatedPopulation,
    #[error("{failed} of {reps} replications failed (budget 0.5%)")]
    FailureBudgetExceeded { failed: usize, reps: usize },
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
}

/// Rates and coefficients of the exponential generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorParams {
    pub lambda0_t: f64,
    pub lambda0_d: f64,
    pub lambda1_d: f64,
    pub lambda0_c: f64,
    pub beta10: f64,
    pub beta11: f64,
    pub beta20: f64,
    pub beta21: f64,
    pub beta30: f64,
    pub beta31: f64,
    pub beta32: f64,
    pub beta40: f64,
}

impl GeneratorParams {
    /// Shared settings of the matching-method comparison; `b11` and `b21` vary.
    pub fn first_set(beta11: f64, beta21: f64) -> Self {
        Self {
            lambda0_t: 0.5,
            lambda0_d: 0.5,
            lambda1_d: 0.2,
            lambda0_c: 0.2,
            beta10: 0.15,
            beta11,
            beta20: 0.25,
            beta21,
            beta30: 0.20,
            beta31: 0.15,
            beta32: -0.7,
            beta40: 0.2,
        }
    }

    fn second_set(
        lambda0_t: f64,
        lambda0_d: f64,
        lambda1_d: f64,
        beta20: f64,
        beta21: f64,
        beta30: f64,
        beta31: f64,
        beta32: f64,
    ) -> Self {
        Self {
            lambda0_t,
            lambda0_d,
            lambda1_d,
            lambda0_c: 0.2,
            beta10: 0.15,
            beta11: 0.5,
            beta20,
            beta21,
            beta30,
            beta31,
            beta32,
            beta40: 0.2,
        }
    }

    pub fn null_effect() -> Self {
        Self::second_set(0.7, 0.7, 0.7, 0.25, 0.50, 0.20, 0.50, 0.0)
    }

    pub fn strong_effect() -> Self {
        Self::second_set(0.5, 0.5, 0.5, 0.5, 1.0, 0.20, 0.15, -1.0)
    }

    pub fn medium_effect() -> Self {
        Self::second_set(0.5, 0.5, 0.7, 0.25, 0.5, 0.20, 0.15, -0.7)
    }

    pub fn negative_effect() -> Self {
        Self::second_set(0.5, 0.5, 0.7, 0.25, 0.5, 0.20, 0.15, 0.4)
    }

    fn validate(&self) -> Result<(), SimError> {
        let rates = [self.lambda0_t, self.lambda0_d, self.lambda1_d, self.lambda0_c];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(SimError::InvalidConfig("all baseline rates must be > 0".into()));
        }
        let betas = [
            self.beta10, self.beta11, self.beta20, self.beta21, self.beta30, self.beta31,
            self.beta32, self.beta40,
        ];
        if betas.iter().any(|b| !b.is_finite()) {
            return Err(SimError::InvalidConfig("coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Sets a parameter by its config-file key.
    pub fn set(&mut self, key: &str, value: f64) -> bool {
        let slot = match key {
            "lambda0_t" => &mut self.lambda0_t,
            "lambda0_d" => &mut self.lambda0_d,
            "lambda1_d" => &mut self.lambda1_d,
            "lambda0_c" => &mut self.lambda0_c,
            "beta10" => &mut self.beta10,
            "beta11" => &mut self.beta11,
            "beta20" => &mut self.beta20,
            "beta21" => &mut self.beta21,
            "beta30" => &mut self.beta30,
            "beta31" => &mut self.beta31,
            "beta32" => &mut self.beta32,
            "beta40" => &mut self.beta40,
            _ => return false,
        };
        *slot = value;
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub name: String,
    pub n: usize,
    pub params: GeneratorParams,
    pub tau: f64,
    pub tau1: f64,
    pub criterion: MatchCriterion,
    pub times: Vec<f64>,
    pub seed: u64,
    pub scheme: WeightScheme,
}

pub const DEFAULT_TIMES: [f64; 3] = [0.5, 1.0, 1.5];
pub const DEFAULT_TRUTH_M: usize = 1_000_000;
pub const DEFAULT_SEED: u64 = 20_240_601;

impl SimConfig {
    pub fn new(name: &str, params: GeneratorParams, criterion: MatchCriterion) -> Self {
        Self {
            name: name.to_string(),
            n: 1000,
            params,
            tau: 3.0,
            tau1: 5.0,
            criterion,
            times: DEFAULT_TIMES.to_vec(),
            seed: DEFAULT_SEED,
            scheme: WeightScheme::Ipcw,
        }
    }

    /// One of the four second-set scenarios, with prognostic matching at 1.1.
    pub fn preset(name: &str) -> Result<Self, SimError> {
        let params = match name {
            "null" => GeneratorParams::null_effect(),
            "strong" => GeneratorParams::strong_effect(),
            "medium" => GeneratorParams::medium_effect(),
            "negative" => GeneratorParams::negative_effect(),
            other => return Err(SimError::UnknownPreset(other.to_string())),
        };
        Ok(Self::new(name, params, MatchCriterion::prognostic(1.1).expect("valid caliper")))
    }

    /// A first-set configuration with the given matching mode (calipers 1.1).
    pub fn first_set(beta11: f64, beta21: f64, mode: MatchMode) -> Self {
        let criterion = match mode {
            MatchMode::Prognostic => MatchCriterion::prognostic(1.1),
            MatchMode::Propensity => MatchCriterion::propensity(1.1),
            MatchMode::Double => MatchCriterion::double(1.1, 1.1),
        }
        .expect("valid caliper");
        let name = format!("b11={beta11},b21={beta21},{}", mode.name());
        let mut cfg = Self::new(&name, GeneratorParams::first_set(beta11, beta21), criterion);
        cfg.times = vec![1.5];
        cfg
    }

    /// The full matching-method comparison: both coefficient ladders under
    /// all three modes.
    pub fn table1() -> Vec<Self> {
        let ladder = [0.0, 0.5, 1.0, 1.5];
        let mut out = Vec::new();
        for mode in [MatchMode::Prognostic, MatchMode::Propensity, MatchMode::Double] {
            for b in ladder {
                out.push(Self::first_set(b, 1.0, mode));
            }
        }
        for mode in [MatchMode::Prognostic, MatchMode::Propensity, MatchMode::Double] {
            for b in ladder {
                out.push(Self::first_set(1.0, b, mode));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        if self.n < 2 {
            return Err(SimError::InvalidConfig("n must be at least 2".into()));
        }
        if !(self.tau > 0.0 && self.tau1 > 0.0) {
            return Err(SimError::InvalidConfig("tau and tau1 must be > 0".into()));
        }
        if self.times.iter().any(|t| !(*t >= 0.0 && *t <= self.tau1)) {
            return Err(SimError::InvalidConfig("evaluation times must lie in [0, tau1]".into()));
        }
        Ok(())
    }

    pub fn analysis_config(&self) -> AnalysisConfig {
        let mut cfg = AnalysisConfig::new(self.criterion, self.tau, self.tau1);
        cfg.scheme = self.scheme;
        cfg
    }
}

/// Every potential time for one simulated subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CounterfactualRecord {
    pub z1: f64,
    pub zt: f64,
    pub zd: f64,
    pub treat: f64,
    pub death_untreated: f64,
    /// Residual lifetime after treatment; `D1 = T + R`.
    pub residual_treated: f64,
    pub censor: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of stream `stream` under base seed `seed`.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

const TRUTH_STREAM: u64 = u64::MAX;

/// Inverse-CDF exponential draw.
fn exponential<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

fn draw_subject<R: Rng>(rng: &mut R, p: &GeneratorParams) -> CounterfactualRecord {
    let z1: f64 = rng.sample(StandardNormal);
    let zt: f64 = rng.sample(StandardNormal);
    let zd: f64 = rng.sample(StandardNormal);
    let treat = exponential(rng, p.lambda0_t * (p.beta10 * z1 + p.beta11 * zt).exp());
    let death_untreated = exponential(rng, p.lambda0_d * (p.beta20 * z1 + p.beta21 * zd).exp());
    let residual_treated = exponential(
        rng,
        p.lambda1_d * (p.beta30 * z1 + p.beta31 * zd + p.beta32).exp(),
    );
    let censor = exponential(rng, p.lambda0_c * (p.beta40 * z1).exp());
    CounterfactualRecord {
        z1,
        zt,
        zd,
        treat,
        death_untreated,
        residual_treated,
        censor,
    }
}

fn observe(id: i64, cf: &CounterfactualRecord) -> SubjectRecord {
    let z = vec![cf.z1, cf.zt, cf.zd];
    if cf.treat < cf.death_untreated.min(cf.censor) {
        let death = cf.treat + cf.residual_treated;
        SubjectRecord::treated(id, death.min(cf.censor), death < cf.censor, cf.treat, z)
    } else {
        SubjectRecord::untreated(
            id,
            cf.death_untreated.min(cf.censor),
            cf.death_untreated < cf.censor,
            z,
        )
    }
}

/// Observed cohort plus counterfactuals for replication `rep`.
pub fn generate_cohort(
    cfg: &SimConfig,
    rep: u64,
) -> Result<(Cohort, Vec<CounterfactualRecord>), SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, rep));
    let cfs: Vec<CounterfactualRecord> =
        (0..cfg.n).map(|_| draw_subject(&mut rng, &cfg.params)).collect();
    let subjects = cfs
        .iter()
        .enumerate()
        .map(|(i, cf)| observe(i as i64 + 1, cf))
        .collect();
    let cohort = validate_cohort(subjects)
        .map_err(|e| SimError::InvalidConfig(format!("generator produced an invalid record: {e}")))?;
    Ok((cohort, cfs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthCurves {
    pub times: Vec<f64>,
    pub s1: Vec<f64>,
    pub s0: Vec<f64>,
    pub delta: Vec<f64>,
    pub s1_se: Vec<f64>,
    pub s0_se: Vec<f64>,
    pub delta_se: Vec<f64>,
    /// Size of the treated-and-identifiable population used.
    pub population: usize,
    pub m: usize,
}

impl TruthCurves {
    pub fn get(&self, q: Quantity, i: usize) -> f64 {
        match q {
            Quantity::S0 => self.s0[i],
            Quantity::S1 => self.s1[i],
            Quantity::Delta => self.delta[i],
        }
    }
}

const TRUTH_CHUNK: usize = 50_000;

/// Ground truth by averaging over `m` uncensored counterfactual subjects,
/// restricted to those treated before death with `T <= tau`.
pub fn true_att(cfg: &SimConfig, times: &[f64], m: usize) -> Result<TruthCurves, SimError> {
    cfg.params.validate()?;
    let chunks = m.div_ceil(TRUTH_CHUNK);
    let base = stream_seed(cfg.seed, TRUTH_STREAM);
    let k = times.len();
    // per chunk: (population, counts S1, counts S0, counts of both / either for delta)
    let partial: Vec<(usize, Vec<usize>, Vec<usize>, Vec<usize>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(base, c as u64));
            let size = TRUTH_CHUNK.min(m - c * TRUTH_CHUNK);
            let mut pop = 0;
            let mut a = vec![0; k];
            let mut b = vec![0; k];
            let mut both = vec![0; k];
            for _ in 0..size {
                let cf = draw_subject(&mut rng, &cfg.params);
                if !(cf.treat < cf.death_untreated && cf.treat <= cfg.tau) {
                    continue;
                }
                pop += 1;
                let gap0 = cf.death_untreated - cf.treat;
                for (j, &t) in times.iter().enumerate() {
                    let s1 = cf.residual_treated > t;
                    let s0 = gap0 > t;
                    a[j] += s1 as usize;
                    b[j] += s0 as usize;
                    both[j] += (s1 && s0) as usize;
                }
            }
            (pop, a, b, both)
        })
        .collect();
    let mut pop = 0;
    let mut a = vec![0usize; k];
    let mut b = vec![0usize; k];
    let mut both = vec![0usize; k];
    for (p, pa, pb, pboth) in partial {
        pop += p;
        for j in 0..k {
            a[j] += pa[j];
            b[j] += pb[j];
            both[j] += pboth[j];
        }
    }
    if pop == 0 {
        return Err(SimError::EmptyTreatedPopulation);
    }
    let np = pop as f64;
    let s1: Vec<f64> = a.iter().map(|&x| x as f64 / np).collect();
    let s0: Vec<f64> = b.iter().map(|&x| x as f64 / np).collect();
    let delta: Vec<f64> = s1.iter().zip(&s0).map(|(x, y)| x - y).collect();
    let se = |p: f64| (p * (1.0 - p) / np).sqrt();
    let delta_se = (0..k)
        .map(|j| {
            // var of I(R>t) - I(gap0>t)
            let e2 = (a[j] + b[j] - 2 * both[j]) as f64 / np;
            ((e2 - delta[j] * delta[j]).max(0.0) / np).sqrt()
        })
        .collect();
    Ok(TruthCurves {
        times: times.to_vec(),
        s1_se: s1.iter().map(|p| se(*p)).collect(),
        s0_se: s0.iter().map(|p| se(*p)).collect(),
        s1,
        s0,
        delta,
        delta_se,
        population: pop,
        m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Quantity {
    S0,
    S1,
    Delta,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::S0, Quantity::S1, Quantity::Delta];

    pub fn label(&self) -> &'static str {
        match self {
            Quantity::S0 => "S0",
            Quantity::S1 => "S1",
            Quantity::Delta => "delta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationOutput {
    pub rep: u64,
    /// `[quantity][time]` point estimates, quantities in `Quantity::ALL` order.
    pub estimates: [Vec<f64>; 3],
    pub std_errors: [Vec<f64>; 3],
    pub match_rate: f64,
    pub n_pairs: usize,
    pub skipped_jumps: usize,
}

/// Full pipeline on replication `rep`.
pub fn run_replication(cfg: &SimConfig, rep: u64) -> Result<ReplicationOutput, String> {
    let (cohort, _) = generate_cohort(cfg, rep).map_err(|e| e.to_string())?;
    let analysis = analyze(&cohort, &cfg.analysis_config()).map_err(|e| e.to_string())?;
    let curves = [analysis.s0(), analysis.s1(), &analysis.delta];
    let mut estimates: [Vec<f64>; 3] = Default::default();
    let mut std_errors: [Vec<f64>; 3] = Default::default();
    for (q, curve) in curves.iter().enumerate() {
        for &t in &cfg.times {
            estimates[q].push(curve.eval(t).map_err(|e| e.to_string())?);
            std_errors[q].push(
                curve
                    .standard_error(t)
                    .map_err(|e| e.to_string())?
                    .unwrap_or(f64::NAN),
            );
        }
    }
    Ok(ReplicationOutput {
        rep,
        estimates,
        std_errors,
        match_rate: analysis.matching.match_rate,
        n_pairs: analysis.matching.pairs.len(),
        skipped_jumps: analysis.treated.skipped_jumps + analysis.control.skipped_jumps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub setting: String,
    pub t: f64,
    pub quantity: Quantity,
    pub truth: f64,
    pub est: f64,
    pub bias: f64,
    /// `None` with fewer than two replications.
    pub esd: Option<f64>,
    pub ase: f64,
    /// Coverage of the nominal 95% Wald interval, as a fraction.
    pub cp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRateSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub setting: String,
    pub rows: Vec<SummaryRow>,
    pub reps: usize,
    pub failed: usize,
    pub match_rate: MatchRateSummary,
    pub skipped_jumps: usize,
}

impl McSummary {
    pub fn row(&self, q: Quantity, t: f64) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.quantity == q && r.t == t)
    }
}

pub const WALD_Z: f64 = 1.96;

/// Sample mean and (n-1) standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().copied().collect::<CompensatedSum>().value() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let ss = xs
        .iter()
        .map(|x| (x - mean).powi(2))
        .collect::<CompensatedSum>()
        .value();
    (mean, Some((ss / (n - 1.0)).sqrt()))
}

/// Aggregates replication outputs (in any order) against `truth`.
pub fn summarize(
    cfg: &SimConfig,
    mut outputs: Vec<ReplicationOutput>,
    failed: usize,
    truth: &TruthCurves,
) -> McSummary {
    outputs.sort_by_key(|o| o.rep);
    let mut rows = Vec::new();
    for (qi, q) in Quantity::ALL.iter().enumerate() {
        for (ti, &t) in cfg.times.iter().enumerate() {
            let truth_idx = truth
                .times
                .iter()
                .position(|&u| u == t)
                .expect("truth evaluated on the configured grid");
            let target = truth.get(*q, truth_idx);
            let est: Vec<f64> = outputs.iter().map(|o| o.estimates[qi][ti]).collect();
            let se: Vec<f64> = outputs.iter().map(|o| o.std_errors[qi][ti]).collect();
            let (mean, esd) = mean_sd(&est);
            let (ase, _) = mean_sd(&se);
            let covered = est
                .iter()
                .zip(&se)
                .filter(|(e, s)| (*e - target).abs() <= WALD_Z * *s)
                .count();
            rows.push(SummaryRow {
                setting: cfg.name.clone(),
                t,
                quantity: *q,
                truth: target,
                est: mean,
                bias: mean - target,
                esd,
                ase,
                cp: covered as f64 / est.len().max(1) as f64,
            });
        }
    }
    let rates: Vec<f64> = outputs.iter().map(|o| o.match_rate).collect();
    McSummary {
        setting: cfg.name.clone(),
        rows,
        reps: outputs.len(),
        failed,
        match_rate: MatchRateSummary {
            mean: mean_sd(&rates).0,
            min: rates.iter().cloned().fold(f64::INFINITY, f64::min),
            max: rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        },
        skipped_jumps: outputs.iter().map(|o| o.skipped_jumps).sum(),
    }
}

/// Runs `reps` replications on the current rayon pool and summarises them.
pub fn run_mc(cfg: &SimConfig, reps: usize, truth: &TruthCurves) -> Result<McSummary, SimError> {
    if reps == 0 {
        return Err(SimError::InvalidConfig("reps must be positive".into()));
    }
    cfg.validate()?;
    let results: Vec<Result<ReplicationOutput, String>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| run_replication(cfg, r))
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed as f64 > 0.005 * reps as f64 {
        return Err(SimError::FailureBudgetExceeded { failed, reps });
    }
    let outputs = results.into_iter().filter_map(Result::ok).collect();
    Ok(summarize(cfg, outputs, failed, truth))
}

/// Runs `f` on a dedicated pool with `threads` workers (0 = available parallelism).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}
