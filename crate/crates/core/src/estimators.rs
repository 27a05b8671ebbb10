//! Weighted Nelson-Aalen estimators of the post-treatment (`S1`) and
//! treatment-free (`S0`) survival curves on the time-since-treatment scale,
//! and their difference.
//!
//! At each distinct death time `u` on a side, the cumulative hazard jumps by
//! `sum_{dying} w(u) / sum_{at risk} w(u)`, where the numerator weight is the
//! dying contributor's own weight.

use serde::Serialize;
use thiserror::Error;

use crate::cohort::Cohort;
use crate::cox::CoxFit;
use crate::matching::MatchResult;
use crate::step::StepFunction;
use crate::weights::{control_processes, treated_processes, WeightCap, WeightProcess, WeightScheme};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("t = {t} lies outside the analysis window [0, {tau1}]")]
    OutsideWindow { t: f64, tau1: f64 },
    #[error("curves were estimated with different horizons or cohort sizes")]
    HorizonMismatch,
    #[error("expected a {expected:?} curve, got {found:?}")]
    WrongSide { expected: CurveSide, found: CurveSide },
    #[error("invalid horizons tau = {tau}, tau1 = {tau1}")]
    InvalidHorizon { tau: f64, tau1: f64 },
    #[error("weight cap {0} is invalid")]
    InvalidCap(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CurveSide {
    Treated,
    TreatmentFree,
    Delta,
}

/// Piecewise-constant, right-continuous variance `sigma^2(t)`; zero before the
/// first grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl VarianceCurve {
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&u| u <= t) {
            0 => 0.0,
            m => self.values[m - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
enum CurveBody {
    Hazard(StepFunction),
    Difference {
        treated: StepFunction,
        control: StepFunction,
    },
}

/// An estimated survival curve (or difference of curves) on `[0, tau1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub side: CurveSide,
    body: CurveBody,
    pub n: usize,
    pub tau: f64,
    pub tau1: f64,
    /// `sigma^2(t)`; the standard error is `sqrt(sigma^2(t) / n)`.
    pub variance: Option<VarianceCurve>,
    pub warning: Option<String>,
}

impl SurvivalCurve {
    fn check(&self, t: f64) -> Result<(), EstimateError> {
        if !(0.0..=self.tau1).contains(&t) {
            return Err(EstimateError::OutsideWindow { t, tau1: self.tau1 });
        }
        Ok(())
    }

    /// Cumulative hazard; `None` for a difference curve.
    pub fn cumhaz(&self) -> Option<&StepFunction> {
        match &self.body {
            CurveBody::Hazard(f) => Some(f),
            CurveBody::Difference { .. } => None,
        }
    }

    /// `S(t)`, or `S1(t) - S0(t)` for the difference curve.
    pub fn eval(&self, t: f64) -> Result<f64, EstimateError> {
        self.check(t)?;
        Ok(match &self.body {
            CurveBody::Hazard(f) => (-f.eval(t)).exp(),
            CurveBody::Difference { treated, control } => {
                (-treated.eval(t)).exp() - (-control.eval(t)).exp()
            }
        })
    }

    pub fn standard_error(&self, t: f64) -> Result<Option<f64>, EstimateError> {
        self.check(t)?;
        Ok(self
            .variance
            .as_ref()
            .map(|v| (v.eval(t) / self.n as f64).sqrt()))
    }

    /// Jump times within the window, for either body.
    pub fn jump_times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = match &self.body {
            CurveBody::Hazard(f) => f.jump_times().to_vec(),
            CurveBody::Difference { treated, control } => treated
                .jump_times()
                .iter()
                .chain(control.jump_times())
                .copied()
                .collect(),
        };
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// The weighted at-risk set at one death time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpDetail {
    pub time: f64,
    /// `(process index, weight)` for every process at risk.
    pub at_risk: Vec<(usize, f64)>,
    /// Process indices with an event at `time`.
    pub deaths: Vec<usize>,
    pub risk_sum: f64,
    pub increment: f64,
}

/// One side's estimate together with everything the variance needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SideEstimate {
    pub curve: SurvivalCurve,
    pub processes: Vec<WeightProcess>,
    pub jumps: Vec<JumpDetail>,
    /// Death times skipped because the weighted risk set summed to zero.
    pub skipped_jumps: usize,
    pub no_events: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimationSettings {
    pub tau: f64,
    pub tau1: f64,
    pub scheme: WeightScheme,
    pub cap: WeightCap,
}

impl EstimationSettings {
    pub fn new(tau: f64, tau1: f64) -> Self {
        Self {
            tau,
            tau1,
            scheme: WeightScheme::Ipcw,
            cap: WeightCap::None,
        }
    }

    fn validate(&self) -> Result<(), EstimateError> {
        if !(self.tau > 0.0 && self.tau1 > 0.0 && self.tau.is_finite() && self.tau1.is_finite()) {
            return Err(EstimateError::InvalidHorizon {
                tau: self.tau,
                tau1: self.tau1,
            });
        }
        match self.cap {
            WeightCap::Absolute(c) if !(c >= 1.0) => Err(EstimateError::InvalidCap(c)),
            WeightCap::Quantile(q) if !(q > 0.0 && q <= 1.0) => Err(EstimateError::InvalidCap(q)),
            _ => Ok(()),
        }
    }
}

fn quantile(mut values: Vec<f64>, q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    Some(values[rank - 1])
}

fn weighted_nelson_aalen(
    side: CurveSide,
    n: usize,
    processes: Vec<WeightProcess>,
    censor_fit: &CoxFit,
    treat_fit: &CoxFit,
    settings: &EstimationSettings,
) -> SideEstimate {
    let mut times: Vec<f64> = processes
        .iter()
        .filter(|p| p.event && p.exit > 0.0 && p.exit <= settings.tau1)
        .map(|p| p.exit)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut jumps: Vec<JumpDetail> = times
        .iter()
        .map(|&u| {
            let at_risk: Vec<(usize, f64)> = processes
                .iter()
                .enumerate()
                .filter(|(_, p)| p.at_risk(u))
                .map(|(j, p)| (j, p.weight(u, censor_fit, treat_fit)))
                .collect();
            let deaths = processes
                .iter()
                .enumerate()
                .filter(|(_, p)| p.is_event_at(u))
                .map(|(j, _)| j)
                .collect();
            JumpDetail {
                time: u,
                at_risk,
                deaths,
                risk_sum: 0.0,
                increment: 0.0,
            }
        })
        .collect();

    let cap = match settings.cap {
        WeightCap::None => None,
        WeightCap::Absolute(c) => Some(c),
        WeightCap::Quantile(q) => quantile(
            jumps
                .iter()
                .flat_map(|j| j.at_risk.iter().map(|(_, w)| *w))
                .collect(),
            q,
        ),
    };

    let mut skipped = 0;
    let mut kept = Vec::with_capacity(jumps.len());
    for mut jump in jumps.drain(..) {
        if let Some(c) = cap {
            for (_, w) in jump.at_risk.iter_mut() {
                *w = w.min(c);
            }
        }
        let risk_sum: f64 = jump.at_risk.iter().map(|(_, w)| w).sum();
        let numerator: f64 = jump
            .at_risk
            .iter()
            .filter(|(j, _)| jump.deaths.contains(j))
            .map(|(_, w)| w)
            .sum();
        if !(risk_sum > 0.0) {
            skipped += 1;
            continue;
        }
        jump.risk_sum = risk_sum;
        jump.increment = numerator / risk_sum;
        kept.push(jump);
    }

    let cumhaz = StepFunction::new(
        kept.iter().map(|j| j.time).collect(),
        kept.iter().map(|j| j.increment).collect(),
    )
    .expect("death times are sorted and distinct");
    let no_events = kept.is_empty();
    SideEstimate {
        curve: SurvivalCurve {
            side,
            body: CurveBody::Hazard(cumhaz),
            n,
            tau: settings.tau,
            tau1: settings.tau1,
            variance: None,
            warning: no_events.then(|| "no events on this side; curve is flat at 1".to_string()),
        },
        processes,
        jumps: kept,
        skipped_jumps: skipped,
        no_events,
    }
}

/// Post-treatment survival among matched treated subjects with `T_k <= tau`.
pub fn estimate_s1(
    cohort: &Cohort,
    matching: &MatchResult,
    censor_fit: &CoxFit,
    settings: &EstimationSettings,
) -> Result<SideEstimate, EstimateError> {
    settings.validate()?;
    let processes = treated_processes(cohort, matching, censor_fit, settings.tau, settings.scheme);
    // the treated side never reads a treatment hazard
    let unused = CoxFit::null(censor_fit.kind, censor_fit.p());
    Ok(weighted_nelson_aalen(
        CurveSide::Treated,
        cohort.len(),
        processes,
        censor_fit,
        &unused,
        settings,
    ))
}

/// Treatment-free survival among matched controls; a control serving several
/// treated subjects contributes once per matched set.
pub fn estimate_s0(
    cohort: &Cohort,
    matching: &MatchResult,
    censor_fit: &CoxFit,
    treat_fit: &CoxFit,
    settings: &EstimationSettings,
) -> Result<SideEstimate, EstimateError> {
    settings.validate()?;
    let processes = control_processes(
        cohort,
        matching,
        censor_fit,
        treat_fit,
        settings.tau,
        settings.scheme,
    );
    Ok(weighted_nelson_aalen(
        CurveSide::TreatmentFree,
        cohort.len(),
        processes,
        censor_fit,
        treat_fit,
        settings,
    ))
}

/// `delta(t) = S1(t) - S0(t)`.
pub fn estimate_delta(
    s1: &SurvivalCurve,
    s0: &SurvivalCurve,
) -> Result<SurvivalCurve, EstimateError> {
    if s1.side == CurveSide::Delta {
        return Err(EstimateError::WrongSide {
            expected: CurveSide::Treated,
            found: s1.side,
        });
    }
    if s0.side == CurveSide::Delta {
        return Err(EstimateError::WrongSide {
            expected: CurveSide::TreatmentFree,
            found: s0.side,
        });
    }
    if s1.tau != s0.tau || s1.tau1 != s0.tau1 || s1.n != s0.n {
        return Err(EstimateError::HorizonMismatch);
    }
    let treated = s1.cumhaz().expect("hazard body").clone();
    let control = s0.cumhaz().expect("hazard body").clone();
    Ok(SurvivalCurve {
        side: CurveSide::Delta,
        body: CurveBody::Difference { treated, control },
        n: s1.n,
        tau: s1.tau,
        tau1: s1.tau1,
        variance: None,
        warning: None,
    })
}
