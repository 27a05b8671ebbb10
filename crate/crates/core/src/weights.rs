//! Inverse-probability-of-censoring weights on the time-since-treatment scale.
//!
//! For a matched treated subject `k` (with `T_k <= tau`):
//!
//! ```text
//! w1_k(t) = Y_k(T_k + t) * exp{ Lambda_kC(T_k + t) }
//! ```
//!
//! and for its matched control `i`:
//!
//! ```text
//! w0_{i:k}(t) = Y0_i(T_k + t) * exp{ Lambda_kC(T_k)
//!                                   + int_(T_k, T_k+t] dLambda_iC
//!                                   + int_(T_k, T_k+t] dLambda_iT }
//! ```
//!
//! The first summand of the control weight uses the treated subject's
//! covariates, so both members of a pair carry the same weight at `t = 0`.
//!
//! At-risk indicators are evaluated on the shifted scale: the treated subject
//! is at risk while `t <= U_k - T_k`, the control while `t <= U_i - T_k` and
//! `t < T_i - T_k`.

use serde::Serialize;
use thiserror::Error;

use crate::cohort::Cohort;
use crate::cox::{cumulative_hazard, increment_between, CoxError, CoxFit};
use crate::matching::{MatchResult, MatchedPair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("subject {id} is not treated")]
    NotTreated { id: i64 },
    #[error(transparent)]
    Cox(#[from] CoxError),
}

/// Optional truncation of weights. The default is no cap.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub enum WeightCap {
    #[default]
    None,
    /// Truncate at an absolute bound.
    Absolute(f64),
    /// Truncate at this quantile (in `(0, 1]`) of the on-support weights
    /// pooled over one side's death times.
    Quantile(f64),
}

/// Whether censoring and treatment hazards enter the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum WeightScheme {
    #[default]
    Ipcw,
    /// Weights reduce to their at-risk indicators.
    Unweighted,
}

/// `w1_hat` for treated subject `k` (cohort index) at shifted time `t`.
pub fn w1_hat(
    cohort: &Cohort,
    k: usize,
    t: f64,
    censor_fit: &CoxFit,
    matching: &MatchResult,
    tau: f64,
) -> Result<f64, WeightError> {
    let s = cohort.get(k);
    if !s.treated {
        return Err(WeightError::NotTreated { id: s.id });
    }
    if s.treat_time > tau || !matching.is_matched(k) || t > s.obs_time - s.treat_time {
        return Ok(0.0);
    }
    Ok(cumulative_hazard(censor_fit, &s.covariates, s.treat_time + t)?.exp())
}

/// `w0_hat` for a matched pair at shifted time `t`.
pub fn w0_hat(
    cohort: &Cohort,
    pair: &MatchedPair,
    t: f64,
    censor_fit: &CoxFit,
    treat_fit: &CoxFit,
    tau: f64,
) -> Result<f64, WeightError> {
    let treated = cohort.get(pair.treated_index);
    let control = cohort.get(pair.control_index);
    let t_k = treated.treat_time;
    if t_k > tau || t > control.obs_time - t_k || t >= control.treat_time - t_k {
        return Ok(0.0);
    }
    let exponent = cumulative_hazard(censor_fit, &treated.covariates, t_k)?
        + increment_between(censor_fit, &control.covariates, t_k, t_k + t)?
        + increment_between(treat_fit, &control.covariates, t_k, t_k + t)?;
    Ok(exponent.exp())
}

/// One contributor to a weighted Nelson-Aalen estimator, with its weight
/// process precomputed down to a few scalars.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightProcess {
    /// Cohort index of the subject whose follow-up this is (the treated
    /// subject on the treated side, the control on the treatment-free side).
    pub owner: usize,
    /// Cohort index of the treated subject defining the time origin.
    pub origin: usize,
    pub origin_time: f64,
    /// Shifted time at which risk ends, inclusive.
    pub exit: f64,
    /// Shifted time of a competing exit (later treatment), exclusive.
    pub treat_exit: f64,
    /// Observed death at `exit` counts as an event on this side.
    pub event: bool,
    scheme: WeightScheme,
    offset: f64,
    rr_censor: f64,
    rr_treat: f64,
    censor_at_origin: f64,
    treat_at_origin: f64,
}

impl WeightProcess {
    /// At-risk indicator on the shifted scale.
    pub fn at_risk(&self, t: f64) -> bool {
        t <= self.exit && t < self.treat_exit
    }

    /// Earliest shifted time at which the subject may leave the risk set.
    pub fn support_end(&self) -> f64 {
        self.exit.min(self.treat_exit)
    }

    pub fn is_event_at(&self, t: f64) -> bool {
        self.event && t == self.exit
    }

    /// `w(t)`; 0 off-support.
    pub fn weight(&self, t: f64, censor_fit: &CoxFit, treat_fit: &CoxFit) -> f64 {
        if !self.at_risk(t) {
            return 0.0;
        }
        if self.scheme == WeightScheme::Unweighted {
            return 1.0;
        }
        let at = self.origin_time + t;
        let censor = self.rr_censor * censor_fit.baseline_cumhaz.eval(at);
        let treat = self.rr_treat * treat_fit.baseline_cumhaz.eval(at);
        (self.offset + (censor - self.censor_at_origin) + (treat - self.treat_at_origin)).exp()
    }
}

/// Treated-side processes: matched treated subjects with `T_k <= tau`.
pub fn treated_processes(
    cohort: &Cohort,
    matching: &MatchResult,
    censor_fit: &CoxFit,
    tau: f64,
    scheme: WeightScheme,
) -> Vec<WeightProcess> {
    matching
        .pairs
        .iter()
        .filter(|p| p.match_time <= tau)
        .map(|p| {
            let s = cohort.get(p.treated_index);
            WeightProcess {
                owner: p.treated_index,
                origin: p.treated_index,
                origin_time: s.treat_time,
                exit: s.obs_time - s.treat_time,
                treat_exit: f64::INFINITY,
                event: s.death,
                scheme,
                offset: 0.0,
                rr_censor: censor_fit.relative_risk(&s.covariates),
                rr_treat: 0.0,
                censor_at_origin: 0.0,
                treat_at_origin: 0.0,
            }
        })
        .collect()
}

/// Treatment-free processes: one per matched pair with `T_k <= tau`.
pub fn control_processes(
    cohort: &Cohort,
    matching: &MatchResult,
    censor_fit: &CoxFit,
    treat_fit: &CoxFit,
    tau: f64,
    scheme: WeightScheme,
) -> Vec<WeightProcess> {
    matching
        .pairs
        .iter()
        .filter(|p| p.match_time <= tau)
        .map(|p| {
            let treated = cohort.get(p.treated_index);
            let control = cohort.get(p.control_index);
            let t_k = treated.treat_time;
            let rr_censor = censor_fit.relative_risk(&control.covariates);
            let rr_treat = treat_fit.relative_risk(&control.covariates);
            WeightProcess {
                owner: p.control_index,
                origin: p.treated_index,
                origin_time: t_k,
                exit: control.obs_time - t_k,
                treat_exit: control.treat_time - t_k,
                event: control.untreated_death(),
                scheme,
                offset: censor_fit.relative_risk(&treated.covariates)
                    * censor_fit.baseline_cumhaz.eval(t_k),
                rr_censor,
                rr_treat,
                censor_at_origin: rr_censor * censor_fit.baseline_cumhaz.eval(t_k),
                treat_at_origin: rr_treat * treat_fit.baseline_cumhaz.eval(t_k),
            }
        })
        .collect()
}
