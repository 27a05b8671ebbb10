//! Risk-set matching at each treatment time.
//!
//! A treated subject `k` is compared with every subject alive, uncensored and
//! not yet treated at `T_k` through the log hazard ratios
//! `log psi = beta'(Z_l - Z_k)` of the treatment (propensity) and treatment-free
//! death (prognostic) models. The nearest eligible candidate inside the
//! caliper(s) becomes `k`'s control. Controls are not consumed: the same
//! subject may serve several treated subjects, and may itself be treated later.

use serde::Serialize;
use thiserror::Error;

use crate::cohort::Cohort;
use crate::cox::CoxFit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("subject {id} is not treated")]
    NotTreated { id: i64 },
    #[error("no subject with id {id}")]
    UnknownId { id: i64 },
    #[error("{mode:?} matching requires the {which} caliper")]
    MissingCaliper { mode: MatchMode, which: &'static str },
    #[error("caliper {value} must be finite and > 1")]
    InvalidCaliper { value: f64 },
    #[error("the {which} score model is required by this criterion")]
    MissingModel { which: &'static str },
    #[error("covariate vectors differ in length ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("tau must be positive, got {0}")]
    InvalidHorizon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Prognostic,
    Propensity,
    Double,
}

impl MatchMode {
    pub fn name(&self) -> &'static str {
        match self {
            MatchMode::Prognostic => "prognostic",
            MatchMode::Propensity => "propensity",
            MatchMode::Double => "double",
        }
    }
}

impl std::str::FromStr for MatchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "prognostic" => Ok(MatchMode::Prognostic),
            "propensity" => Ok(MatchMode::Propensity),
            "double" => Ok(MatchMode::Double),
            other => Err(format!("unknown matching mode '{other}'")),
        }
    }
}

/// Matching mode plus multiplicative calipers.
///
/// The mode fixes the objective and which calipers are mandatory. Any caliper
/// supplied beyond those is still enforced as an extra eligibility filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchCriterion {
    pub mode: MatchMode,
    pub xi_t: Option<f64>,
    pub xi_d: Option<f64>,
}

impl MatchCriterion {
    pub fn new(mode: MatchMode, xi_t: Option<f64>, xi_d: Option<f64>) -> Result<Self, MatchError> {
        for value in [xi_t, xi_d].into_iter().flatten() {
            if !(value.is_finite() && value > 1.0) {
                return Err(MatchError::InvalidCaliper { value });
            }
        }
        match mode {
            MatchMode::Prognostic | MatchMode::Double if xi_d.is_none() => {
                return Err(MatchError::MissingCaliper { mode, which: "xi_d" })
            }
            _ => {}
        }
        match mode {
            MatchMode::Propensity | MatchMode::Double if xi_t.is_none() => {
                return Err(MatchError::MissingCaliper { mode, which: "xi_t" })
            }
            _ => {}
        }
        Ok(Self { mode, xi_t, xi_d })
    }

    pub fn prognostic(xi_d: f64) -> Result<Self, MatchError> {
        Self::new(MatchMode::Prognostic, None, Some(xi_d))
    }

    pub fn propensity(xi_t: f64) -> Result<Self, MatchError> {
        Self::new(MatchMode::Propensity, Some(xi_t), None)
    }

    pub fn double(xi_t: f64, xi_d: f64) -> Result<Self, MatchError> {
        Self::new(MatchMode::Double, Some(xi_t), Some(xi_d))
    }

    fn needs_treatment(&self) -> bool {
        self.mode != MatchMode::Prognostic || self.xi_t.is_some()
    }

    fn needs_prognostic(&self) -> bool {
        self.mode != MatchMode::Propensity || self.xi_d.is_some()
    }
}

/// The fitted treatment (propensity) and treatment-free death (prognostic)
/// models available for scoring.
#[derive(Debug, Clone, Copy)]
pub struct ScoreModels<'a> {
    pub treatment: Option<&'a CoxFit>,
    pub prognostic: Option<&'a CoxFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub treated_id: i64,
    pub control_id: i64,
    #[serde(skip)]
    pub treated_index: usize,
    #[serde(skip)]
    pub control_index: usize,
    /// `T_k`.
    pub match_time: f64,
    pub log_psi_t: Option<f64>,
    pub log_psi_d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_treated: Vec<i64>,
    /// Treated subjects with `T_k <= tau`, the match-rate denominator.
    pub eligible_treated: usize,
    pub match_rate: f64,
}

impl MatchResult {
    /// Pair for treated subject at `index`, if matched.
    pub fn pair_for_treated(&self, index: usize) -> Option<&MatchedPair> {
        self.pairs.iter().find(|p| p.treated_index == index)
    }

    pub fn is_matched(&self, index: usize) -> bool {
        self.pair_for_treated(index).is_some()
    }
}

/// `beta'(z_l - z_k)`.
pub fn log_score_ratio(beta: &[f64], z_l: &[f64], z_k: &[f64]) -> Result<f64, MatchError> {
    if z_l.len() != z_k.len() {
        return Err(MatchError::DimensionMismatch(z_l.len(), z_k.len()));
    }
    if beta.len() != z_l.len() {
        return Err(MatchError::DimensionMismatch(beta.len(), z_l.len()));
    }
    Ok(beta
        .iter()
        .zip(z_l.iter().zip(z_k))
        .map(|(b, (l, k))| b * (l - k))
        .sum())
}

fn required<'a>(fit: Option<&'a CoxFit>, which: &'static str) -> Result<&'a CoxFit, MatchError> {
    fit.ok_or(MatchError::MissingModel { which })
}

/// Nearest eligible control for the treated subject with id `k`.
pub fn find_match(
    k: i64,
    cohort: &Cohort,
    models: ScoreModels<'_>,
    crit: &MatchCriterion,
) -> Result<Option<MatchedPair>, MatchError> {
    let index = cohort.index_of(k).ok_or(MatchError::UnknownId { id: k })?;
    find_match_index(index, cohort, models, crit)
}

pub(crate) fn find_match_index(
    k: usize,
    cohort: &Cohort,
    models: ScoreModels<'_>,
    crit: &MatchCriterion,
) -> Result<Option<MatchedPair>, MatchError> {
    let treated = cohort.get(k);
    if !treated.treated {
        return Err(MatchError::NotTreated { id: treated.id });
    }
    let treatment = if crit.needs_treatment() {
        Some(required(models.treatment, "treatment")?)
    } else {
        models.treatment
    };
    let prognostic = if crit.needs_prognostic() {
        Some(required(models.prognostic, "prognostic")?)
    } else {
        models.prognostic
    };
    let log_xi_t = crit.xi_t.map(f64::ln);
    let log_xi_d = crit.xi_d.map(f64::ln);
    let t_k = treated.treat_time;

    // (objective, id, index, log_psi_t, log_psi_d)
    let mut best: Option<(f64, i64, usize, Option<f64>, Option<f64>)> = None;
    for (l, cand) in cohort.subjects().iter().enumerate() {
        if l == k || !cand.at_risk_untreated(t_k) {
            continue;
        }
        let lt = treatment
            .map(|f| log_score_ratio(&f.beta, &cand.covariates, &treated.covariates))
            .transpose()?;
        let ld = prognostic
            .map(|f| log_score_ratio(&f.beta, &cand.covariates, &treated.covariates))
            .transpose()?;
        let inside = |lp: Option<f64>, cal: Option<f64>| match (lp, cal) {
            (Some(v), Some(c)) => v.abs() < c,
            _ => true,
        };
        if !inside(lt, log_xi_t) || !inside(ld, log_xi_d) {
            continue;
        }
        let objective = match crit.mode {
            MatchMode::Prognostic => ld.unwrap().abs(),
            MatchMode::Propensity => lt.unwrap().abs(),
            MatchMode::Double => (lt.unwrap() + ld.unwrap()).abs(),
        };
        let better = match best {
            None => true,
            Some((obj, id, ..)) => objective < obj || (objective == obj && cand.id < id),
        };
        if better {
            best = Some((objective, cand.id, l, lt, ld));
        }
    }
    Ok(best.map(|(_, control_id, control_index, log_psi_t, log_psi_d)| MatchedPair {
        treated_id: treated.id,
        control_id,
        treated_index: k,
        control_index,
        match_time: t_k,
        log_psi_t,
        log_psi_d,
    }))
}

/// Matches every treated subject with `T_k <= tau`, in ascending `(T_k, id)`.
pub fn run_matching(
    cohort: &Cohort,
    models: ScoreModels<'_>,
    crit: &MatchCriterion,
    tau: f64,
) -> Result<MatchResult, MatchError> {
    if !(tau > 0.0) {
        return Err(MatchError::InvalidHorizon(tau));
    }
    let mut order: Vec<usize> = cohort
        .subjects()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.treated && s.treat_time <= tau)
        .map(|(i, _)| i)
        .collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (cohort.get(a), cohort.get(b));
        sa.treat_time.total_cmp(&sb.treat_time).then(sa.id.cmp(&sb.id))
    });
    let mut pairs = Vec::new();
    let mut unmatched_treated = Vec::new();
    for &k in &order {
        match find_match_index(k, cohort, models, crit)? {
            Some(pair) => pairs.push(pair),
            None => unmatched_treated.push(cohort.get(k).id),
        }
    }
    let eligible = order.len();
    let match_rate = if eligible == 0 {
        1.0
    } else {
        pairs.len() as f64 / eligible as f64
    };
    Ok(MatchResult {
        pairs,
        unmatched_treated,
        eligible_treated: eligible,
        match_rate,
    })
}
