//! Subject records, cohort validation and the at-risk indicators.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohortError {
    #[error("cohort has no subjects")]
    Empty,
    #[error("subject id {id} appears more than once")]
    DuplicateId { id: i64 },
    #[error("subject {id}: negative time")]
    NegativeTime { id: i64 },
    #[error("subject {id}: time or covariate is not finite")]
    NonFinite { id: i64 },
    #[error("subject {id}: treatment time {treat_time} is not before observation time {obs_time}")]
    TreatmentAfterObservation {
        id: i64,
        treat_time: f64,
        obs_time: f64,
    },
    #[error("subject {id}: {found} covariates, expected {expected}")]
    CovariateLengthMismatch {
        id: i64,
        expected: usize,
        found: usize,
    },
}

/// One subject's observed data.
///
/// Untreated subjects carry `treat_time = +inf`, so `min(U, T)` is just `U`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectRecord {
    pub id: i64,
    /// `U = min(D, C)`.
    pub obs_time: f64,
    /// Death observed before censoring.
    pub death: bool,
    pub treat_time: f64,
    /// Treatment observed before `U`.
    pub treated: bool,
    pub covariates: Vec<f64>,
}

impl SubjectRecord {
    pub fn untreated(id: i64, obs_time: f64, death: bool, covariates: Vec<f64>) -> Self {
        Self {
            id,
            obs_time,
            death,
            treat_time: f64::INFINITY,
            treated: false,
            covariates,
        }
    }

    pub fn treated(
        id: i64,
        obs_time: f64,
        death: bool,
        treat_time: f64,
        covariates: Vec<f64>,
    ) -> Self {
        Self {
            id,
            obs_time,
            death,
            treat_time,
            treated: true,
            covariates,
        }
    }

    /// `Y(t) = I(U >= t)`.
    pub fn at_risk(&self, t: f64) -> bool {
        self.obs_time >= t
    }

    /// Alive, uncensored and not yet treated at `t`. A subject treated exactly
    /// at `t` is excluded; one whose observation ends exactly at `t` is not.
    pub fn at_risk_untreated(&self, t: f64) -> bool {
        self.obs_time >= t && self.treat_time > t
    }

    /// End of treatment-free exposure, `min(U, T)`.
    pub fn untreated_exit(&self) -> f64 {
        self.obs_time.min(self.treat_time)
    }

    /// Death observed while still untreated.
    pub fn untreated_death(&self) -> bool {
        self.death && !self.treated
    }

    pub fn p(&self) -> usize {
        self.covariates.len()
    }
}

/// A validated, immutable cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cohort {
    subjects: Vec<SubjectRecord>,
    p: usize,
    time_horizon: f64,
}

impl Cohort {
    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Covariate dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Largest observed `U`.
    pub fn time_horizon(&self) -> f64 {
        self.time_horizon
    }

    pub fn get(&self, index: usize) -> &SubjectRecord {
        &self.subjects[index]
    }

    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.subjects.iter().position(|s| s.id == id)
    }

    pub fn treated_count(&self) -> usize {
        self.subjects.iter().filter(|s| s.treated).count()
    }

    /// Indices of subjects in the untreated risk set at `t`.
    pub fn at_risk_untreated_indices(&self, t: f64) -> Vec<usize> {
        self.subjects
            .iter()
            .enumerate()
            .filter(|(_, s)| s.at_risk_untreated(t))
            .map(|(i, _)| i)
            .collect()
    }

    /// Shifts every covariate vector by `shift`. Used in invariance checks.
    pub fn with_shifted_covariates(&self, shift: &[f64]) -> Cohort {
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                let mut s = s.clone();
                for (z, d) in s.covariates.iter_mut().zip(shift) {
                    *z += d;
                }
                s
            })
            .collect();
        validate_cohort(subjects).expect("shifting covariates keeps a cohort valid")
    }
}

pub fn validate_cohort(subjects: Vec<SubjectRecord>) -> Result<Cohort, CohortError> {
    let first = subjects.first().ok_or(CohortError::Empty)?;
    let p = first.covariates.len();
    let mut seen = HashSet::with_capacity(subjects.len());
    let mut time_horizon: f64 = 0.0;
    for s in &subjects {
        if !seen.insert(s.id) {
            return Err(CohortError::DuplicateId { id: s.id });
        }
        if s.obs_time.is_nan() || s.obs_time.is_infinite() {
            return Err(CohortError::NonFinite { id: s.id });
        }
        if s.obs_time < 0.0 {
            return Err(CohortError::NegativeTime { id: s.id });
        }
        if s.treated {
            if !s.treat_time.is_finite() {
                return Err(CohortError::NonFinite { id: s.id });
            }
            if s.treat_time < 0.0 {
                return Err(CohortError::NegativeTime { id: s.id });
            }
            if s.treat_time >= s.obs_time {
                return Err(CohortError::TreatmentAfterObservation {
                    id: s.id,
                    treat_time: s.treat_time,
                    obs_time: s.obs_time,
                });
            }
        } else if s.treat_time != f64::INFINITY {
            return Err(CohortError::NonFinite { id: s.id });
        }
        if s.covariates.len() != p {
            return Err(CohortError::CovariateLengthMismatch {
                id: s.id,
                expected: p,
                found: s.covariates.len(),
            });
        }
        if s.covariates.iter().any(|z| !z.is_finite()) {
            return Err(CohortError::NonFinite { id: s.id });
        }
        time_horizon = time_horizon.max(s.obs_time);
    }
    Ok(Cohort {
        subjects,
        p,
        time_horizon,
    })
}

/// Ids in the untreated risk set at `t`.
pub fn at_risk_untreated(cohort: &Cohort, t: f64) -> Vec<i64> {
    cohort
        .subjects
        .iter()
        .filter(|s| s.at_risk_untreated(t))
        .map(|s| s.id)
        .collect()
}
