//! Matched, censoring-weighted estimation of the treatment effect on the
//! treated for survival curves when treatment starts at a random time.

pub mod cli;
pub mod cohort;
pub mod cox;
pub mod estimators;
pub mod matching;
pub mod pipeline;
pub mod simulate;
pub mod step;
pub mod variance;
pub mod weights;

pub use cohort::{validate_cohort, Cohort, CohortError, SubjectRecord};
pub use cox::{fit_cox, CoxError, CoxFit, FitOptions, HazardSpec};
pub use estimators::{EstimationSettings, SideEstimate, SurvivalCurve};
pub use matching::{run_matching, MatchCriterion, MatchMode, MatchResult, MatchedPair};
pub use pipeline::{analyze, Analysis, AnalysisConfig, PipelineError};
pub use step::StepFunction;
pub use weights::{WeightCap, WeightScheme};
