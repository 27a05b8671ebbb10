//! End-to-end estimation on one cohort: three hazard fits, risk-set matching,
//! weighted curves for both sides, their difference and the variances.

use serde::Serialize;
use thiserror::Error;

use crate::cohort::Cohort;
use crate::cox::{fit_cox, CoxError, CoxFit, FitOptions, HazardSpec};
use crate::estimators::{
    estimate_delta, estimate_s0, estimate_s1, EstimateError, EstimationSettings, SideEstimate,
    SurvivalCurve,
};
use crate::matching::{run_matching, MatchCriterion, MatchError, MatchResult, ScoreModels};
use crate::variance::{
    influence_control, influence_treated, variance_curves, VarianceCurves, VarianceError,
};
use crate::weights::{WeightCap, WeightScheme};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{model} model: {source}")]
    Cox {
        model: &'static str,
        #[source]
        source: CoxError,
    },
    #[error(transparent)]
    Matching(#[from] MatchError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Variance(#[from] VarianceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub criterion: MatchCriterion,
    pub tau: f64,
    pub tau1: f64,
    pub scheme: WeightScheme,
    pub cap: WeightCap,
    #[serde(skip)]
    pub fit_options: FitOptions,
}

impl AnalysisConfig {
    pub fn new(criterion: MatchCriterion, tau: f64, tau1: f64) -> Self {
        Self {
            criterion,
            tau,
            tau1,
            scheme: WeightScheme::Ipcw,
            cap: WeightCap::None,
            fit_options: FitOptions::default(),
        }
    }

    fn settings(&self) -> EstimationSettings {
        EstimationSettings {
            tau: self.tau,
            tau1: self.tau1,
            scheme: self.scheme,
            cap: self.cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HazardFits {
    pub treatment: CoxFit,
    pub prognostic: CoxFit,
    pub censoring: CoxFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub fits: HazardFits,
    pub matching: MatchResult,
    pub treated: SideEstimate,
    pub control: SideEstimate,
    pub delta: SurvivalCurve,
    pub variances: VarianceCurves,
    pub warnings: Vec<String>,
}

impl Analysis {
    pub fn s1(&self) -> &SurvivalCurve {
        &self.treated.curve
    }

    pub fn s0(&self) -> &SurvivalCurve {
        &self.control.curve
    }

    /// Sorted union of both sides' jump times.
    pub fn jump_grid(&self) -> Vec<f64> {
        self.delta.jump_times()
    }
}

/// Fits one model; a model without events becomes a null fit plus a warning.
pub fn fit_or_null(
    cohort: &Cohort,
    kind: HazardSpec,
    opts: &FitOptions,
    warnings: &mut Vec<String>,
) -> Result<CoxFit, PipelineError> {
    match fit_cox(cohort, kind, opts) {
        Ok(fit) => Ok(fit),
        Err(CoxError::NoEvents { .. }) => {
            warnings.push(format!(
                "{} model has no events; its cumulative hazard is taken as 0",
                kind.name()
            ));
            Ok(CoxFit::null(kind, cohort.p()))
        }
        Err(source) => Err(PipelineError::Cox {
            model: kind.name(),
            source,
        }),
    }
}

pub fn fit_models(
    cohort: &Cohort,
    opts: &FitOptions,
    warnings: &mut Vec<String>,
) -> Result<HazardFits, PipelineError> {
    Ok(HazardFits {
        treatment: fit_or_null(cohort, HazardSpec::Treatment, opts, warnings)?,
        prognostic: fit_or_null(cohort, HazardSpec::PretreatmentDeath, opts, warnings)?,
        censoring: fit_or_null(cohort, HazardSpec::Censoring, opts, warnings)?,
    })
}

/// Runs the estimator with already-fitted hazard models.
pub fn analyze_with_fits(
    cohort: &Cohort,
    fits: HazardFits,
    cfg: &AnalysisConfig,
    mut warnings: Vec<String>,
) -> Result<Analysis, PipelineError> {
    let models = ScoreModels {
        treatment: Some(&fits.treatment),
        prognostic: Some(&fits.prognostic),
    };
    let matching = run_matching(cohort, models, &cfg.criterion, cfg.tau)?;
    let settings = cfg.settings();
    let mut treated = estimate_s1(cohort, &matching, &fits.censoring, &settings)?;
    let mut control = estimate_s0(cohort, &matching, &fits.censoring, &fits.treatment, &settings)?;
    if treated.no_events {
        warnings.push("no post-treatment deaths among matched treated subjects; S1 is flat at 1".into());
    }
    if control.no_events {
        warnings.push("no treatment-free deaths among matched controls; S0 is flat at 1".into());
    }
    for side in [&treated, &control] {
        if side.skipped_jumps > 0 {
            warnings.push(format!(
                "{} death times skipped on the {:?} side (zero weighted risk set)",
                side.skipped_jumps, side.curve.side
            ));
        }
    }
    let phi1 = influence_treated(&treated)?;
    let phi0 = influence_control(&control)?;
    let variances = variance_curves(&phi1, &phi0, &treated.curve, &control.curve)?;
    treated.curve.variance = Some(variances.treated.clone());
    control.curve.variance = Some(variances.control.clone());
    let mut delta = estimate_delta(&treated.curve, &control.curve)?;
    delta.variance = Some(variances.delta.clone());
    Ok(Analysis {
        fits,
        matching,
        treated,
        control,
        delta,
        variances,
        warnings,
    })
}

pub fn analyze(cohort: &Cohort, cfg: &AnalysisConfig) -> Result<Analysis, PipelineError> {
    let mut warnings = Vec::new();
    let fits = fit_models(cohort, &cfg.fit_options, &mut warnings)?;
    analyze_with_fits(cohort, fits, cfg, warnings)
}
