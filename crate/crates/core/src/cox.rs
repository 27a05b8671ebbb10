//! Proportional-hazards fits for the treatment, treatment-free death and
//! censoring hazards.
//!
//! Each [`HazardSpec`] turns the cohort into a right-censored dataset; the
//! Breslow-tie log partial likelihood is maximised by Newton-Raphson with
//! step-halving, and the Breslow baseline cumulative hazard is attached to the
//! fit.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::cohort::Cohort;
use crate::step::StepFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoxError {
    #[error("{kind:?} model has no events")]
    NoEvents { kind: HazardSpec },
    #[error("{kind:?} model: information matrix is singular (reciprocal condition {rcond:e})")]
    SingularInformation { kind: HazardSpec, rcond: f64 },
    #[error("{kind:?} model did not converge in {iterations} iterations")]
    MaxIterationsExceeded {
        kind: HazardSpec,
        iterations: usize,
        fit: Box<CoxFit>,
    },
    #[error("covariate vector has length {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("interval [{a}, {b}] is reversed")]
    ReversedInterval { a: f64, b: f64 },
}

/// Which cause-specific hazard is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum HazardSpec {
    /// Event: observed treatment at `T`. Death and censoring censor it.
    Treatment,
    /// Event: death while untreated at `U`. Treatment and censoring censor it.
    PretreatmentDeath,
    /// Event: censoring at `U`. Death censors it; treatment does not.
    Censoring,
}

impl HazardSpec {
    pub fn name(&self) -> &'static str {
        match self {
            HazardSpec::Treatment => "treatment",
            HazardSpec::PretreatmentDeath => "pretreatment_death",
            HazardSpec::Censoring => "censoring",
        }
    }

    /// `(time, event)` for every subject, in cohort order.
    pub fn event_data(&self, cohort: &Cohort) -> Vec<(f64, bool)> {
        cohort
            .subjects()
            .iter()
            .map(|s| match self {
                HazardSpec::Treatment => {
                    if s.treated {
                        (s.treat_time, true)
                    } else {
                        (s.obs_time, false)
                    }
                }
                HazardSpec::PretreatmentDeath => {
                    if s.treated {
                        (s.treat_time, false)
                    } else {
                        (s.obs_time, s.death)
                    }
                }
                HazardSpec::Censoring => (s.obs_time, !s.death),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub score_tol: f64,
    pub step_tol: f64,
    pub max_halvings: usize,
    pub rcond_min: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            score_tol: 1e-8,
            step_tol: 1e-10,
            max_halvings: 20,
            rcond_min: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub kind: HazardSpec,
    pub beta: Vec<f64>,
    /// Breslow estimate of the baseline cumulative hazard.
    pub baseline_cumhaz: StepFunction,
    pub loglik_path: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub n_events: usize,
    /// Max-norm of the score at `beta`.
    pub score_norm: f64,
    /// Observed information at `beta`, row-major `p x p`.
    pub information: Vec<f64>,
}

impl CoxFit {
    /// A fit with zero coefficients and an empty baseline, so every cumulative
    /// hazard is identically 0. Stands in for models without events.
    pub fn null(kind: HazardSpec, p: usize) -> Self {
        Self {
            kind,
            beta: vec![0.0; p],
            baseline_cumhaz: StepFunction::zero(),
            loglik_path: Vec::new(),
            iterations: 0,
            converged: true,
            n_events: 0,
            score_norm: 0.0,
            information: vec![0.0; p * p],
        }
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn linear_predictor(&self, z: &[f64]) -> f64 {
        self.beta.iter().zip(z).map(|(b, x)| b * x).sum()
    }

    /// `exp(beta'z)`.
    pub fn relative_risk(&self, z: &[f64]) -> f64 {
        self.linear_predictor(z).exp()
    }

    fn check_dim(&self, z: &[f64]) -> Result<(), CoxError> {
        if z.len() != self.p() {
            return Err(CoxError::DimensionMismatch {
                expected: self.p(),
                found: z.len(),
            });
        }
        Ok(())
    }

    /// Standard errors from the inverse observed information, when invertible.
    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        let p = self.p();
        let info = DMatrix::from_row_slice(p, p, &self.information);
        let inv = info.try_inverse()?;
        Some((0..p).map(|j| inv[(j, j)].max(0.0).sqrt()).collect())
    }
}

/// `exp(beta'z) * Lambda0(t)`.
pub fn cumulative_hazard(fit: &CoxFit, z: &[f64], t: f64) -> Result<f64, CoxError> {
    fit.check_dim(z)?;
    Ok(fit.relative_risk(z) * fit.baseline_cumhaz.eval(t))
}

/// Hazard accumulated over `(a, b]`.
pub fn increment_between(fit: &CoxFit, z: &[f64], a: f64, b: f64) -> Result<f64, CoxError> {
    fit.check_dim(z)?;
    if a > b {
        return Err(CoxError::ReversedInterval { a, b });
    }
    if a == b {
        return Ok(0.0);
    }
    Ok(cumulative_hazard(fit, z, b)? - cumulative_hazard(fit, z, a)?)
}

/// Canonically ordered survival data for one hazard.
struct CoxData {
    /// Ascending by (time, id).
    times: Vec<f64>,
    events: Vec<bool>,
    /// Raw covariates, row-major.
    raw: Vec<f64>,
    /// Mean-centred covariates, row-major.
    centred: Vec<f64>,
    p: usize,
}

impl CoxData {
    fn new(cohort: &Cohort, kind: HazardSpec) -> Self {
        let data = kind.event_data(cohort);
        let subjects = cohort.subjects();
        let mut order: Vec<usize> = (0..subjects.len()).collect();
        order.sort_by(|&a, &b| {
            data[a]
                .0
                .total_cmp(&data[b].0)
                .then(subjects[a].id.cmp(&subjects[b].id))
        });
        let p = cohort.p();
        let n = order.len();
        let mut raw = Vec::with_capacity(n * p);
        for &i in &order {
            raw.extend_from_slice(&subjects[i].covariates);
        }
        let mut mean = vec![0.0; p];
        for row in raw.chunks(p.max(1)).take(n) {
            for (m, z) in mean.iter_mut().zip(row) {
                *m += z;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let centred = raw
            .chunks(p.max(1))
            .take(n)
            .flat_map(|row| row.iter().zip(&mean).map(|(z, m)| z - m).collect::<Vec<_>>())
            .collect();
        Self {
            times: order.iter().map(|&i| data[i].0).collect(),
            events: order.iter().map(|&i| data[i].1).collect(),
            raw,
            centred,
            p,
        }
    }

    fn n(&self) -> usize {
        self.times.len()
    }

    fn n_events(&self) -> usize {
        self.events.iter().filter(|e| **e).count()
    }

    fn row<'a>(&self, m: &'a [f64], i: usize) -> &'a [f64] {
        &m[i * self.p..(i + 1) * self.p]
    }

    /// Groups of equal time, as index ranges in ascending time order.
    fn tie_groups(&self) -> Vec<(usize, usize)> {
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=self.n() {
            if i == self.n() || self.times[i] != self.times[start] {
                groups.push((start, i));
                start = i;
            }
        }
        groups
    }

    /// Log partial likelihood, score and information at `beta`.
    fn evaluate(&self, beta: &[f64], want_derivs: bool) -> (f64, Vec<f64>, Vec<f64>) {
        let p = self.p;
        let eta: Vec<f64> = (0..self.n())
            .map(|i| dot(beta, self.row(&self.centred, i)))
            .collect();
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let shift = if shift.is_finite() { shift } else { 0.0 };

        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let mut loglik = 0.0;
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];

        for &(start, end) in self.tie_groups().iter().rev() {
            for i in start..end {
                let r = (eta[i] - shift).exp();
                let x = self.row(&self.centred, i);
                s0 += r;
                if want_derivs {
                    for a in 0..p {
                        s1[a] += r * x[a];
                        for b in 0..p {
                            s2[a * p + b] += r * x[a] * x[b];
                        }
                    }
                }
            }
            let d = (start..end).filter(|&i| self.events[i]).count();
            if d == 0 {
                continue;
            }
            let log_s0 = s0.ln() + shift;
            for i in start..end {
                if self.events[i] {
                    loglik += eta[i] - log_s0;
                    if want_derivs {
                        let x = self.row(&self.centred, i);
                        for a in 0..p {
                            score[a] += x[a] - s1[a] / s0;
                        }
                    }
                }
            }
            if want_derivs {
                let df = d as f64;
                for a in 0..p {
                    for b in 0..p {
                        info[a * p + b] +=
                            df * (s2[a * p + b] / s0 - s1[a] * s1[b] / (s0 * s0));
                    }
                }
            }
        }
        (loglik, score, info)
    }

    /// Breslow jumps `d(u) / sum_{time >= u} exp(beta'Z)` with raw covariates.
    fn breslow(&self, beta: &[f64]) -> StepFunction {
        let mut s0 = 0.0;
        let mut jumps = Vec::new();
        for &(start, end) in self.tie_groups().iter().rev() {
            for i in start..end {
                s0 += dot(beta, self.row(&self.raw, i)).exp();
            }
            let d = (start..end).filter(|&i| self.events[i]).count();
            if d > 0 {
                jumps.push((self.times[start], d as f64 / s0));
            }
        }
        jumps.reverse();
        let (times, sizes) = jumps.into_iter().unzip();
        StepFunction::new(times, sizes).expect("tie groups are strictly increasing")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Breslow-tie log partial likelihood of `kind` at `beta`.
pub fn log_partial_likelihood(cohort: &Cohort, kind: HazardSpec, beta: &[f64]) -> f64 {
    CoxData::new(cohort, kind).evaluate(beta, false).0
}

/// Analytic score vector at `beta`.
pub fn score(cohort: &Cohort, kind: HazardSpec, beta: &[f64]) -> Vec<f64> {
    CoxData::new(cohort, kind).evaluate(beta, true).1
}

fn reciprocal_condition(info: &[f64], p: usize) -> f64 {
    let m = DMatrix::from_row_slice(p, p, info);
    let eig = m.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !min.is_finite() {
        return 0.0;
    }
    (min / max).max(0.0)
}

fn newton_direction(info: &[f64], score: &[f64], p: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(p, p, info);
    let rhs = DVector::from_column_slice(score);
    let sol = match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => m.lu().solve(&rhs)?,
    };
    Some(sol.iter().copied().collect())
}

pub fn fit_cox(cohort: &Cohort, kind: HazardSpec, opts: &FitOptions) -> Result<CoxFit, CoxError> {
    let data = CoxData::new(cohort, kind);
    let n_events = data.n_events();
    if n_events == 0 {
        return Err(CoxError::NoEvents { kind });
    }
    let p = data.p;
    let mut beta = vec![0.0; p];
    let (mut loglik, mut sc, mut info) = data.evaluate(&beta, true);
    let mut path = vec![loglik];
    let mut iterations = 0;
    let mut converged = max_abs(&sc) <= opts.score_tol;

    while !converged && iterations < opts.max_iter {
        let rcond = reciprocal_condition(&info, p);
        if rcond < opts.rcond_min {
            return Err(CoxError::SingularInformation { kind, rcond });
        }
        let direction = newton_direction(&info, &sc, p)
            .ok_or(CoxError::SingularInformation { kind, rcond })?;
        iterations += 1;

        let mut step = 1.0;
        let mut halvings = 0;
        let (candidate, cand_eval) = loop {
            let cand: Vec<f64> = beta
                .iter()
                .zip(&direction)
                .map(|(b, d)| b + step * d)
                .collect();
            let eval = data.evaluate(&cand, true);
            if eval.0 >= loglik || halvings >= opts.max_halvings {
                break (cand, eval);
            }
            step *= 0.5;
            halvings += 1;
        };
        if cand_eval.0 < loglik {
            // no ascent even after halving: stay at the best iterate, which
            // counts as converged when the loss is at rounding level
            converged = loglik - cand_eval.0 <= 1e-9 * (1.0 + loglik.abs());
            break;
        }
        let moved = beta
            .iter()
            .zip(&candidate)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        beta = candidate;
        (loglik, sc, info) = cand_eval;
        path.push(loglik);
        converged = max_abs(&sc) <= opts.score_tol || moved <= opts.step_tol;
    }

    let fit = CoxFit {
        kind,
        baseline_cumhaz: data.breslow(&beta),
        beta,
        loglik_path: path,
        iterations,
        converged,
        n_events,
        score_norm: max_abs(&sc),
        information: info,
    };
    if converged {
        Ok(fit)
    } else {
        Err(CoxError::MaxIterationsExceeded {
            kind,
            iterations,
            fit: Box::new(fit),
        })
    }
}
