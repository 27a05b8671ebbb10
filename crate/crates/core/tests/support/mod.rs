//! Shared test support: a brute-force transcription of the estimators and a
//! seeded corpus of small cohorts.
#![allow(dead_code)]

use matchsurv::cohort::{validate_cohort, Cohort, SubjectRecord};
use matchsurv::cox::{CoxFit, HazardSpec};
use matchsurv::matching::{MatchCriterion, MatchMode};
use matchsurv::pipeline::HazardFits;
use matchsurv::step::StepFunction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Baseline cumulative hazard by summing every jump at or before `t`.
fn cum(fit: &CoxFit, t: f64) -> f64 {
    fit.baseline_cumhaz
        .jump_times()
        .iter()
        .zip(fit.baseline_cumhaz.jump_sizes())
        .filter(|(u, _)| **u <= t)
        .map(|(_, d)| *d)
        .sum()
}

fn rr(fit: &CoxFit, z: &[f64]) -> f64 {
    fit.beta.iter().zip(z).map(|(b, x)| b * x).sum::<f64>().exp()
}

fn lin(beta: &[f64], a: &[f64], b: &[f64]) -> f64 {
    beta.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * (x - y)).sum()
}

/// (treated index, control index) pairs by exhaustive search.
pub fn oracle_pairs(
    c: &Cohort,
    fits: &HazardFits,
    crit: &MatchCriterion,
    tau: f64,
) -> Vec<(usize, usize)> {
    let s = c.subjects();
    let mut treated: Vec<usize> = (0..s.len())
        .filter(|&k| s[k].treated && s[k].treat_time <= tau)
        .collect();
    treated.sort_by(|&a, &b| {
        s[a].treat_time
            .partial_cmp(&s[b].treat_time)
            .unwrap()
            .then(s[a].id.cmp(&s[b].id))
    });
    let mut pairs = Vec::new();
    for k in treated {
        let tk = s[k].treat_time;
        let mut best: Option<(f64, i64, usize)> = None;
        for l in 0..s.len() {
            if l == k || !(s[l].obs_time >= tk && s[l].treat_time > tk) {
                continue;
            }
            let lt = lin(&fits.treatment.beta, &s[l].covariates, &s[k].covariates);
            let ld = lin(&fits.prognostic.beta, &s[l].covariates, &s[k].covariates);
            if let Some(x) = crit.xi_t {
                if lt.abs() >= x.ln() {
                    continue;
                }
            }
            if let Some(x) = crit.xi_d {
                if ld.abs() >= x.ln() {
                    continue;
                }
            }
            let obj = match crit.mode {
                MatchMode::Prognostic => ld.abs(),
                MatchMode::Propensity => lt.abs(),
                MatchMode::Double => (lt + ld).abs(),
            };
            let better = match best {
                None => true,
                Some((o, id, _)) => obj < o || (obj == o && s[l].id < id),
            };
            if better {
                best = Some((obj, s[l].id, l));
            }
        }
        if let Some((_, _, l)) = best {
            pairs.push((k, l));
        }
    }
    pairs
}

/// One contributor: owner index, origin time, exit, strict treatment exit,
/// event flag and the weight function inputs.
struct Contributor {
    owner: usize,
    tk: f64,
    exit: f64,
    treat_exit: f64,
    event: bool,
    zk: Vec<f64>,
    zi: Vec<f64>,
    control: bool,
}

impl Contributor {
    fn at_risk(&self, u: f64) -> bool {
        u <= self.exit && u < self.treat_exit
    }

    fn weight(&self, u: f64, fits: &HazardFits, weighted: bool) -> f64 {
        if !self.at_risk(u) {
            return 0.0;
        }
        if !weighted {
            return 1.0;
        }
        let fc = &fits.censoring;
        if !self.control {
            return (rr(fc, &self.zk) * cum(fc, self.tk + u)).exp();
        }
        let ft = &fits.treatment;
        (rr(fc, &self.zk) * cum(fc, self.tk)
            + rr(fc, &self.zi) * (cum(fc, self.tk + u) - cum(fc, self.tk))
            + rr(ft, &self.zi) * (cum(ft, self.tk + u) - cum(ft, self.tk)))
        .exp()
    }

    fn dies_at(&self, u: f64) -> bool {
        self.event && self.exit == u && u < self.treat_exit
    }
}

/// Brute-force values at one time point.
#[derive(Debug, Clone, Copy)]
pub struct OraclePoint {
    pub t: f64,
    pub lambda1: f64,
    pub lambda0: f64,
    pub var1: f64,
    pub var0: f64,
    pub var_delta: f64,
}

struct Side {
    /// (death time, d Lambda, per-subject d phi)
    jumps: Vec<(f64, f64, Vec<f64>)>,
}

fn side(n: usize, contributors: &[Contributor], fits: &HazardFits, tau1: f64, weighted: bool) -> Side {
    let mut times: Vec<f64> = contributors
        .iter()
        .filter(|c| c.event && c.exit > 0.0 && c.exit <= tau1 && c.exit < c.treat_exit)
        .map(|c| c.exit)
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    let mut jumps = Vec::new();
    for u in times {
        let mut num = 0.0;
        let mut den = 0.0;
        for c in contributors {
            let w = c.weight(u, fits, weighted);
            den += w;
            if c.dies_at(u) {
                num += w;
            }
        }
        let dl = num / den;
        let mut dphi = vec![0.0; n];
        for c in contributors {
            if !c.at_risk(u) {
                continue;
            }
            let w = c.weight(u, fits, weighted);
            let dn = if c.dies_at(u) { 1.0 } else { 0.0 };
            dphi[c.owner] += n as f64 / den * w * (dn - dl);
        }
        jumps.push((u, dl, dphi));
    }
    Side { jumps }
}

fn accumulate(side: &Side, n: usize, t: f64) -> (f64, Vec<f64>) {
    let mut lambda = 0.0;
    let mut phi = vec![0.0; n];
    for (u, dl, dphi) in &side.jumps {
        if *u <= t {
            lambda += dl;
            for i in 0..n {
                phi[i] += dphi[i];
            }
        }
    }
    (lambda, phi)
}

/// Every estimator and variance from their defining sums at each `t`.
pub fn oracle_curves(
    c: &Cohort,
    fits: &HazardFits,
    pairs: &[(usize, usize)],
    tau1: f64,
    times: &[f64],
    weighted: bool,
) -> Vec<OraclePoint> {
    let s = c.subjects();
    let n = s.len();
    let treated: Vec<Contributor> = pairs
        .iter()
        .map(|&(k, _)| Contributor {
            owner: k,
            tk: s[k].treat_time,
            exit: s[k].obs_time - s[k].treat_time,
            treat_exit: f64::INFINITY,
            event: s[k].death,
            zk: s[k].covariates.clone(),
            zi: s[k].covariates.clone(),
            control: false,
        })
        .collect();
    let controls: Vec<Contributor> = pairs
        .iter()
        .map(|&(k, i)| Contributor {
            owner: i,
            tk: s[k].treat_time,
            exit: s[i].obs_time - s[k].treat_time,
            treat_exit: s[i].treat_time - s[k].treat_time,
            event: s[i].death && !s[i].treated,
            zk: s[k].covariates.clone(),
            zi: s[i].covariates.clone(),
            control: true,
        })
        .collect();
    let one = side(n, &treated, fits, tau1, weighted);
    let zero = side(n, &controls, fits, tau1, weighted);
    times
        .iter()
        .map(|&t| {
            let (l1, p1) = accumulate(&one, n, t);
            let (l0, p0) = accumulate(&zero, n, t);
            let (s1, s0) = ((-l1).exp(), (-l0).exp());
            let nf = n as f64;
            OraclePoint {
                t,
                lambda1: l1,
                lambda0: l0,
                var1: p1.iter().map(|x| (s1 * x).powi(2)).sum::<f64>() / nf,
                var0: p0.iter().map(|x| (s0 * x).powi(2)).sum::<f64>() / nf,
                var_delta: p0
                    .iter()
                    .zip(&p1)
                    .map(|(a, b)| (s0 * a - s1 * b).powi(2))
                    .sum::<f64>()
                    / nf,
            }
        })
        .collect()
}

/// One corpus entry.
pub struct GoldenCase {
    pub name: String,
    pub cohort: Cohort,
    pub fits: HazardFits,
    pub criterion: MatchCriterion,
    pub tau: f64,
    pub tau1: f64,
}

fn round(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

/// A fit with the given coefficients and a baseline jumping at each event time.
fn synthetic_fit(c: &Cohort, kind: HazardSpec, beta: Vec<f64>, rng: &mut ChaCha8Rng) -> CoxFit {
    let mut fit = CoxFit::null(kind, c.p());
    let jumps: Vec<(f64, f64)> = kind
        .event_data(c)
        .into_iter()
        .filter(|(_, e)| *e)
        .map(|(t, _)| (t, rng.random_range(0.05..0.6)))
        .collect();
    fit.beta = beta;
    fit.baseline_cumhaz = StepFunction::from_jumps(jumps).expect("valid jumps");
    fit
}

fn random_case(index: usize) -> GoldenCase {
    let mut rng = ChaCha8Rng::seed_from_u64(0x601D_0000 + index as u64);
    let n = rng.random_range(3..=8);
    let mut subjects = Vec::with_capacity(n);
    for id in 1..=n as i64 {
        let z = vec![round(rng.random_range(-1.0..1.0), 0.05), round(rng.random_range(-1.0..1.0), 0.05)];
        let u = round(rng.random_range(0.2..4.0), 0.1);
        let death = rng.random_bool(0.7);
        if rng.random_bool(0.45) && u > 0.15 {
            let t = round(rng.random_range(0.0..u), 0.1).min(u - 0.05).max(0.0);
            subjects.push(SubjectRecord::treated(id, u, death, t, z));
        } else {
            subjects.push(SubjectRecord::untreated(id, u, death, z));
        }
    }
    if !subjects.iter().any(|s| s.treated) {
        let s = &mut subjects[0];
        s.treated = true;
        s.treat_time = round(s.obs_time / 2.0, 0.1).min(s.obs_time - 0.05);
    }
    let cohort = validate_cohort(subjects).expect("valid golden cohort");
    let mut coef = || vec![rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
    let (bt, bd, bc) = (coef(), coef(), coef());
    let fits = HazardFits {
        treatment: synthetic_fit(&cohort, HazardSpec::Treatment, bt, &mut rng),
        prognostic: synthetic_fit(&cohort, HazardSpec::PretreatmentDeath, bd, &mut rng),
        censoring: synthetic_fit(&cohort, HazardSpec::Censoring, bc, &mut rng),
    };
    let criterion = match index % 4 {
        0 => MatchCriterion::prognostic(1.5),
        1 => MatchCriterion::propensity(1.3),
        2 => MatchCriterion::double(1.4, 1.4),
        _ => MatchCriterion::new(MatchMode::Prognostic, Some(2.0), Some(3.0)),
    }
    .unwrap();
    GoldenCase {
        name: format!("random-{index:02}"),
        cohort,
        fits,
        criterion,
        tau: if index % 5 == 0 { 1.0 } else { 3.0 },
        tau1: if index % 3 == 0 { 1.5 } else { 5.0 },
    }
}

/// Hand-written cases covering the three features explicitly.
fn hand_cases() -> Vec<GoldenCase> {
    let t = |id, u, d, tt, z: f64| SubjectRecord::treated(id, u, d, tt, vec![z]);
    let un = |id, u, d, z: f64| SubjectRecord::untreated(id, u, d, vec![z]);
    let cohorts = vec![
        // a control treated later than its treated partner
        ("late-treated-control", vec![t(1, 3.0, true, 1.0, 0.1), t(2, 4.0, true, 2.0, 0.1), un(3, 0.5, true, 0.0)]),
        // the second treated subject has nobody left at risk
        ("unmatched-last", vec![t(1, 2.0, true, 0.5, 0.0), un(2, 4.0, false, 0.0), t(3, 5.0, true, 4.5, 0.2)]),
        // censored treated and control, tied death times
        ("censored-ties", vec![
            t(1, 2.0, false, 1.0, 0.0), t(2, 3.0, true, 2.0, 0.3), un(3, 3.0, true, 0.1),
            un(4, 4.0, false, -0.2), un(5, 2.0, true, 0.0),
        ]),
        // a control leaving exactly at the treatment time is still eligible
        ("exit-at-treatment-time", vec![t(1, 3.0, true, 1.0, 0.0), un(2, 1.0, true, 0.0), un(3, 2.5, true, 0.5)]),
        ("shared-control", vec![
            t(1, 2.0, true, 1.0, 0.0), t(2, 2.5, true, 1.5, 0.0), un(3, 3.5, true, 0.0), un(4, 3.0, false, 2.0),
        ]),
    ];
    cohorts
        .into_iter()
        .enumerate()
        .map(|(i, (name, subjects))| {
            let cohort = validate_cohort(subjects).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0xAB00 + i as u64);
            let fits = HazardFits {
                treatment: synthetic_fit(&cohort, HazardSpec::Treatment, vec![0.4], &mut rng),
                prognostic: synthetic_fit(&cohort, HazardSpec::PretreatmentDeath, vec![-0.3], &mut rng),
                censoring: synthetic_fit(&cohort, HazardSpec::Censoring, vec![0.2], &mut rng),
            };
            GoldenCase {
                name: name.to_string(),
                cohort,
                fits,
                criterion: MatchCriterion::prognostic(1.5).unwrap(),
                tau: 3.0,
                tau1: 5.0,
            }
        })
        .collect()
}

pub fn golden_corpus() -> Vec<GoldenCase> {
    let mut cases = hand_cases();
    cases.extend((0..36).map(random_case));
    cases
}

/// Evaluation grid: 0, every shifted death time, midpoints and `tau1`.
pub fn oracle_grid(case: &GoldenCase) -> Vec<f64> {
    let s = case.cohort.subjects();
    let mut pts = vec![0.0, case.tau1];
    for a in s {
        for b in s {
            if b.treated {
                let u = a.obs_time - b.treat_time;
                if u > 0.0 && u <= case.tau1 {
                    pts.push(u);
                    pts.push((u + 0.013).min(case.tau1));
                    pts.push((u - 0.013).max(0.0));
                }
            }
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
