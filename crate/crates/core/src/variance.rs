//! Influence-function variance estimators for `S1`, `S0` and their difference.
//!
//! For each side the per-subject influence is
//!
//! ```text
//! phi_i(t) = sum_{jumps u <= t} pi(u)^{-1} w_i(u) { dN_i(u) - dLambda(u) },
//! pi(u)    = n^{-1} sum_i w_i(u),
//! ```
//!
//! where on the treatment-free side a subject's contributions are summed over
//! every matched set in which it serves as control. Then
//!
//! ```text
//! sigma1^2(t) = n^{-1} sum_i { S1(t) phi1_i(t) }^2
//! sigma0^2(t) = n^{-1} sum_i { S0(t) phi0_i(t) }^2
//! sigmad^2(t) = n^{-1} sum_i { S0(t) phi0_i(t) - S1(t) phi1_i(t) }^2
//! ```
//!
//! Matching and weight-estimation randomness are ignored.

use serde::Serialize;
use thiserror::Error;

use crate::estimators::{CurveSide, SideEstimate, SurvivalCurve, VarianceCurve};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarianceError {
    #[error("influence tables and curves come from different cohorts")]
    CohortMismatch,
    #[error("expected a {0:?} input")]
    WrongSide(CurveSide),
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Sparse influence increments for one side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceTable {
    pub side: CurveSide,
    pub n: usize,
    /// Per jump time: `(subject index, d phi)` aggregated per subject.
    pub increments: Vec<(f64, Vec<(usize, f64)>)>,
    /// `pi_hat(u)` at each jump time.
    pub pi_hat: Vec<(f64, f64)>,
}

impl InfluenceTable {
    /// Dense `phi_i(t)` for every subject.
    pub fn phi_at(&self, t: f64) -> Vec<f64> {
        let mut phi = vec![0.0; self.n];
        for (u, incs) in &self.increments {
            if *u > t {
                break;
            }
            for (i, d) in incs {
                phi[*i] += d;
            }
        }
        phi
    }

    pub fn jump_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.increments.iter().map(|(u, _)| *u)
    }
}

fn influence(side: &SideEstimate) -> InfluenceTable {
    let n = side.curve.n;
    let nf = n as f64;
    let mut increments = Vec::with_capacity(side.jumps.len());
    let mut pi_hat = Vec::with_capacity(side.jumps.len());
    let mut scratch: Vec<f64> = vec![0.0; n];
    let mut marked = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();
    for jump in &side.jumps {
        pi_hat.push((jump.time, jump.risk_sum / nf));
        let scale = nf / jump.risk_sum;
        for &(j, w) in &jump.at_risk {
            let dn = if jump.deaths.contains(&j) { 1.0 } else { 0.0 };
            let owner = side.processes[j].owner;
            if !marked[owner] {
                marked[owner] = true;
                touched.push(owner);
            }
            scratch[owner] += scale * w * (dn - jump.increment);
        }
        touched.sort_unstable();
        let incs = touched.iter().map(|&i| (i, scratch[i])).collect();
        for &i in &touched {
            scratch[i] = 0.0;
            marked[i] = false;
        }
        touched.clear();
        increments.push((jump.time, incs));
    }
    InfluenceTable {
        side: side.curve.side,
        n,
        increments,
        pi_hat,
    }
}

/// `phi1_i` for every subject; subjects outside the matched treated sample get 0.
pub fn influence_treated(side: &SideEstimate) -> Result<InfluenceTable, VarianceError> {
    if side.curve.side != CurveSide::Treated {
        return Err(VarianceError::WrongSide(CurveSide::Treated));
    }
    Ok(influence(side))
}

/// `phi0_i`, summed over every matched set containing subject `i` as control.
pub fn influence_control(side: &SideEstimate) -> Result<InfluenceTable, VarianceError> {
    if side.curve.side != CurveSide::TreatmentFree {
        return Err(VarianceError::WrongSide(CurveSide::TreatmentFree));
    }
    Ok(influence(side))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceCurves {
    pub treated: VarianceCurve,
    pub control: VarianceCurve,
    pub delta: VarianceCurve,
}

/// Evaluates all three variances on the union of both jump grids; between
/// grid points they are constant.
pub fn variance_curves(
    phi1: &InfluenceTable,
    phi0: &InfluenceTable,
    s1: &SurvivalCurve,
    s0: &SurvivalCurve,
) -> Result<VarianceCurves, VarianceError> {
    if phi1.side != CurveSide::Treated || s1.side != CurveSide::Treated {
        return Err(VarianceError::WrongSide(CurveSide::Treated));
    }
    if phi0.side != CurveSide::TreatmentFree || s0.side != CurveSide::TreatmentFree {
        return Err(VarianceError::WrongSide(CurveSide::TreatmentFree));
    }
    let n = phi1.n;
    if phi0.n != n || s1.n != n || s0.n != n {
        return Err(VarianceError::CohortMismatch);
    }
    let nf = n as f64;
    let mut grid: Vec<f64> = phi1.jump_times().chain(phi0.jump_times()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut f1 = vec![0.0; n];
    let mut f0 = vec![0.0; n];
    let mut involved = vec![false; n];
    let mut members: Vec<usize> = Vec::new();
    let (mut c1, mut c0) = (0, 0);
    let mut out = VarianceCurves {
        treated: VarianceCurve { times: grid.clone(), values: Vec::with_capacity(grid.len()) },
        control: VarianceCurve { times: grid.clone(), values: Vec::with_capacity(grid.len()) },
        delta: VarianceCurve { times: grid.clone(), values: Vec::with_capacity(grid.len()) },
    };

    let s1_hat = |t: f64| (-s1.cumhaz().map_or(0.0, |f| f.eval(t))).exp();
    let s0_hat = |t: f64| (-s0.cumhaz().map_or(0.0, |f| f.eval(t))).exp();

    for &t in &grid {
        for (table, phi, cursor) in [(phi1, &mut f1, &mut c1), (phi0, &mut f0, &mut c0)] {
            while *cursor < table.increments.len() && table.increments[*cursor].0 <= t {
                for &(i, d) in &table.increments[*cursor].1 {
                    phi[i] += d;
                    if !involved[i] {
                        involved[i] = true;
                        members.push(i);
                    }
                }
                *cursor += 1;
            }
        }
        let (a1, a0) = (s1_hat(t), s0_hat(t));
        let v1: CompensatedSum = members.iter().map(|&i| (a1 * f1[i]).powi(2)).collect();
        let v0: CompensatedSum = members.iter().map(|&i| (a0 * f0[i]).powi(2)).collect();
        let vd: CompensatedSum = members
            .iter()
            .map(|&i| (a0 * f0[i] - a1 * f1[i]).powi(2))
            .collect();
        out.treated.values.push(v1.value() / nf);
        out.control.values.push(v0.value() / nf);
        out.delta.values.push(vd.value() / nf);
    }
    Ok(out)
}
