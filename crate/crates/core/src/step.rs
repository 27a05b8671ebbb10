//! Right-continuous step functions stored as exact jump lists.
//!
//! `F(t) = sum of jump sizes at jump times u <= t`, and `F(t) = 0` below the
//! first jump. Cumulative hazards, Breslow baselines and Nelson-Aalen
//! estimates are all instances.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("jump times and sizes differ in length ({times} vs {sizes})")]
    LengthMismatch { times: usize, sizes: usize },
    #[error("jump times must be strictly increasing (index {index})")]
    NotIncreasing { index: usize },
    #[error("jump time at index {index} is negative or not finite")]
    InvalidTime { index: usize },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StepFunction {
    times: Vec<f64>,
    sizes: Vec<f64>,
    #[serde(skip_serializing)]
    cumulative: Vec<f64>,
}

impl StepFunction {
    pub fn new(times: Vec<f64>, sizes: Vec<f64>) -> Result<Self, StepError> {
        if times.len() != sizes.len() {
            return Err(StepError::LengthMismatch {
                times: times.len(),
                sizes: sizes.len(),
            });
        }
        for (index, t) in times.iter().enumerate() {
            if !t.is_finite() || *t < 0.0 {
                return Err(StepError::InvalidTime { index });
            }
            if index > 0 && times[index - 1] >= *t {
                return Err(StepError::NotIncreasing { index });
            }
        }
        let mut cumulative = Vec::with_capacity(sizes.len());
        let mut acc = 0.0;
        for s in &sizes {
            acc += s;
            cumulative.push(acc);
        }
        Ok(Self {
            times,
            sizes,
            cumulative,
        })
    }

    /// The identically-zero function.
    pub fn zero() -> Self {
        Self::default()
    }

    /// Builds from (time, size) pairs in any order; equal times are merged.
    pub fn from_jumps(mut jumps: Vec<(f64, f64)>) -> Result<Self, StepError> {
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut times: Vec<f64> = Vec::with_capacity(jumps.len());
        let mut sizes: Vec<f64> = Vec::with_capacity(jumps.len());
        for (t, s) in jumps {
            match times.last() {
                Some(&last) if last == t => *sizes.last_mut().unwrap() += s,
                _ => {
                    times.push(t);
                    sizes.push(s);
                }
            }
        }
        Self::new(times, sizes)
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.times
    }

    pub fn jump_sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of jumps at times `<= t`.
    fn count_le(&self, t: f64) -> usize {
        self.times.partition_point(|&u| u <= t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.count_le(t) {
            0 => 0.0,
            m => self.cumulative[m - 1],
        }
    }

    /// Left limit `F(t-)`.
    pub fn eval_left(&self, t: f64) -> f64 {
        match self.times.partition_point(|&u| u < t) {
            0 => 0.0,
            m => self.cumulative[m - 1],
        }
    }

    /// Union of jumps; sizes at shared times are added.
    pub fn merge(&self, other: &StepFunction) -> StepFunction {
        let jumps = self
            .times
            .iter()
            .copied()
            .zip(self.sizes.iter().copied())
            .chain(other.times.iter().copied().zip(other.sizes.iter().copied()))
            .collect();
        Self::from_jumps(jumps).expect("merging valid step functions")
    }

    /// Multiplies every jump by `factor`.
    pub fn scaled(&self, factor: f64) -> StepFunction {
        Self::new(
            self.times.clone(),
            self.sizes.iter().map(|s| s * factor).collect(),
        )
        .expect("scaling preserves validity")
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.sizes.iter().all(|s| *s >= 0.0)
    }
}

/// `F(t)` for `t >= 0`; a jump exactly at `t` is included.
pub fn step_eval(f: &StepFunction, t: f64) -> f64 {
    f.eval(t)
}
