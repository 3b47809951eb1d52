//! Evidence node: a fading virtual Gaussian likelihood on its parent, used to
//! steer initialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::messages::{ForwardStats, MeanPotential};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSchedule<T> {
    /// Target per sample, or a single value broadcast over samples.
    pub target: Vec<T>,
    pub precision: T,
    pub fade_sweeps: usize,
    pub sweep: usize,
}

impl<T: Real> EvidenceSchedule<T> {
    pub fn new(target: Vec<T>, precision: T, fade_sweeps: usize) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::invalid("evidence target", "empty"));
        }
        if !(precision > T::zero()) {
            return Err(Error::invalid("evidence precision", "must be positive"));
        }
        if fade_sweeps == 0 {
            return Err(Error::invalid("fade_sweeps", "must be positive"));
        }
        Ok(Self { target, precision, fade_sweeps, sweep: 0 })
    }

    /// `λ = max(0, 1 − sweep/fade_sweeps)`.
    pub fn weight(&self) -> T {
        let frac = T::lit(self.sweep as f64) / T::lit(self.fade_sweeps as f64);
        (T::one() - frac).max(T::zero())
    }

    pub fn is_inert(&self) -> bool {
        self.sweep >= self.fade_sweeps
    }

    pub fn target_at(&self, t: usize) -> T {
        if self.target.len() == 1 {
            self.target[0]
        } else {
            self.target[t]
        }
    }

    pub fn advance(&mut self) {
        if !self.is_inert() {
            self.sweep += 1;
        }
    }

    /// `λ·½·precision·[(⟨θ⟩ − target)² + Var θ]` for one sample.
    pub fn cost(&self, t: usize, parent: ForwardStats<T>) -> T {
        let lambda = self.weight();
        if lambda == T::zero() {
            return T::zero();
        }
        let d = parent.mean - self.target_at(t);
        lambda * T::half() * self.precision * (d * d + parent.var)
    }

    pub fn potential(&self, t: usize) -> MeanPotential<T> {
        let lambda = self.weight();
        MeanPotential {
            quad: lambda * T::half() * self.precision,
            lin: -lambda * self.precision * self.target_at(t),
        }
    }
}

/// Cost contributed by one evidence sample under `schedule`.
pub fn evidence_cost<T: Real>(schedule: &EvidenceSchedule<T>, t: usize, parent_stats: ForwardStats<T>) -> T {
    schedule.cost(t, parent_stats)
}
