//! Rectified Gaussian variable, prior `2H(s)N(s | 0, e^{-v})`.
//!
//! The posterior family is a Gaussian `N(loc, scale2)` truncated to
//! `s ≥ 0`. Since every child potential is quadratic in `s`, the optimal
//! unrestricted `q` is itself a member of this family, so the update is
//! closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::messages::{ForwardStats, MeanPotential};
use crate::scalar::{ln_2pi, Real};
use crate::special::TruncatedTail;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedQ<T> {
    pub loc: T,
    pub scale2: T,
}

impl<T: Real> TruncatedQ<T> {
    fn alpha(&self) -> T {
        self.loc / self.scale2.sqrt()
    }

    fn tail(&self) -> TruncatedTail {
        TruncatedTail::at(self.alpha().as_f64())
    }

    pub fn stats(&self) -> ForwardStats<T> {
        let tail = self.tail();
        let sigma = self.scale2.sqrt();
        ForwardStats {
            mean: sigma * T::lit(tail.shifted),
            var: self.scale2 * T::lit(tail.variance_factor()),
            exp_mean: None,
        }
    }

    /// `⟨log q(s)⟩`.
    pub fn neg_entropy(&self) -> T {
        let tail = self.tail();
        let alpha = self.alpha();
        let ln_z = alpha.ln_norm_cdf();
        -T::half() * (ln_2pi::<T>() + self.scale2.ln()) - ln_z - T::half() * (T::one() - alpha * T::lit(tail.inv_mills))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifiedPosterior<T> {
    pub loc: Vec<T>,
    pub scale2: Vec<T>,
}

impl<T: Real> RectifiedPosterior<T> {
    pub fn new(len: usize, loc: T, scale2: T) -> Self {
        Self { loc: vec![loc; len], scale2: vec![scale2; len] }
    }

    pub fn len(&self) -> usize {
        self.loc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loc.is_empty()
    }

    pub fn slot(&self, t: usize) -> TruncatedQ<T> {
        TruncatedQ { loc: self.loc[t], scale2: self.scale2[t] }
    }

    pub fn set_slot(&mut self, t: usize, q: TruncatedQ<T>) {
        self.loc[t] = q.loc;
        self.scale2[t] = q.scale2.max(T::variance_floor());
    }

    pub fn stats(&self, t: usize) -> ForwardStats<T> {
        self.slot(t).stats()
    }
}

/// `⟨−log 2H(s)N(s|0, e^{-v})⟩ + ⟨log q(s)⟩` for one sample.
pub fn sample_cost<T: Real>(q: TruncatedQ<T>, var_parent: ForwardStats<T>) -> Result<T> {
    let ev = var_parent.exp_mean.ok_or(Error::MissingExpStat)?;
    let s = q.stats();
    let nll = -T::two().ln() + T::half() * (ln_2pi::<T>() - var_parent.mean + ev * s.second_moment());
    Ok(nll + q.neg_entropy())
}

/// Closed-form update given the prior's variance parent and the aggregated
/// children potential.
pub fn update_rectified<T: Real>(var_parent: ForwardStats<T>, children: MeanPotential<T>) -> Result<TruncatedQ<T>> {
    let ev = var_parent.exp_mean.ok_or(Error::MissingExpStat)?;
    let a = children.quad + T::half() * ev;
    if !(a > T::zero()) {
        return Err(Error::NonPositiveQuad(a.as_f64()));
    }
    Ok(TruncatedQ { loc: -children.lin / (T::two() * a), scale2: (T::one() / (T::two() * a)).max(T::variance_floor()) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_normal_moments() {
        let s = TruncatedQ { loc: 0.0, scale2: 1.0 }.stats();
        assert!((s.mean - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((s.var - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-14);
    }

    #[test]
    fn prior_only_update_recovers_prior_and_zero_cost() {
        let v = ForwardStats::constant(0.0f64);
        let q = update_rectified(v, MeanPotential { quad: 0.0, lin: 0.0 }).unwrap();
        assert_eq!((q.loc, q.scale2), (0.0, 1.0));
        // q equals the prior, so KL = 0.
        assert!(sample_cost(q, v).unwrap().abs() < 1e-14);
    }

    #[test]
    fn strong_negative_pull_keeps_support() {
        let v = ForwardStats::constant(0.0f64);
        let q = update_rectified(v, MeanPotential { quad: 0.5, lin: 1e3 }).unwrap();
        let s = q.stats();
        assert!(s.mean > 0.0 && s.mean < 1e-2);
        assert!(sample_cost(q, v).unwrap().is_finite());
    }
}
