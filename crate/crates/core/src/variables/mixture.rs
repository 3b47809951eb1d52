//! Mixture-of-Gaussians variable with a Dirichlet prior on the weights.
//!
//! `p(s | {m_i}, {v_i}, k) = N(s | m_k, e^{-v_k})`, `p(k | π) = π_k`,
//! `π ~ Dir(u)`. The posterior is fully factorial: a categorical `q(k)` and a
//! Gaussian `q(s)` per sample, and a Dirichlet `q(π)` on the shared weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::messages::{forward_gaussian, sq_misfit, ForwardStats};
use crate::scalar::{ln_2pi, Real};
use crate::variables::gaussian::GaussianPosterior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePosterior<T> {
    /// `q(k)` per sample, each row on the simplex.
    pub resp: Vec<Vec<T>>,
    pub value: GaussianPosterior<T>,
}

impl<T: Real> MixturePosterior<T> {
    pub fn new(value: GaussianPosterior<T>, k: usize) -> Self {
        let resp = vec![uniform(k); value.len()];
        Self { resp, value }
    }

    pub fn components(&self) -> usize {
        self.resp.first().map_or(0, Vec::len)
    }

    /// Resets responsibilities to uniform if the component count changed.
    pub fn resize(&mut self, k: usize) {
        if self.components() != k || self.resp.len() != self.value.len() {
            self.resp = vec![uniform(k); self.value.len()];
        }
    }

    pub fn stats(&self, t: usize) -> ForwardStats<T> {
        forward_gaussian(self.value.slot(t)).without_exp()
    }
}

fn uniform<T: Real>(k: usize) -> Vec<T> {
    let w = T::one() / T::lit(k.max(1) as f64);
    vec![w; k]
}

/// `⟨−log N(s | m_i, e^{-v_i})⟩` per component, without the `½ ln 2π`.
pub fn component_costs<T: Real>(
    s: ForwardStats<T>,
    means: &[ForwardStats<T>],
    vars: &[ForwardStats<T>],
) -> Result<Vec<T>> {
    means
        .iter()
        .zip(vars)
        .map(|(m, v)| {
            let ev = v.exp_mean.ok_or(Error::MissingExpStat)?;
            Ok(T::half() * (ev * sq_misfit(s, *m) - v.mean))
        })
        .collect()
}

/// Closed-form `q(k)` update: `q(k=i) ∝ exp(⟨ln π_i⟩ − cost_i)`.
pub fn responsibilities<T: Real>(log_weights: &[T], costs: &[T]) -> Vec<T> {
    let logits: Vec<T> = log_weights.iter().zip(costs).map(|(&lw, &c)| lw - c).collect();
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Cost of one sample: component likelihoods and the `k` prior under `q(k)`,
/// plus `⟨log q(k)⟩` and, when latent, `⟨log q(s)⟩`.
pub fn sample_cost<T: Real>(
    resp: &[T],
    s: ForwardStats<T>,
    observed: bool,
    log_weights: &[T],
    means: &[ForwardStats<T>],
    vars: &[ForwardStats<T>],
) -> Result<T> {
    let costs = component_costs(s, means, vars)?;
    let mut c = T::half() * ln_2pi::<T>();
    for ((&r, &ci), &lw) in resp.iter().zip(&costs).zip(log_weights) {
        if r > T::zero() {
            c = c + r * (ci - lw + r.ln());
        }
    }
    if !observed {
        c = c + crate::variables::gaussian::neg_entropy(s.var);
    }
    Ok(c)
}

/// Dirichlet posterior over mixture weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPosterior<T> {
    /// Prior concentrations `u`. Empty until sized by the network (then all ones).
    pub prior: Vec<T>,
    /// Posterior pseudo-counts `ũ`.
    pub counts: Vec<T>,
}

impl<T: Real> DirichletPosterior<T> {
    pub fn new(prior: Vec<T>) -> Self {
        Self { counts: prior.clone(), prior }
    }

    pub fn components(&self) -> usize {
        self.prior.len()
    }

    /// `⟨ln π_i⟩ = ψ(ũ_i) − ψ(Σ ũ)`.
    pub fn log_weights(&self) -> Vec<T> {
        let total: T = self.counts.iter().copied().sum();
        let dt = total.digamma();
        self.counts.iter().map(|&c| c.digamma() - dt).collect()
    }

    /// `KL(Dir(ũ) ‖ Dir(u))`.
    pub fn cost(&self) -> T {
        let su: T = self.counts.iter().copied().sum();
        let sp: T = self.prior.iter().copied().sum();
        let dsu = su.digamma();
        let mut kl = su.ln_gamma() - sp.ln_gamma();
        for (&c, &p) in self.counts.iter().zip(&self.prior) {
            kl = kl - c.ln_gamma() + p.ln_gamma() + (c - p) * (c.digamma() - dsu);
        }
        kl
    }

    /// Conjugate update from summed responsibilities.
    pub fn update(&mut self, summed_resp: &[T]) {
        for ((c, &p), &r) in self.counts.iter_mut().zip(&self.prior).zip(summed_resp) {
            *c = p + r;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_components_split_evenly() {
        let s = ForwardStats::constant(0.0f64);
        let means = [ForwardStats::constant(-1.0), ForwardStats::constant(1.0)];
        let vars = [ForwardStats::constant(0.0); 2];
        let costs = component_costs(s, &means, &vars).unwrap();
        let r = responsibilities(&[0.0, 0.0], &costs);
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn separated_components_pick_center() {
        let s = ForwardStats::constant(5.0f64);
        let means = [ForwardStats::constant(-5.0), ForwardStats::constant(5.0)];
        let vars = [ForwardStats::constant(0.0); 2];
        let costs = component_costs(s, &means, &vars).unwrap();
        let r = responsibilities(&[0.5f64.ln(), 0.5f64.ln()], &costs);
        assert!(r[1] > 0.99);
        assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_kl_zero_at_prior() {
        let d = DirichletPosterior::new(vec![1.0f64, 2.0, 0.5]);
        assert!(d.cost().abs() < 1e-12);
        let mut d2 = d.clone();
        d2.update(&[3.0, 0.0, 1.0]);
        assert!(d2.cost() > 0.0);
        assert_eq!(d2.counts, vec![4.0, 2.0, 1.5]);
    }
}
