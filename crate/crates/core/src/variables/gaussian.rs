//! Gaussian variable `s ~ N(m, e^{-v})` with factorial posterior `N(s̄, s̃)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::messages::{forward_gaussian, sq_misfit, ForwardStats, NonlinKind, NormalQ};
use crate::scalar::{ln_2pi, Real};

/// Per-sample posterior of a Gaussian node. Observed nodes hold the data in
/// `mean` with zero variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub observed: bool,
}

impl<T: Real> GaussianPosterior<T> {
    pub fn latent(len: usize, mean: T, var: T) -> Self {
        Self { mean: vec![mean; len], var: vec![var; len], observed: false }
    }

    pub fn observed(data: Vec<T>) -> Self {
        let var = vec![T::zero(); data.len()];
        Self { mean: data, var, observed: true }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn slot(&self, t: usize) -> NormalQ<T> {
        NormalQ::new(self.mean[t], self.var[t])
    }

    pub fn set_slot(&mut self, t: usize, q: NormalQ<T>) {
        self.mean[t] = q.mean;
        self.var[t] = q.var.max(T::variance_floor());
    }

    pub fn stats(&self, t: usize) -> ForwardStats<T> {
        forward_gaussian(self.slot(t))
    }
}

/// `⟨-log N(s | m, e^{-v})⟩` for one sample.
pub fn neg_log_density<T: Real>(s: ForwardStats<T>, m: ForwardStats<T>, v: ForwardStats<T>) -> Result<T> {
    let ev = v.exp_mean.ok_or(Error::MissingExpStat)?;
    Ok(T::half() * (ln_2pi::<T>() - v.mean + ev * sq_misfit(s, m)))
}

/// `⟨log q(s)⟩ = -½ ln(2πe·s̃)`, the negative entropy of a latent sample.
pub fn neg_entropy<T: Real>(var: T) -> T {
    -T::half() * (ln_2pi::<T>() + T::one() + var.max(T::variance_floor()).ln())
}

/// Cost contribution of one sample: expected negative log prior plus, for
/// latent samples, the negative entropy of `q`.
pub fn sample_cost<T: Real>(
    q: NormalQ<T>,
    observed: bool,
    mean_parent: ForwardStats<T>,
    var_parent: ForwardStats<T>,
) -> Result<T> {
    let s = forward_gaussian(q);
    let nll = neg_log_density(s, mean_parent, var_parent)?;
    Ok(if observed { nll } else { nll + neg_entropy(q.var) })
}

/// A nonlinearity fed by this node: its children's potential on the
/// nonlinearity output, `quad·⟨f²⟩ + lin·⟨f⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinTerm<T> {
    pub kind: NonlinKind,
    pub quad: T,
    pub lin: T,
}

/// Everything in the total cost that depends on one sample of a Gaussian
/// node, as a function of `(s̄, s̃)`:
///
/// `quad(s̄²+s̃) + lin·s̄ + exp_coef·e^{s̄+s̃/2} + Σ nonlinear terms − ½ ln s̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLocalCost<T> {
    pub quad: T,
    pub lin: T,
    pub exp_coef: T,
    pub nonlin: Vec<NonlinTerm<T>>,
}

const MAX_NEWTON_ITERS: usize = 100;
const MAX_HALVINGS: usize = 50;
const GRAD_TOL: f64 = 1e-10;

impl<T: Real> GaussianLocalCost<T> {
    pub fn new(quad: T, lin: T, exp_coef: T) -> Self {
        Self { quad, lin, exp_coef, nonlin: Vec::new() }
    }

    fn is_quadratic(&self) -> bool {
        self.exp_coef == T::zero() && self.nonlin.iter().all(|t| t.quad == T::zero() && t.lin == T::zero())
    }

    pub fn value(&self, q: NormalQ<T>) -> T {
        if !(q.var > T::zero()) || !q.mean.is_finite() || !q.var.is_finite() {
            return T::infinity();
        }
        let mut f = self.quad * (q.mean * q.mean + q.var) + self.lin * q.mean - T::half() * q.var.ln();
        if self.exp_coef != T::zero() {
            f = f + self.exp_coef * (q.mean + T::half() * q.var).exp();
        }
        for t in &self.nonlin {
            let m = t.kind.moments(q);
            f = f + t.quad * m.m2 + t.lin * m.m1;
        }
        if f.is_nan() {
            T::infinity()
        } else {
            f
        }
    }

    /// Gradient with respect to `(s̄, s̃)`.
    pub fn gradient(&self, q: NormalQ<T>) -> [T; 2] {
        let e = if self.exp_coef != T::zero() {
            self.exp_coef * (q.mean + T::half() * q.var).exp()
        } else {
            T::zero()
        };
        let mut g = [
            T::two() * self.quad * q.mean + self.lin + e,
            self.quad + T::half() * e - T::half() / q.var,
        ];
        for t in &self.nonlin {
            let m = t.kind.moments(q);
            g[0] = g[0] + t.quad * m.grad2[0] + t.lin * m.grad1[0];
            g[1] = g[1] + t.quad * m.grad2[1] + t.lin * m.grad1[1];
        }
        g
    }

    /// Hessian `[μμ, μv, vv]`.
    pub fn hessian(&self, q: NormalQ<T>) -> [T; 3] {
        let e = if self.exp_coef != T::zero() {
            self.exp_coef * (q.mean + T::half() * q.var).exp()
        } else {
            T::zero()
        };
        let mut h = [
            T::two() * self.quad + e,
            T::half() * e,
            T::lit(0.25) * e + T::half() / (q.var * q.var),
        ];
        for t in &self.nonlin {
            let m = t.kind.moments(q);
            for (k, hk) in h.iter_mut().enumerate() {
                *hk = *hk + t.quad * m.hess2[k] + t.lin * m.hess1[k];
            }
        }
        h
    }

    /// Closed-form minimizer when only the quadratic part is present.
    pub fn quadratic_minimizer(&self) -> Option<NormalQ<T>> {
        if self.quad > T::zero() {
            let two_a = T::two() * self.quad;
            Some(NormalQ::new(-self.lin / two_a, (T::one() / two_a).max(T::variance_floor())))
        } else {
            None
        }
    }

    /// Minimizes the local cost, never returning a point worse than `start`.
    pub fn minimize(&self, start: NormalQ<T>) -> NormalQ<T> {
        let mut best = start;
        let mut best_f = self.value(start);
        if let Some(c) = self.quadratic_minimizer() {
            let fc = self.value(c);
            if fc <= best_f || !best_f.is_finite() {
                best = c;
                best_f = fc;
            }
            if self.is_quadratic() {
                return best;
            }
        }
        if !best_f.is_finite() {
            return best;
        }
        let tol = T::lit(GRAD_TOL);
        let mut x = best;
        let mut fx = best_f;
        for _ in 0..MAX_NEWTON_ITERS {
            let g = self.gradient(x);
            if g[0].abs().max(g[1].abs()) < tol {
                break;
            }
            let h = self.hessian(x);
            let det = h[0] * h[2] - h[1] * h[1];
            let step = if h[0] > T::zero() && det > T::zero() {
                [-(h[2] * g[0] - h[1] * g[1]) / det, -(h[0] * g[1] - h[1] * g[0]) / det]
            } else {
                // Not locally convex: scaled steepest descent.
                let d0 = h[0].abs().max(T::lit(1e-12));
                let d1 = h[2].abs().max(T::lit(1e-12));
                [-g[0] / d0, -g[1] / d1]
            };
            let mut t = T::one();
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let cand = NormalQ::new(x.mean + t * step[0], x.var + t * step[1]);
                if cand.var > T::zero() {
                    let fc = self.value(cand);
                    if fc < fx {
                        accepted = Some((cand, fc));
                        break;
                    }
                }
                t = t * T::half();
            }
            match accepted {
                Some((c, fc)) => {
                    x = c;
                    fx = fc;
                }
                None => break,
            }
        }
        if fx <= best_f {
            x
        } else {
            best
        }
    }
}

/// Posterior update of a Gaussian sample whose cost in its own coordinates is
/// `a(s̄²+s̃) + b·s̄ + c·e^{s̄+s̃/2} − ½ ln s̃`.
///
/// With `c = 0` the minimizer is closed form; otherwise a damped Newton
/// iteration started from the `c = 0` solution.
pub fn update_gaussian<T: Real>(a: T, b: T, c: T) -> Result<NormalQ<T>> {
    if !(a > T::zero()) {
        return Err(Error::NonPositiveQuad(a.as_f64()));
    }
    if c < T::zero() {
        return Err(Error::invalid("exp coefficient", "must be non-negative"));
    }
    let local = GaussianLocalCost::new(a, b, c);
    let start = local.quadratic_minimizer().expect("a > 0");
    Ok(local.minimize(start))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_update() {
        let q = update_gaussian(1.0, -2.0, 0.0).unwrap();
        assert_eq!((q.mean, q.var), (1.0, 0.5));
        assert!(matches!(update_gaussian(0.0, 1.0, 0.0), Err(Error::NonPositiveQuad(_))));
    }

    #[test]
    fn exp_term_update_is_stationary() {
        let q = update_gaussian(0.5f64, 0.0, 1.0).unwrap();
        let e = (q.mean + 0.5 * q.var).exp();
        assert!((2.0 * 0.5 * q.mean + e).abs() < 1e-8);
        assert!((1.0 / (2.0 * q.var) - 0.5 - 0.5 * e).abs() < 1e-8);
    }

    #[test]
    fn observed_unit_cost() {
        let c = sample_cost(
            NormalQ::new(0.0f64, 0.0),
            true,
            ForwardStats::constant(0.0),
            ForwardStats::constant(0.0),
        )
        .unwrap();
        assert!((c - 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn minimize_never_worse_than_start() {
        let local = GaussianLocalCost {
            quad: 0.3,
            lin: 0.4,
            exp_coef: 0.2,
            nonlin: vec![NonlinTerm { kind: NonlinKind::ExpSquare, quad: 2.0, lin: -3.0 }],
        };
        for &(m, v) in &[(0.0, 1.0), (2.0, 0.01), (-3.0, 5.0)] {
            let s = NormalQ::new(m, v);
            let out = local.minimize(s);
            assert!(local.value(out) <= local.value(s));
        }
    }
}
