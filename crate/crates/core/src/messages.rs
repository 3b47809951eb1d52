//! Sufficient-statistics algebra.
//!
//! Forward messages are [`ForwardStats`]: the mean, variance and (when the
//! producing node can act as a variance parent) the expected exponential of a
//! node's output. Backward messages are likelihood potentials: the expected
//! cost of all descendants, as a function of a node's own posterior, is
//! `quad·⟨θ²⟩ + lin·⟨θ⟩ + exp_coef·⟨e^θ⟩ + const`. Every computational node
//! maps potentials on its output to potentials on each input in closed form.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::TruncatedTail;

/// Forward sufficient statistics of one sample of a node output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardStats<T> {
    pub mean: T,
    pub var: T,
    /// `⟨e^θ⟩`, present only for outputs allowed as variance parents.
    pub exp_mean: Option<T>,
}

impl<T: Real> ForwardStats<T> {
    pub fn new(mean: T, var: T, exp_mean: Option<T>) -> Self {
        Self { mean, var, exp_mean }
    }

    /// Point mass at `c`: `(c, 0, e^c)`.
    pub fn constant(c: T) -> Self {
        Self { mean: c, var: T::zero(), exp_mean: Some(c.exp()) }
    }

    /// Statistics of the constant zero node, used for zero-substitution.
    pub fn zero() -> Self {
        Self::constant(T::zero())
    }

    /// `⟨θ²⟩`.
    #[inline]
    pub fn second_moment(&self) -> T {
        self.mean * self.mean + self.var
    }

    pub fn without_exp(self) -> Self {
        Self { exp_mean: None, ..self }
    }
}

/// Single-sample Gaussian posterior factor `q(θ) = N(mean, var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalQ<T> {
    pub mean: T,
    pub var: T,
}

impl<T: Real> NormalQ<T> {
    pub fn new(mean: T, var: T) -> Self {
        Self { mean, var }
    }
}

/// Potential addressed to a mean-type parent: `quad·⟨θ²⟩ + lin·⟨θ⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanPotential<T> {
    pub quad: T,
    pub lin: T,
}

/// Potential addressed to a variance-type parent: `exp_coef·⟨e^θ⟩ + lin·⟨θ⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VarPotential<T> {
    pub exp_coef: T,
    pub lin: T,
}

/// General potential on one output sample; the sum of mean- and
/// variance-type contributions from all children.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Potential<T> {
    pub quad: T,
    pub lin: T,
    pub exp_coef: T,
}

impl<T: Real> Potential<T> {
    pub fn zero() -> Self {
        Self { quad: T::zero(), lin: T::zero(), exp_coef: T::zero() }
    }

    pub fn scale(self, k: T) -> Self {
        Self { quad: self.quad * k, lin: self.lin * k, exp_coef: self.exp_coef * k }
    }

    pub fn is_zero(&self) -> bool {
        self.quad == T::zero() && self.lin == T::zero() && self.exp_coef == T::zero()
    }

    /// Expected cost against the given statistics, constants dropped.
    /// A nonzero `exp_coef` against statistics without `exp_mean` is a
    /// message the graph rules should have excluded.
    pub fn expected_cost(&self, stats: &ForwardStats<T>) -> Result<T> {
        let mut c = self.quad * stats.second_moment() + self.lin * stats.mean;
        if self.exp_coef != T::zero() {
            let e = stats.exp_mean.ok_or(Error::MissingExpStat)?;
            c = c + self.exp_coef * e;
        }
        Ok(c)
    }

    pub fn mean_part(&self) -> MeanPotential<T> {
        MeanPotential { quad: self.quad, lin: self.lin }
    }
}

impl<T: Real> From<MeanPotential<T>> for Potential<T> {
    fn from(p: MeanPotential<T>) -> Self {
        Self { quad: p.quad, lin: p.lin, exp_coef: T::zero() }
    }
}

impl<T: Real> From<VarPotential<T>> for Potential<T> {
    fn from(p: VarPotential<T>) -> Self {
        Self { quad: T::zero(), lin: p.lin, exp_coef: p.exp_coef }
    }
}

impl<T: Real> Add for Potential<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { quad: self.quad + o.quad, lin: self.lin + o.lin, exp_coef: self.exp_coef + o.exp_coef }
    }
}

impl<T: Real> AddAssign for Potential<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

pub fn forward_gaussian<T: Real>(q: NormalQ<T>) -> ForwardStats<T> {
    ForwardStats { mean: q.mean, var: q.var, exp_mean: Some((q.mean + T::half() * q.var).exp()) }
}

/// Output of a sum node. Input posteriors are independent by the graph rules.
pub fn forward_sum<T: Real>(inputs: &[ForwardStats<T>]) -> ForwardStats<T> {
    let mut out = ForwardStats { mean: T::zero(), var: T::zero(), exp_mean: Some(T::one()) };
    for s in inputs {
        out.mean = out.mean + s.mean;
        out.var = out.var + s.var;
        out.exp_mean = match (out.exp_mean, s.exp_mean) {
            (Some(a), Some(b)) => Some(a * b),
            _ => None,
        };
    }
    out
}

pub fn forward_product<T: Real>(a: ForwardStats<T>, b: ForwardStats<T>) -> ForwardStats<T> {
    ForwardStats {
        mean: a.mean * b.mean,
        var: a.mean * a.mean * b.var + b.mean * b.mean * a.var + a.var * b.var,
        exp_mean: None,
    }
}

/// The two nonlinearities that may follow a Gaussian variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NonlinKind {
    /// `f(s) = exp(-s²)`
    ExpSquare,
    /// `f(s) = max(s, 0)`
    Cut,
}

/// First and second moments of `f(s)` under `s ~ N(μ, v)`, with derivatives
/// with respect to `(μ, v)`. Hessians are ordered `[μμ, μv, vv]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinMoments<T> {
    pub m1: T,
    pub m2: T,
    pub grad1: [T; 2],
    pub grad2: [T; 2],
    pub hess1: [T; 3],
    pub hess2: [T; 3],
}

impl<T: Real> NonlinMoments<T> {
    pub fn stats(&self) -> ForwardStats<T> {
        ForwardStats { mean: self.m1, var: (self.m2 - self.m1 * self.m1).max(T::zero()), exp_mean: None }
    }
}

impl NonlinKind {
    pub fn apply<T: Real>(self, s: T) -> T {
        match self {
            NonlinKind::ExpSquare => (-s * s).exp(),
            NonlinKind::Cut => s.max(T::zero()),
        }
    }

    pub fn moments<T: Real>(self, q: NormalQ<T>) -> NonlinMoments<T> {
        match self {
            NonlinKind::ExpSquare => expsquare_moments(q),
            NonlinKind::Cut => cut_moments(q),
        }
    }
}

/// `E[exp(-k s²)] = (1+2kv)^{-1/2} exp(-kμ²/(1+2kv))` and its derivatives.
fn gauss_damping<T: Real>(k: T, mu: T, v: T) -> (T, [T; 2], [T; 3]) {
    let one = T::one();
    let two = T::two();
    let d = one + two * k * v;
    let m = (-k * mu * mu / d).exp() / d.sqrt();
    // Derivatives of ln m.
    let lm = -two * k * mu / d;
    let lv = -k / d + two * k * k * mu * mu / (d * d);
    let lmm = -two * k / d;
    let lmv = T::lit(4.0) * k * k * mu / (d * d);
    let lvv = two * k * k / (d * d) - T::lit(8.0) * k * k * k * mu * mu / (d * d * d);
    let grad = [m * lm, m * lv];
    let hess = [m * (lm * lm + lmm), m * (lm * lv + lmv), m * (lv * lv + lvv)];
    (m, grad, hess)
}

fn expsquare_moments<T: Real>(q: NormalQ<T>) -> NonlinMoments<T> {
    let (m1, grad1, hess1) = gauss_damping(T::one(), q.mean, q.var);
    let (m2, grad2, hess2) = gauss_damping(T::two(), q.mean, q.var);
    NonlinMoments { m1, m2, grad1, grad2, hess1, hess2 }
}

fn cut_moments<T: Real>(q: NormalQ<T>) -> NonlinMoments<T> {
    let zero = T::zero();
    if q.var <= zero {
        // Point mass: derivatives of the smooth family are not defined here;
        // one-sided values keep the optimizer moving off the boundary.
        let pos = q.mean > zero;
        let m1 = q.mean.max(zero);
        let ind = if pos { T::one() } else { zero };
        return NonlinMoments {
            m1,
            m2: m1 * m1,
            grad1: [ind, zero],
            grad2: [T::two() * m1, ind],
            hess1: [zero; 3],
            hess2: [T::two() * ind, zero, zero],
        };
    }
    let sigma = q.var.sqrt();
    let alpha = q.mean / sigma;
    let a = alpha.as_f64();
    let cdf = T::lit(crate::special::norm_cdf(a));
    let pdf = T::lit(crate::special::norm_pdf(a));
    let tail = TruncatedTail::at(a);
    // m1 = Φ·σ·(α + φ/Φ); m2 = Φ·σ²·(shifted² + 1 - inv_mills·shifted).
    let shifted = T::lit(tail.shifted);
    let m1 = cdf * sigma * shifted;
    let m2 = cdf * q.var * (shifted * shifted + T::lit(tail.variance_factor()));
    let v = q.var;
    let grad1 = [cdf, pdf / (T::two() * sigma)];
    let hess1 = [
        pdf / sigma,
        -alpha * pdf / (T::two() * v),
        pdf * (alpha * alpha - T::one()) / (T::lit(4.0) * v * sigma),
    ];
    let grad2 = [T::two() * m1, cdf];
    let hess2 = [T::two() * cdf, pdf / sigma, -alpha * pdf / (T::two() * v)];
    NonlinMoments { m1, m2, grad1, grad2, hess1, hess2 }
}

pub fn forward_nonlin_expsquare<T: Real>(q: NormalQ<T>) -> ForwardStats<T> {
    expsquare_moments(q).stats()
}

pub fn forward_nonlin_cut<T: Real>(q: NormalQ<T>) -> ForwardStats<T> {
    cut_moments(q).stats()
}

/// Potential on one summand, given the total mean of the other summands.
pub fn backward_mean_through_sum<T: Real>(p: MeanPotential<T>, sibling_mean_total: T) -> MeanPotential<T> {
    MeanPotential { quad: p.quad, lin: p.lin + T::two() * p.quad * sibling_mean_total }
}

/// Potential on one factor of a product, given the co-factor statistics.
pub fn backward_mean_through_product<T: Real>(p: MeanPotential<T>, other: ForwardStats<T>) -> MeanPotential<T> {
    MeanPotential { quad: p.quad * other.second_moment(), lin: p.lin * other.mean }
}

/// Variance-type potential on one summand; `sibling_exp_total` is the
/// product of the other summands' expected exponentials.
pub fn backward_var_through_sum<T: Real>(p: VarPotential<T>, sibling_exp_total: T) -> VarPotential<T> {
    VarPotential { exp_coef: p.exp_coef * sibling_exp_total, lin: p.lin }
}

/// Variance-type potential on one summand, computing the sibling product
/// from the other summands' statistics.
pub fn backward_var_through_sum_from_siblings<T: Real>(
    p: VarPotential<T>,
    siblings: &[ForwardStats<T>],
) -> Result<VarPotential<T>> {
    let mut total = T::one();
    for s in siblings {
        total = total * s.exp_mean.ok_or(Error::MissingExpStat)?;
    }
    Ok(backward_var_through_sum(p, total))
}

/// Full potential (mean and variance parts) through a sum node.
pub fn backward_through_sum<T: Real>(p: Potential<T>, sibling_mean_total: T, sibling_exp_total: T) -> Potential<T> {
    Potential {
        quad: p.quad,
        lin: p.lin + T::two() * p.quad * sibling_mean_total,
        exp_coef: p.exp_coef * sibling_exp_total,
    }
}

/// Potentials one sample of a Gaussian child `s ~ N(m, e^{-v})` exerts on its
/// mean parent and its variance parent.
///
/// The child's expected negative log density is
/// `½⟨e^v⟩[(⟨s⟩−⟨m⟩)² + Var s + Var m] − ½⟨v⟩ + ½ ln 2π`.
pub fn gaussian_child_potentials<T: Real>(
    child: ForwardStats<T>,
    mean_parent: ForwardStats<T>,
    var_parent: ForwardStats<T>,
) -> Result<(MeanPotential<T>, VarPotential<T>)> {
    let ev = var_parent.exp_mean.ok_or(Error::MissingExpStat)?;
    let mp = MeanPotential { quad: T::half() * ev, lin: -ev * child.mean };
    let vp = VarPotential { exp_coef: T::half() * sq_misfit(child, mean_parent), lin: -T::half() };
    Ok((mp, vp))
}

/// `⟨(s - m)²⟩` for independent `s` and `m`.
#[inline]
pub fn sq_misfit<T: Real>(s: ForwardStats<T>, m: ForwardStats<T>) -> T {
    let d = s.mean - m.mean;
    d * d + s.var + m.var
}

/// Forward pass of a delay: `[init, x(0), ..., x(T-2)]`.
pub fn shift_delay<T: Copy>(input: &[T], init: T) -> Vec<T> {
    let mut out = Vec::with_capacity(input.len());
    if input.is_empty() {
        return out;
    }
    out.push(init);
    out.extend_from_slice(&input[..input.len() - 1]);
    out
}

/// Adjoint of [`shift_delay`] for potentials: the potential on output slot
/// `t` is routed to input slot `t-1`, slot 0 to the initial value. The last
/// input slot receives nothing from the delay.
pub fn shift_delay_adjoint<T: Real>(output: &[Potential<T>]) -> (Vec<Potential<T>>, Potential<T>) {
    let n = output.len();
    let mut input = vec![Potential::zero(); n];
    if n == 0 {
        return (input, Potential::zero());
    }
    input[..n - 1].copy_from_slice(&output[1..]);
    (input, output[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn gaussian_point_mass() {
        let s = forward_gaussian(NormalQ::new(1.0, 0.0));
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.var, 0.0);
        assert!(close(s.exp_mean.unwrap(), std::f64::consts::E, 1e-15));
        let s = forward_gaussian(NormalQ::new(-3.0, 0.5));
        assert!(close(s.exp_mean.unwrap(), (-2.75f64).exp(), 1e-15));
    }

    #[test]
    fn sum_examples() {
        let e = std::f64::consts::E;
        let a = ForwardStats::new(1.0, 1.0, Some(1.5f64.exp()));
        let b = ForwardStats::new(2.0, 4.0, Some(4.0f64.exp()));
        let s = forward_sum(&[a, b]);
        assert_eq!((s.mean, s.var), (3.0, 5.0));
        assert!(close(s.exp_mean.unwrap(), 5.5f64.exp(), 1e-12));
        let id = forward_sum(&[ForwardStats::new(0.0, 0.0, Some(1.0))]);
        assert_eq!(id, ForwardStats::new(0.0, 0.0, Some(1.0)));
        let missing = forward_sum(&[a.without_exp(), b]);
        assert_eq!(missing.exp_mean, None);
        assert!(e > 0.0);
    }

    #[test]
    fn product_examples() {
        let p = forward_product(ForwardStats::new(2.0, 0.0, None), ForwardStats::new(3.0, 0.0, None));
        assert_eq!((p.mean, p.var), (6.0, 0.0));
        let p = forward_product(ForwardStats::new(1.0, 1.0, None), ForwardStats::new(2.0, 4.0, None));
        assert_eq!((p.mean, p.var), (2.0, 12.0));
        assert_eq!(p.exp_mean, None);
    }

    #[test]
    fn nonlinear_point_masses() {
        let e = forward_nonlin_expsquare(NormalQ::new(0.0, 0.0));
        assert_eq!((e.mean, e.var), (1.0, 0.0));
        let c = forward_nonlin_cut(NormalQ::new(5.0, 0.0));
        assert_eq!((c.mean, c.var), (5.0, 0.0));
        let c = forward_nonlin_cut(NormalQ::new(-5.0, 0.0));
        assert_eq!((c.mean, c.var), (0.0, 0.0));
    }

    #[test]
    fn nonlinear_derivatives_match_finite_differences() {
        for kind in [NonlinKind::ExpSquare, NonlinKind::Cut] {
            for &(mu, v) in &[(0.3, 0.7), (-1.2, 0.2), (2.0, 1.5), (-0.1, 3.0)] {
                let m = kind.moments(NormalQ::new(mu, v));
                let h = 1e-6;
                let f = |mu: f64, v: f64| {
                    let m = kind.moments(NormalQ::new(mu, v));
                    (m.m1, m.m2, m.grad1, m.grad2)
                };
                let (a1, a2, ag1, ag2) = f(mu + h, v);
                let (b1, b2, bg1, bg2) = f(mu - h, v);
                let (c1, c2, cg1, cg2) = f(mu, v + h);
                let (d1, d2, dg1, dg2) = f(mu, v - h);
                let tol = 1e-6;
                assert!(close(m.grad1[0], (a1 - b1) / (2.0 * h), tol), "{kind:?} dm1/dmu");
                assert!(close(m.grad1[1], (c1 - d1) / (2.0 * h), tol), "{kind:?} dm1/dv");
                assert!(close(m.grad2[0], (a2 - b2) / (2.0 * h), tol), "{kind:?} dm2/dmu");
                assert!(close(m.grad2[1], (c2 - d2) / (2.0 * h), tol), "{kind:?} dm2/dv");
                assert!(close(m.hess1[0], (ag1[0] - bg1[0]) / (2.0 * h), tol));
                assert!(close(m.hess1[1], (cg1[0] - dg1[0]) / (2.0 * h), tol));
                assert!(close(m.hess1[2], (cg1[1] - dg1[1]) / (2.0 * h), tol));
                assert!(close(m.hess2[0], (ag2[0] - bg2[0]) / (2.0 * h), tol));
                assert!(close(m.hess2[1], (cg2[0] - dg2[0]) / (2.0 * h), tol));
                assert!(close(m.hess2[2], (cg2[1] - dg2[1]) / (2.0 * h), tol));
            }
        }
    }

    #[test]
    fn backward_examples() {
        let p = backward_mean_through_sum(MeanPotential { quad: 1.0, lin: 0.0 }, 3.0);
        assert_eq!((p.quad, p.lin), (1.0, 6.0));
        let p = backward_mean_through_product(MeanPotential { quad: 1.0, lin: -2.0 }, ForwardStats::new(2.0, 1.0, None));
        assert_eq!((p.quad, p.lin), (5.0, -4.0));
        let e = std::f64::consts::E;
        let p = backward_var_through_sum(VarPotential { exp_coef: 2.0, lin: -0.5 }, e);
        assert_eq!((p.exp_coef, p.lin), (2.0 * e, -0.5));
        let err = backward_var_through_sum_from_siblings(
            VarPotential { exp_coef: 1.0, lin: 0.0 },
            &[ForwardStats::new(0.0, 1.0, None)],
        );
        assert!(matches!(err, Err(Error::MissingExpStat)));
    }

    #[test]
    fn gaussian_child_examples() {
        let s = ForwardStats::constant(2.0);
        let m = ForwardStats::new(0.0, 0.0, Some(1.0));
        let v = ForwardStats::constant(0.0);
        let (mp, vp) = gaussian_child_potentials(s, m, v).unwrap();
        assert_eq!((mp.quad, mp.lin), (0.5, -2.0));
        assert_eq!((vp.exp_coef, vp.lin), (2.0, -0.5));
    }

    #[test]
    fn delay_shift_and_adjoint() {
        assert_eq!(shift_delay(&['a', 'b', 'c'], 'z'), vec!['z', 'a', 'b']);
        let pots: Vec<Potential<f64>> =
            (0..3).map(|i| Potential { quad: i as f64 + 1.0, lin: 0.0, exp_coef: 0.0 }).collect();
        let (input, init) = shift_delay_adjoint(&pots);
        assert_eq!(init.quad, 1.0);
        assert_eq!(input[0].quad, 2.0);
        assert_eq!(input[1].quad, 3.0);
        assert!(input[2].is_zero());
    }
}
