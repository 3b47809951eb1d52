//! Training: descendant-first sweeps, convergence, and pattern searches
//! along the joint direction of consecutive sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeState;
use crate::messages::NormalQ;
use crate::network::{CostBreakdown, Network};
use crate::scalar::Real;
use crate::variables::TruncatedQ;

/// Log-domain entries outside `±LOG_CLAMP` make a point infeasible.
pub const LOG_CLAMP: f64 = 690.0;
/// Sweeps in a row below `rel_tol` needed to stop.
pub const PATIENCE: usize = 5;
const MAX_DOUBLINGS: usize = 30;

/// All posterior parameters as one flat vector: means as they are, variances,
/// responsibilities and Dirichlet pseudo-counts as logarithms. Node order is
/// by id, then slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    pub values: Vec<T>,
}

impl<T: Real> ParamVector<T> {
    pub fn encode(net: &Network<T>) -> Self {
        let floor = T::lit(-LOG_CLAMP).exp();
        let mut v = Vec::new();
        for (_, n) in net.graph().nodes() {
            match &n.state {
                NodeState::Gaussian(g) if !g.observed => {
                    for t in 0..g.len() {
                        v.push(g.mean[t]);
                        v.push(g.var[t].ln());
                    }
                }
                NodeState::Rectified(r) => {
                    for t in 0..r.len() {
                        v.push(r.loc[t]);
                        v.push(r.scale2[t].ln());
                    }
                }
                NodeState::Mixture(m) => {
                    for t in 0..m.value.len() {
                        if !m.value.observed {
                            v.push(m.value.mean[t]);
                            v.push(m.value.var[t].ln());
                        }
                        v.extend(m.resp[t].iter().map(|&r| r.max(floor).ln()));
                    }
                }
                NodeState::Dirichlet(d) => v.extend(d.counts.iter().map(|&c| c.ln())),
                _ => {}
            }
        }
        Self { values: v }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self + gamma·(to − self)`.
    pub fn along(&self, to: &Self, gamma: T) -> Self {
        Self { values: self.values.iter().zip(&to.values).map(|(&a, &b)| a + gamma * (b - a)).collect() }
    }

    fn feasible(&self, net: &Network<T>) -> bool {
        // Means only need to be finite; log entries must lie in the clamp.
        let clamp = T::lit(LOG_CLAMP);
        let mut i = 0;
        let mut ok = true;
        let mut check_log = |x: T| ok &= x.is_finite() && x.abs() <= clamp;
        for (_, n) in net.graph().nodes() {
            match &n.state {
                NodeState::Gaussian(g) if !g.observed => {
                    for _ in 0..g.len() {
                        if !self.values[i].is_finite() {
                            return false;
                        }
                        check_log(self.values[i + 1]);
                        i += 2;
                    }
                }
                NodeState::Rectified(r) => {
                    for _ in 0..r.len() {
                        if !self.values[i].is_finite() {
                            return false;
                        }
                        check_log(self.values[i + 1]);
                        i += 2;
                    }
                }
                NodeState::Mixture(m) => {
                    for t in 0..m.value.len() {
                        if !m.value.observed {
                            if !self.values[i].is_finite() {
                                return false;
                            }
                            check_log(self.values[i + 1]);
                            i += 2;
                        }
                        for _ in 0..m.resp[t].len() {
                            check_log(self.values[i]);
                            i += 1;
                        }
                    }
                }
                NodeState::Dirichlet(d) => {
                    for _ in 0..d.counts.len() {
                        check_log(self.values[i]);
                        i += 1;
                    }
                }
                _ => {}
            }
        }
        ok
    }

    /// Writes the parameters into the network. Returns `false`, leaving the
    /// network untouched, when some entry is outside the feasible range.
    pub fn apply(&self, net: &mut Network<T>) -> Result<bool> {
        let expected = Self::encode(net).len();
        if self.len() != expected {
            return Err(Error::DimensionMismatch { what: "parameter vector".into(), expected, got: self.len() });
        }
        if !self.feasible(net) {
            return Ok(false);
        }
        let mut it = self.values.iter().copied();
        let mut next = || it.next().expect("length checked");
        let g = net.graph_mut();
        for id in g.ids() {
            let n = g.node_mut(id)?;
            match &mut n.state {
                NodeState::Gaussian(gp) if !gp.observed => {
                    for t in 0..gp.len() {
                        let m = next();
                        let lv = next();
                        gp.set_slot(t, NormalQ::new(m, lv.exp()));
                    }
                }
                NodeState::Rectified(r) => {
                    for t in 0..r.len() {
                        let loc = next();
                        let ls = next();
                        r.set_slot(t, TruncatedQ { loc, scale2: ls.exp() });
                    }
                }
                NodeState::Mixture(m) => {
                    for t in 0..m.value.len() {
                        if !m.value.observed {
                            let mean = next();
                            let lv = next();
                            m.value.set_slot(t, NormalQ::new(mean, lv.exp()));
                        }
                        let logs: Vec<T> = (0..m.resp[t].len()).map(|_| next()).collect();
                        let max = logs.iter().copied().fold(T::neg_infinity(), T::max);
                        let w: Vec<T> = logs.iter().map(|&l| (l - max).exp()).collect();
                        let z: T = w.iter().copied().sum();
                        for (r, wi) in m.resp[t].iter_mut().zip(w) {
                            *r = wi / z;
                        }
                    }
                }
                NodeState::Dirichlet(d) => {
                    for c in d.counts.iter_mut() {
                        *c = next().exp();
                    }
                }
                _ => {}
            }
        }
        net.refresh_all();
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_sweeps: usize,
    pub rel_tol: f64,
    /// Pattern search after every this many sweeps; 0 turns it off.
    pub pattern_search_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { max_sweeps: 500, rel_tol: 1e-6, pattern_search_every: 10, seed: 0 }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.rel_tol >= 0.0) {
            return Err(Error::invalid("rel_tol", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrainTrace<T> {
    /// Cost at the start, before any sweep.
    pub initial: CostBreakdown<T>,
    /// Cost after each sweep (and its pattern search, if any).
    pub sweeps: Vec<CostBreakdown<T>>,
    /// Step factors accepted by pattern searches, with their sweep number.
    pub pattern_steps: Vec<(usize, f64)>,
    pub converged: bool,
}

impl<T: Real> TrainTrace<T> {
    pub fn final_cost(&self) -> &CostBreakdown<T> {
        self.sweeps.last().unwrap_or(&self.initial)
    }
}

/// Updates every unobserved variable node once, children first, then ages
/// the evidence schedules. The cost never increases.
pub fn sweep<T: Real>(net: &mut Network<T>) -> Result<CostBreakdown<T>> {
    net.update_all()?;
    net.advance_evidence();
    net.cost()
}

/// One-dimensional search along a ray. `f(1)` is known. Doubles the step
/// while the cost keeps decreasing, then refines with a parabola through
/// the last three points. Returns the best step and its value.
pub fn ray_search<F: FnMut(f64) -> f64>(mut f: F, f_one: f64) -> (f64, f64) {
    let mut left = None;
    let (mut g, mut fg) = (1.0, f_one);
    let mut right = None;
    for _ in 0..MAX_DOUBLINGS {
        let g2 = 2.0 * g;
        let f2 = f(g2);
        if f2 < fg {
            left = Some((g, fg));
            g = g2;
            fg = f2;
        } else {
            right = Some((g2, f2));
            break;
        }
    }
    let Some((c, fc)) = right else { return (g, fg) };
    let (a, fa) = left.unwrap_or_else(|| (0.0, f(0.0)));
    if let Some(x) = parabola_vertex((a, fa), (g, fg), (c, fc)) {
        if x > a && x < c && x != g {
            let fx = f(x);
            if fx < fg {
                return (x, fx);
            }
        }
    }
    (g, fg)
}

/// Abscissa of the vertex of the parabola through three points, if convex.
pub fn parabola_vertex((a, fa): (f64, f64), (b, fb): (f64, f64), (c, fc): (f64, f64)) -> Option<f64> {
    let p = (b - a) * (fb - fc);
    let q = (b - c) * (fb - fa);
    let den = p - q;
    if !fa.is_finite() || !fc.is_finite() || den == 0.0 {
        return None;
    }
    // Convex iff the second divided difference is positive.
    let dd = ((fc - fb) / (c - b) - (fb - fa) / (b - a)) / (c - a);
    if !(dd > 0.0) {
        return None;
    }
    Some(b - 0.5 * ((b - a) * p - (b - c) * q) / den)
}

/// Line search from `before` through `after` (the state after a sweep,
/// which must be the network's current state). Commits the best point
/// found; the result is never worse than `after`.
pub fn pattern_search<T: Real>(
    net: &mut Network<T>,
    before: &ParamVector<T>,
    after: &ParamVector<T>,
) -> Result<(CostBreakdown<T>, f64)> {
    if before.values == after.values {
        return Ok((net.cost()?, 1.0));
    }
    let saved = net.graph().clone();
    let f_one = net.total_cost()?.as_f64();
    let mut err = None;
    let (gamma, _) = ray_search(
        |g| {
            let p = before.along(after, T::lit(g));
            match p.apply(net) {
                Ok(true) => net.total_cost().map(|c| c.as_f64()).unwrap_or(f64::INFINITY),
                Ok(false) => f64::INFINITY,
                Err(e) => {
                    err = Some(e);
                    f64::INFINITY
                }
            }
        },
        f_one,
    );
    if let Some(e) = err {
        return Err(e);
    }
    if gamma == 1.0 {
        *net.graph_mut() = saved;
        net.refresh_all();
    } else {
        before.along(after, T::lit(gamma)).apply(net)?;
    }
    Ok((net.cost()?, gamma))
}

/// Trains from the network's current state. Pending latent posteriors are
/// randomized from `config.seed` first.
pub fn train<T: Real>(net: &mut Network<T>, config: &TrainConfig) -> Result<TrainTrace<T>> {
    train_with(net, config, |_, _| Ok(()))
}

/// As [`train`], calling `hook(sweep, net)` after every sweep (used for
/// periodic pruning). The hook may restructure the network.
pub fn train_with<T: Real, F>(net: &mut Network<T>, config: &TrainConfig, mut hook: F) -> Result<TrainTrace<T>>
where
    F: FnMut(usize, &mut Network<T>) -> Result<()>,
{
    config.check()?;
    net.initialize(config.seed);
    let initial = net.cost()?;
    let mut prev = initial.total;
    let mut sweeps = Vec::new();
    let mut pattern_steps = Vec::new();
    let mut quiet = 0;
    let mut converged = false;
    for k in 1..=config.max_sweeps {
        let every = config.pattern_search_every;
        let before = (every > 0 && k % every == 0).then(|| ParamVector::encode(net));
        let mut c = sweep(net)?;
        if let Some(before) = before {
            let after = ParamVector::encode(net);
            let (pc, gamma) = pattern_search(net, &before, &after)?;
            if gamma != 1.0 {
                pattern_steps.push((k, gamma));
            }
            c = pc;
        }
        hook(k, net)?;
        let n_before = c.per_node.len();
        if net.graph().node_count() != n_before {
            c = net.cost()?;
        }
        let rel = ((prev - c.total) / c.total.abs()).as_f64();
        prev = c.total;
        sweeps.push(c);
        if rel < config.rel_tol && net.evidence_inert() {
            quiet += 1;
        } else {
            quiet = 0;
        }
        if quiet >= PATIENCE {
            converged = true;
            break;
        }
    }
    Ok(TrainTrace { initial, sweeps, pattern_steps, converged })
}
