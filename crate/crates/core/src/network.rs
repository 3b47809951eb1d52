//! Inference engine over a validated, frozen graph.
//!
//! The network caches the forward statistics of every node and keeps them
//! consistent after each posterior update by recomputing the computational
//! nodes downstream of the updated variable. Backward potentials are
//! gathered on demand by walking from a variable through its computational
//! descendants to the variables (and evidence nodes) whose cost it affects.
//!
//! Vector nodes whose samples are coupled to each other through delays are
//! updated in interleaved passes: slots `t ≡ c (mod p)` for `c = 0..p`,
//! where `p` exceeds every lag separating two coupled slots. Within one pass
//! the slots are independent, so each pass is an exact block coordinate step
//! and never increases the cost.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::validate::{computational_paths, Wiring};
use crate::graph::{ModelGraph, NodeId, NodeKind, NodeState, ParentRole};
use crate::messages::{
    backward_through_sum, forward_product, forward_sum, sq_misfit, ForwardStats, NormalQ, Potential,
};
use crate::scalar::Real;
use crate::variables::gaussian::{self, GaussianLocalCost, NonlinTerm};
use crate::variables::{mixture, rectified, TruncatedQ};

/// Standard deviation of the random jitter given to pending latent means.
pub const INIT_JITTER: f64 = 0.5;

/// Total cost and its split over nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CostBreakdown<T> {
    /// Nats.
    pub total: T,
    pub per_node: BTreeMap<NodeId, T>,
    /// `total / (T · ln 2)` with `T` the sample count.
    pub bits_per_sample: T,
}

#[derive(Debug, Clone)]
struct Topology {
    wiring: Wiring,
    kinds: Vec<Option<NodeKind>>,
    lens: Vec<usize>,
    order: Vec<NodeId>,
    comp_order: Vec<NodeId>,
    /// Computational nodes whose output depends on the node, in evaluation order.
    downstream: Vec<Vec<NodeId>>,
    /// Slot interleaving period for vector variables.
    period: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    graph: ModelGraph<T>,
    topo: Topology,
    stats: Vec<Vec<ForwardStats<T>>>,
}

#[inline]
fn slot(len: usize, t: usize) -> usize {
    if len == 1 {
        0
    } else {
        t
    }
}

impl<T: Real> Network<T> {
    /// Validates and freezes `graph`. Dirichlet priors and mixture
    /// responsibilities are sized to their component counts here.
    pub fn new(mut graph: ModelGraph<T>) -> Result<Self> {
        let report = graph.validate();
        if !report.is_ok() {
            return Err(Error::Invalid(report));
        }
        size_components(&mut graph)?;
        graph.frozen = true;
        let topo = Topology::build(&graph);
        let stats = vec![Vec::new(); graph.capacity()];
        let mut net = Self { graph, topo, stats };
        net.refresh_all();
        Ok(net)
    }

    pub fn graph(&self) -> &ModelGraph<T> {
        &self.graph
    }

    /// Unfreezes and returns the graph, keeping all posteriors.
    pub fn into_graph(mut self) -> ModelGraph<T> {
        self.graph.frozen = false;
        self.graph
    }

    /// Mutable access for state edits; callers must `refresh_all` afterwards.
    pub(crate) fn graph_mut(&mut self) -> &mut ModelGraph<T> {
        &mut self.graph
    }

    pub fn sample_count(&self) -> usize {
        self.graph.sample_count()
    }

    /// Unobserved variable nodes, descendants first.
    pub fn update_order(&self) -> &[NodeId] {
        &self.topo.order
    }

    /// Slot interleaving period used when updating `id`.
    pub fn period(&self, id: NodeId) -> usize {
        self.topo.period.get(id.0).copied().unwrap_or(1)
    }

    /// Cached forward statistics of a node (follows proxies).
    pub fn stats(&self, id: NodeId) -> &[ForwardStats<T>] {
        &self.stats[self.graph.resolve(id).0]
    }

    #[inline]
    fn stat(&self, id: NodeId, t: usize) -> ForwardStats<T> {
        let s = &self.stats[id.0];
        s[slot(s.len(), t)]
    }

    fn kind(&self, id: NodeId) -> NodeKind {
        self.topo.kinds[id.0].unwrap_or(NodeKind::Proxy)
    }

    fn parent(&self, id: NodeId, role: ParentRole) -> Result<NodeId> {
        self.topo.wiring.parents[id.0]
            .iter()
            .find(|(r, _)| *r == role)
            .map(|&(_, p)| p)
            .ok_or_else(|| Error::invalid("graph", format!("`{}` has no {role} parent", self.graph.label(id))))
    }

    fn mixture_parents(&self, id: NodeId) -> Result<(Vec<NodeId>, Vec<NodeId>, NodeId)> {
        let mut means = BTreeMap::new();
        let mut vars = BTreeMap::new();
        let mut sel = None;
        for &(role, p) in &self.topo.wiring.parents[id.0] {
            match role {
                ParentRole::ComponentMean(i) => {
                    means.insert(i, p);
                }
                ParentRole::ComponentVariance(i) => {
                    vars.insert(i, p);
                }
                ParentRole::Selector => sel = Some(p),
                _ => {}
            }
        }
        let sel = sel.ok_or_else(|| Error::invalid("mixture", "missing selector"))?;
        Ok((means.into_values().collect(), vars.into_values().collect(), sel))
    }

    fn log_weights(&self, sel: NodeId) -> Result<Vec<T>> {
        match &self.graph.node(sel)?.state {
            NodeState::Dirichlet(d) => Ok(d.log_weights()),
            _ => Err(Error::invalid("selector", "not a Dirichlet node")),
        }
    }

    // --- forward statistics ---------------------------------------------

    fn compute_stats(&self, id: NodeId) -> Vec<ForwardStats<T>> {
        let Ok(node) = self.graph.node(id) else { return Vec::new() };
        let len = self.topo.lens[id.0];
        let parents = &self.topo.wiring.parents[id.0];
        match (&node.state, node.kind) {
            (NodeState::Constant(c), _) => vec![ForwardStats::constant(*c)],
            (NodeState::Gaussian(g), _) => (0..g.len()).map(|t| g.stats(t)).collect(),
            (NodeState::Rectified(r), _) => (0..r.len()).map(|t| r.stats(t)).collect(),
            (NodeState::Mixture(m), _) => (0..m.value.len()).map(|t| m.stats(t)).collect(),
            (_, NodeKind::Sum) => {
                let mut buf = Vec::with_capacity(parents.len());
                (0..len)
                    .map(|t| {
                        buf.clear();
                        buf.extend(parents.iter().map(|&(_, p)| self.stat(p, t)));
                        forward_sum(&buf)
                    })
                    .collect()
            }
            (_, NodeKind::Product) => {
                let (a, b) = (parents[0].1, parents[1].1);
                (0..len).map(|t| forward_product(self.stat(a, t), self.stat(b, t))).collect()
            }
            (_, NodeKind::NonlinExpSquare | NodeKind::NonlinCut) => {
                let f = node.kind.nonlinearity().expect("nonlinearity kind");
                let input = parents[0].1;
                (0..len)
                    .map(|t| {
                        let s = self.stat(input, t);
                        f.moments(NormalQ::new(s.mean, s.var)).stats()
                    })
                    .collect()
            }
            (_, NodeKind::Delay) => {
                let input = parents.iter().find(|(r, _)| *r == ParentRole::DelayInput).map(|&(_, p)| p);
                let init = parents.iter().find(|(r, _)| *r == ParentRole::DelayInit).map(|&(_, p)| p);
                let (Some(input), Some(init)) = (input, init) else { return Vec::new() };
                (0..len).map(|t| if t == 0 { self.stat(init, 0) } else { self.stat(input, t - 1) }).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Recomputes every cached statistic from the posteriors.
    pub fn refresh_all(&mut self) {
        self.stats.resize(self.graph.capacity(), Vec::new());
        for id in self.graph.ids() {
            if !self.kind(id).is_computational() {
                self.stats[id.0] = self.compute_stats(id);
            }
        }
        for i in 0..self.topo.comp_order.len() {
            let c = self.topo.comp_order[i];
            self.stats[c.0] = self.compute_stats(c);
        }
    }

    /// Recomputes the statistics of `id` and of everything computed from it.
    pub(crate) fn refresh(&mut self, id: NodeId) {
        self.stats[id.0] = self.compute_stats(id);
        for i in 0..self.topo.downstream[id.0].len() {
            let c = self.topo.downstream[id.0][i];
            self.stats[c.0] = self.compute_stats(c);
        }
    }

    /// Temporarily replaces the statistics of `id` (all slots) and
    /// propagates; returns the previous cache for [`Network::restore_stats`].
    pub(crate) fn substitute_stats(&mut self, id: NodeId, s: ForwardStats<T>) -> Vec<(NodeId, Vec<ForwardStats<T>>)> {
        let mut saved = vec![(id, std::mem::take(&mut self.stats[id.0]))];
        self.stats[id.0] = vec![s];
        for i in 0..self.topo.downstream[id.0].len() {
            let c = self.topo.downstream[id.0][i];
            let new = self.compute_stats(c);
            saved.push((c, std::mem::replace(&mut self.stats[c.0], new)));
        }
        saved
    }

    pub(crate) fn restore_stats(&mut self, saved: Vec<(NodeId, Vec<ForwardStats<T>>)>) {
        for (id, s) in saved {
            self.stats[id.0] = s;
        }
    }

    /// Variable and evidence nodes whose cost depends on `id`'s output,
    /// and the computational nodes passed on the way.
    pub(crate) fn affected(&self, id: NodeId) -> (BTreeSet<NodeId>, Vec<NodeId>) {
        let mut ends = BTreeSet::new();
        let mut comps = Vec::new();
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<NodeId> = self.topo.wiring.children[id.0].iter().map(|&(c, _)| c).collect();
        while let Some(c) = queue.pop_front() {
            if !seen.insert(c) {
                continue;
            }
            if self.kind(c).is_computational() {
                comps.push(c);
                queue.extend(self.topo.wiring.children[c.0].iter().map(|&(d, _)| d));
            } else {
                ends.insert(c);
            }
        }
        (ends, comps)
    }

    // --- costs ----------------------------------------------------------

    /// Cost attributed to one node: its expected negative log prior (or
    /// likelihood, for observed nodes) plus its negative entropy.
    pub fn node_cost(&self, id: NodeId) -> Result<T> {
        let node = self.graph.node(id)?;
        let len = self.topo.lens[id.0];
        let mut c = T::zero();
        match &node.state {
            NodeState::Gaussian(g) => {
                let (m, v) = (self.parent(id, ParentRole::Mean)?, self.parent(id, ParentRole::Variance)?);
                for t in 0..len {
                    c = c + gaussian::sample_cost(g.slot(t), g.observed, self.stat(m, t), self.stat(v, t))?;
                }
            }
            NodeState::Rectified(r) => {
                let v = self.parent(id, ParentRole::Variance)?;
                for t in 0..len {
                    c = c + rectified::sample_cost(r.slot(t), self.stat(v, t))?;
                }
            }
            NodeState::Mixture(mx) => {
                let (means, vars, sel) = self.mixture_parents(id)?;
                let lw = self.log_weights(sel)?;
                let mut ms = Vec::with_capacity(means.len());
                let mut vs = Vec::with_capacity(vars.len());
                for t in 0..len {
                    ms.clear();
                    vs.clear();
                    ms.extend(means.iter().map(|&p| self.stat(p, t)));
                    vs.extend(vars.iter().map(|&p| self.stat(p, t)));
                    let s = self.stat(id, t);
                    c = c + mixture::sample_cost(&mx.resp[t], s, mx.value.observed, &lw, &ms, &vs)?;
                }
            }
            NodeState::Dirichlet(d) => c = d.cost(),
            NodeState::Evidence(e) => {
                let p = self.parent(id, ParentRole::Mean)?;
                for t in 0..len {
                    c = c + e.cost(t, self.stat(p, t));
                }
            }
            _ => {}
        }
        Ok(c)
    }

    fn costed(&self, id: NodeId) -> bool {
        matches!(
            self.graph.node(id).map(|n| &n.state),
            Ok(NodeState::Gaussian(_)
                | NodeState::Rectified(_)
                | NodeState::Mixture(_)
                | NodeState::Dirichlet(_)
                | NodeState::Evidence(_))
        )
    }

    /// Total cost in nats.
    pub fn total_cost(&self) -> Result<T> {
        let mut total = T::zero();
        for id in self.graph.ids() {
            if self.costed(id) {
                total = total + self.node_cost(id)?;
            }
        }
        Ok(total)
    }

    pub fn cost(&self) -> Result<CostBreakdown<T>> {
        let mut per_node = BTreeMap::new();
        let mut total = T::zero();
        for id in self.graph.ids() {
            if self.costed(id) {
                let c = self.node_cost(id)?;
                total = total + c;
                per_node.insert(id, c);
            }
        }
        let bits = total / (T::lit(self.sample_count() as f64) * T::LN_2());
        Ok(CostBreakdown { total, per_node, bits_per_sample: bits })
    }

    // --- backward potentials --------------------------------------------

    /// Potential a variable or evidence node `d` exerts, at its slot `t`, on
    /// its parent in `role`.
    fn endpoint_potential(&self, d: NodeId, role: ParentRole, t: usize) -> Result<Potential<T>> {
        let half = T::half();
        Ok(match (&self.graph.node(d)?.state, role) {
            (NodeState::Gaussian(g), ParentRole::Mean) => {
                let ev = self.stat(self.parent(d, ParentRole::Variance)?, t).exp_mean.ok_or(Error::MissingExpStat)?;
                Potential { quad: half * ev, lin: -ev * g.mean[t], exp_coef: T::zero() }
            }
            (NodeState::Gaussian(_), ParentRole::Variance) => {
                let m = self.stat(self.parent(d, ParentRole::Mean)?, t);
                Potential { quad: T::zero(), lin: -half, exp_coef: half * sq_misfit(self.stat(d, t), m) }
            }
            (NodeState::Rectified(_), ParentRole::Variance) => {
                Potential { quad: T::zero(), lin: -half, exp_coef: half * self.stat(d, t).second_moment() }
            }
            (NodeState::Mixture(mx), ParentRole::ComponentMean(i)) => {
                let (_, vars, _) = self.mixture_parents(d)?;
                let ev = self.stat(vars[i], t).exp_mean.ok_or(Error::MissingExpStat)?;
                let r = mx.resp[t][i];
                Potential { quad: r * half * ev, lin: -r * ev * mx.value.mean[t], exp_coef: T::zero() }
            }
            (NodeState::Mixture(mx), ParentRole::ComponentVariance(i)) => {
                let (means, _, _) = self.mixture_parents(d)?;
                let r = mx.resp[t][i];
                let m = self.stat(means[i], t);
                Potential { quad: T::zero(), lin: -half * r, exp_coef: r * half * sq_misfit(self.stat(d, t), m) }
            }
            (NodeState::Evidence(e), ParentRole::Mean) => e.potential(t).into(),
            _ => Potential::zero(),
        })
    }

    /// Adds the potential exerted through parent edge `k` of `child` on a
    /// parent of length `plen` into `out`. Nonlinearities are handled by
    /// the caller.
    fn edge_potential(&self, child: NodeId, k: usize, plen: usize, out: &mut [Potential<T>]) -> Result<()> {
        let kind = self.kind(child);
        let clen = self.topo.lens[child.0];
        let parents = &self.topo.wiring.parents[child.0];
        let role = parents[k].0;
        if !kind.is_computational() {
            for t in 0..clen {
                out[slot(plen, t)] += self.endpoint_potential(child, role, t)?;
            }
            return Ok(());
        }
        let op = self.output_potential(child)?;
        match kind {
            NodeKind::Sum => {
                for (t, p) in op.iter().enumerate() {
                    if p.is_zero() {
                        continue;
                    }
                    let mut sib_mean = T::zero();
                    let mut sib_exp = T::one();
                    for (j, &(_, s)) in parents.iter().enumerate() {
                        if j == k {
                            continue;
                        }
                        let st = self.stat(s, t);
                        sib_mean = sib_mean + st.mean;
                        if p.exp_coef != T::zero() {
                            sib_exp = sib_exp * st.exp_mean.ok_or(Error::MissingExpStat)?;
                        }
                    }
                    out[slot(plen, t)] += backward_through_sum(*p, sib_mean, sib_exp);
                }
            }
            NodeKind::Product => {
                let other = parents[1 - k].1;
                for (t, p) in op.iter().enumerate() {
                    if p.exp_coef != T::zero() {
                        return Err(Error::MissingExpStat);
                    }
                    let o = self.stat(other, t);
                    out[slot(plen, t)] += Potential { quad: p.quad * o.second_moment(), lin: p.lin * o.mean, exp_coef: T::zero() };
                }
            }
            NodeKind::Delay => match role {
                ParentRole::DelayInput => {
                    for t in 1..clen {
                        out[slot(plen, t - 1)] += op[t];
                    }
                }
                _ => out[0] += op[0],
            },
            _ => {}
        }
        Ok(())
    }

    /// Potential on each output slot of a computational node from all of
    /// its descendants.
    fn output_potential(&self, c: NodeId) -> Result<Vec<Potential<T>>> {
        let len = self.topo.lens[c.0];
        let mut out = vec![Potential::zero(); len];
        for &(d, j) in &self.topo.wiring.children[c.0] {
            self.edge_potential(d, j, len, &mut out)?;
        }
        Ok(out)
    }

    /// Children potentials on every slot of variable `x`, with the
    /// nonlinearities it feeds kept as separate terms.
    pub fn incoming(&self, x: NodeId) -> Result<(Vec<Potential<T>>, Vec<Vec<NonlinTerm<T>>>)> {
        let len = self.topo.lens[x.0];
        let mut pots = vec![Potential::zero(); len];
        let mut nl: Vec<Vec<NonlinTerm<T>>> = vec![Vec::new(); len];
        for &(d, j) in &self.topo.wiring.children[x.0] {
            if let Some(f) = self.kind(d).nonlinearity() {
                let op = self.output_potential(d)?;
                for (t, p) in op.iter().enumerate() {
                    let terms = &mut nl[slot(len, t)];
                    match terms.iter_mut().find(|term| term.kind == f) {
                        Some(term) => {
                            term.quad = term.quad + p.quad;
                            term.lin = term.lin + p.lin;
                        }
                        None => terms.push(NonlinTerm { kind: f, quad: p.quad, lin: p.lin }),
                    }
                }
            } else {
                self.edge_potential(d, j, len, &mut pots)?;
            }
        }
        Ok((pots, nl))
    }

    // --- updates --------------------------------------------------------

    /// Updates one variable node given everything else. Never increases the
    /// total cost.
    pub fn update_node(&mut self, id: NodeId) -> Result<()> {
        let node = self.graph.node(id)?;
        if !node.is_updatable() {
            return Ok(());
        }
        match node.kind {
            NodeKind::Gaussian => self.update_gaussian(id),
            NodeKind::RectifiedGaussian => self.update_rectified(id),
            NodeKind::MixtureOfGaussians => self.update_mixture(id),
            NodeKind::Dirichlet => self.update_dirichlet(id),
            _ => Ok(()),
        }
    }

    /// Updates every node once, in update order.
    pub fn update_all(&mut self) -> Result<()> {
        for i in 0..self.topo.order.len() {
            let id = self.topo.order[i];
            self.update_node(id)?;
        }
        Ok(())
    }

    fn color_classes(&self, id: NodeId) -> (usize, usize) {
        let len = self.topo.lens[id.0];
        (len, self.period(id).min(len).max(1))
    }

    fn update_gaussian(&mut self, id: NodeId) -> Result<()> {
        let (m, v) = (self.parent(id, ParentRole::Mean)?, self.parent(id, ParentRole::Variance)?);
        let (len, period) = self.color_classes(id);
        for color in 0..period {
            let (pots, nl) = self.incoming(id)?;
            let mut new = Vec::with_capacity(len / period + 1);
            {
                let NodeState::Gaussian(g) = &self.graph.node(id)?.state else { unreachable!() };
                for t in (color..len).step_by(period) {
                    let ev = self.stat(v, t).exp_mean.ok_or(Error::MissingExpStat)?;
                    let p = pots[t];
                    let local = GaussianLocalCost {
                        quad: T::half() * ev + p.quad,
                        lin: -ev * self.stat(m, t).mean + p.lin,
                        exp_coef: p.exp_coef,
                        nonlin: nl[t].clone(),
                    };
                    new.push((t, local.minimize(g.slot(t))));
                }
            }
            if let NodeState::Gaussian(g) = &mut self.graph.node_mut(id)?.state {
                for (t, q) in new {
                    g.set_slot(t, q);
                }
            }
            self.refresh(id);
        }
        Ok(())
    }

    fn update_rectified(&mut self, id: NodeId) -> Result<()> {
        let v = self.parent(id, ParentRole::Variance)?;
        let (len, period) = self.color_classes(id);
        for color in 0..period {
            let (pots, _) = self.incoming(id)?;
            let mut new = Vec::with_capacity(len / period + 1);
            for t in (color..len).step_by(period) {
                if pots[t].exp_coef != T::zero() {
                    return Err(Error::MissingExpStat);
                }
                new.push((t, rectified::update_rectified(self.stat(v, t), pots[t].mean_part())?));
            }
            if let NodeState::Rectified(r) = &mut self.graph.node_mut(id)?.state {
                for (t, q) in new {
                    r.set_slot(t, q);
                }
            }
            self.refresh(id);
        }
        Ok(())
    }

    fn update_mixture(&mut self, id: NodeId) -> Result<()> {
        let (means, vars, sel) = self.mixture_parents(id)?;
        let lw = self.log_weights(sel)?;
        let (len, period) = self.color_classes(id);
        let half = T::half();
        for color in 0..period {
            let (pots, _) = self.incoming(id)?;
            let mut new = Vec::with_capacity(len / period + 1);
            {
                let NodeState::Mixture(mx) = &self.graph.node(id)?.state else { unreachable!() };
                for t in (color..len).step_by(period) {
                    let ms: Vec<_> = means.iter().map(|&p| self.stat(p, t)).collect();
                    let vs: Vec<_> = vars.iter().map(|&p| self.stat(p, t)).collect();
                    let costs = mixture::component_costs(self.stat(id, t), &ms, &vs)?;
                    let resp = mixture::responsibilities(&lw, &costs);
                    let q = if mx.value.observed {
                        None
                    } else {
                        let mut quad = pots[t].quad;
                        let mut lin = pots[t].lin;
                        for ((&r, m), v) in resp.iter().zip(&ms).zip(&vs) {
                            let ev = v.exp_mean.ok_or(Error::MissingExpStat)?;
                            quad = quad + r * half * ev;
                            lin = lin - r * ev * m.mean;
                        }
                        GaussianLocalCost::new(quad, lin, T::zero()).quadratic_minimizer()
                    };
                    new.push((t, resp, q));
                }
            }
            if let NodeState::Mixture(mx) = &mut self.graph.node_mut(id)?.state {
                for (t, resp, q) in new {
                    mx.resp[t] = resp;
                    if let Some(q) = q {
                        mx.value.set_slot(t, q);
                    }
                }
            }
            self.refresh(id);
        }
        Ok(())
    }

    fn update_dirichlet(&mut self, id: NodeId) -> Result<()> {
        let k = match &self.graph.node(id)?.state {
            NodeState::Dirichlet(d) => d.components(),
            _ => return Ok(()),
        };
        let mut summed = vec![T::zero(); k];
        for &(c, j) in &self.topo.wiring.children[id.0] {
            if self.topo.wiring.parents[c.0][j].0 != ParentRole::Selector {
                continue;
            }
            if let NodeState::Mixture(mx) = &self.graph.node(c)?.state {
                for row in &mx.resp {
                    for (s, &r) in summed.iter_mut().zip(row) {
                        *s = *s + r;
                    }
                }
            }
        }
        if let NodeState::Dirichlet(d) = &mut self.graph.node_mut(id)?.state {
            d.update(&summed);
        }
        Ok(())
    }

    /// Advances every evidence schedule by one sweep.
    pub fn advance_evidence(&mut self) {
        for id in self.graph.ids() {
            if let Ok(n) = self.graph.node_mut(id) {
                if let NodeState::Evidence(e) = &mut n.state {
                    e.advance();
                }
            }
        }
    }

    /// Whether every evidence node has faded out.
    pub fn evidence_inert(&self) -> bool {
        self.graph.nodes().all(|(_, n)| !matches!(&n.state, NodeState::Evidence(e) if !e.is_inert()))
    }

    /// Randomizes the posteriors of latent nodes that were never set
    /// explicitly. Deterministic in `seed`.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = T::lit(INIT_JITTER);
        for id in self.graph.ids() {
            let Ok(n) = self.graph.node_mut(id) else { continue };
            if !n.init_pending {
                continue;
            }
            n.init_pending = false;
            let mut normal = || T::lit(rng.sample::<f64, _>(StandardNormal));
            match &mut n.state {
                NodeState::Gaussian(g) if !g.observed => {
                    for t in 0..g.len() {
                        let m = jitter * normal();
                        g.set_slot(t, NormalQ::new(m, T::lit(crate::graph::DEFAULT_INIT_VAR)));
                    }
                }
                NodeState::Rectified(r) => {
                    for t in 0..r.len() {
                        let loc = (jitter * normal()).abs();
                        r.set_slot(t, TruncatedQ { loc, scale2: T::lit(crate::graph::DEFAULT_INIT_VAR) });
                    }
                }
                NodeState::Mixture(mx) => {
                    for t in 0..mx.value.len() {
                        if !mx.value.observed {
                            let m = jitter * normal();
                            mx.value.set_slot(t, NormalQ::new(m, T::lit(crate::graph::DEFAULT_INIT_VAR)));
                        }
                        let row = &mut mx.resp[t];
                        let w: Vec<T> = row.iter().map(|_| (T::lit(0.1) * normal()).exp()).collect();
                        let z: T = w.iter().copied().sum();
                        for (r, wi) in row.iter_mut().zip(w) {
                            *r = wi / z;
                        }
                    }
                }
                _ => {}
            }
        }
        self.refresh_all();
    }
}

/// Sizes Dirichlet priors and mixture responsibilities to the component count.
fn size_components<T: Real>(g: &mut ModelGraph<T>) -> Result<()> {
    let wiring = g.wiring();
    for id in g.ids() {
        let n = g.node(id)?;
        match &n.state {
            NodeState::Dirichlet(d) => {
                let conc: Vec<T> = wiring.parents[id.0]
                    .iter()
                    .filter(|(r, _)| *r == ParentRole::Concentration)
                    .filter_map(|&(_, p)| match g.node(p).map(|n| &n.state) {
                        Ok(NodeState::Constant(c)) => Some(*c),
                        _ => None,
                    })
                    .collect();
                let k = wiring.children[id.0]
                    .iter()
                    .filter(|&&(c, j)| wiring.parents[c.0][j].0 == ParentRole::Selector)
                    .filter_map(|&(c, _)| match g.node(c).map(|n| &n.state) {
                        Ok(NodeState::Mixture(_)) => Some(
                            wiring.parents[c.0].iter().filter(|(r, _)| matches!(r, ParentRole::ComponentMean(_))).count(),
                        ),
                        _ => None,
                    })
                    .max()
                    .unwrap_or(d.prior.len());
                let prior = if !conc.is_empty() {
                    conc
                } else if d.prior.is_empty() {
                    vec![T::one(); k]
                } else {
                    d.prior.clone()
                };
                if prior.iter().any(|&u| !(u > T::zero())) {
                    return Err(Error::invalid("dirichlet prior", "concentrations must be positive"));
                }
                let counts = if d.counts.len() == prior.len() { d.counts.clone() } else { prior.clone() };
                if let NodeState::Dirichlet(d) = &mut g.node_mut(id)?.state {
                    d.prior = prior;
                    d.counts = counts;
                }
            }
            NodeState::Mixture(_) => {
                let k =
                    wiring.parents[id.0].iter().filter(|(r, _)| matches!(r, ParentRole::ComponentMean(_))).count();
                if let NodeState::Mixture(m) = &mut g.node_mut(id)?.state {
                    m.resize(k);
                }
            }
            _ => {}
        }
    }
    Ok(())
}

impl Topology {
    fn build<T: Real>(g: &ModelGraph<T>) -> Self {
        let wiring = g.wiring();
        let n = g.capacity();
        let mut kinds = vec![None; n];
        let mut lens = vec![0; n];
        for (id, node) in g.nodes() {
            kinds[id.0] = Some(node.kind);
            lens[id.0] = node.len(g.sample_count());
        }
        let is_comp = |i: usize| kinds[i].is_some_and(NodeKind::is_computational);

        // Evaluation order of computational nodes (no loops among them).
        let mut indeg = vec![0usize; n];
        for i in (0..n).filter(|&i| is_comp(i)) {
            indeg[i] = wiring.parents[i].iter().filter(|&&(_, p)| is_comp(p.0)).count();
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| is_comp(i) && indeg[i] == 0).collect();
        let mut comp_order = Vec::new();
        while let Some(i) = ready.pop_first() {
            comp_order.push(NodeId(i));
            for &(c, _) in &wiring.children[i] {
                if is_comp(c.0) {
                    indeg[c.0] -= 1;
                    if indeg[c.0] == 0 {
                        ready.insert(c.0);
                    }
                }
            }
        }
        let mut rank = vec![usize::MAX; n];
        for (r, c) in comp_order.iter().enumerate() {
            rank[c.0] = r;
        }

        let mut downstream = vec![Vec::new(); n];
        let mut period = vec![1usize; n];
        for (id, node) in g.nodes() {
            if node.kind.is_computational() {
                continue;
            }
            let mut seen = BTreeSet::new();
            let mut stack: Vec<NodeId> = wiring.children[id.0].iter().map(|&(c, _)| c).collect();
            while let Some(c) = stack.pop() {
                if is_comp(c.0) && seen.insert(c) {
                    stack.extend(wiring.children[c.0].iter().map(|&(d, _)| d));
                }
            }
            let mut ds: Vec<NodeId> = seen.into_iter().collect();
            ds.sort_by_key(|c| rank[c.0]);
            downstream[id.0] = ds;

            if node.is_updatable() && lens[id.0] > 1 {
                let paths = computational_paths(&wiring, &kinds, id);
                let mut lags: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
                for &(to, lag) in paths.keys() {
                    lags.entry(to).or_default().push(lag);
                }
                let mut max_gap = 0;
                for (to, ls) in &lags {
                    if *to == id {
                        max_gap = max_gap.max(*ls.iter().max().unwrap_or(&0));
                    }
                    let (lo, hi) = (ls.iter().min().unwrap_or(&0), ls.iter().max().unwrap_or(&0));
                    max_gap = max_gap.max(hi - lo);
                }
                period[id.0] = max_gap + 1;
            }
        }

        Self { order: g.update_order(), wiring, kinds, lens, comp_order, downstream, period }
    }
}
