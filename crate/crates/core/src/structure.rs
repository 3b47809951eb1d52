//! Structural learning: price a node's removal by substituting the constant
//! zero for it, prune greedily with cascading cleanup, and add new parts to
//! a trained network.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Arity, ModelGraph, NodeId, NodeKind, NodeState, ParentRole};
use crate::messages::ForwardStats;
use crate::network::Network;
use crate::scalar::Real;
use crate::variables::EvidenceSchedule;

/// Label of the constant that rewired edges point to after a removal.
pub const ZERO_LABEL: &str = "pruned.zero";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub candidate: NodeId,
    pub label: String,
    /// Cost after removal minus current cost, in nats.
    pub delta_cost: f64,
    pub removed: Vec<NodeId>,
    pub removed_labels: Vec<String>,
}

impl PruneReport {
    /// One JSON object per line: candidate label, delta, removed labels.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "candidate": self.label,
            "delta_cost": self.delta_cost,
            "removed": self.removed_labels,
        })
        .to_string()
    }
}

/// What happens to a child when one of its parents is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CascadeAction {
    /// Delete the child too (and cascade from it).
    RemoveChild,
    /// Drop the edge; a sum left without summands is removed.
    DropEdge,
    /// Point the edge at the constant zero.
    RewireToZero,
}

/// Per-(child kind, role) table of cascade actions. Component indices are
/// ignored when matching roles.
#[derive(Debug, Clone, Default)]
pub struct CascadePolicy {
    pub overrides: HashMap<(NodeKind, ParentRole), CascadeAction>,
}

fn role_key(role: ParentRole) -> ParentRole {
    match role {
        ParentRole::ComponentMean(_) => ParentRole::ComponentMean(0),
        ParentRole::ComponentVariance(_) => ParentRole::ComponentVariance(0),
        r => r,
    }
}

impl CascadePolicy {
    pub fn set(&mut self, child: NodeKind, role: ParentRole, action: CascadeAction) {
        self.overrides.insert((child, role_key(role)), action);
    }

    pub fn action(&self, child: NodeKind, role: ParentRole) -> CascadeAction {
        if let Some(&a) = self.overrides.get(&(child, role_key(role))) {
            return a;
        }
        match (child, role) {
            (NodeKind::Product, _) => CascadeAction::RemoveChild,
            (NodeKind::Sum, _) => CascadeAction::DropEdge,
            (NodeKind::Evidence, _) => CascadeAction::RemoveChild,
            (NodeKind::NonlinExpSquare | NodeKind::NonlinCut, _) => CascadeAction::RemoveChild,
            (NodeKind::MixtureOfGaussians, ParentRole::Selector) => CascadeAction::RemoveChild,
            _ => CascadeAction::RewireToZero,
        }
    }
}

/// Change in total cost if `id` were removed under `policy`, other
/// posteriors unchanged. Latent nodes the cascade would take with it (for
/// example weights left without children) are priced as well, so the value
/// equals the cost after [`cascade_remove`] minus the cost before.
/// Negative means removal lowers the cost.
pub fn removal_delta<T: Real>(net: &mut Network<T>, id: NodeId, policy: &CascadePolicy) -> Result<T> {
    let node = net.graph().node(id)?;
    if !node.is_updatable() || node.kind == NodeKind::Dirichlet {
        return Err(Error::NotPrunable(node.label.clone()));
    }
    let (_, comps) = net.affected(id);
    if let Some(&c) = comps.iter().find(|c| net.graph().node(**c).is_ok_and(|n| n.kind.nonlinearity().is_some())) {
        return Err(Error::NotLinearPath { node: net.graph().label(id), through: net.graph().label(c) });
    }
    let mut dry = net.graph().clone();
    dry.frozen = false;
    let removed: BTreeSet<NodeId> = cascade_remove(&mut dry, id, policy)?.into_iter().map(|(x, _)| x).collect();
    let zeroed: Vec<NodeId> = removed
        .iter()
        .copied()
        .filter(|&x| x == id || net.graph().node(x).is_ok_and(|n| n.is_updatable()))
        .collect();
    let mut priced: BTreeSet<NodeId> = zeroed.iter().copied().collect();
    for &z in &zeroed {
        priced.extend(net.affected(z).0);
    }
    let mut old = T::zero();
    for &x in &priced {
        old = old + net.node_cost(x)?;
    }
    let mut saved = Vec::with_capacity(zeroed.len());
    for &z in &zeroed {
        saved.push(net.substitute_stats(z, ForwardStats::zero()));
    }
    let mut new: Result<T> = Ok(T::zero());
    for &x in priced.iter().filter(|x| !removed.contains(x)) {
        new = new.and_then(|acc| Ok(acc + net.node_cost(x)?));
    }
    for s in saved.into_iter().rev() {
        net.restore_stats(s);
    }
    Ok(new? - old)
}

/// Latent nodes whose removal can be priced and carried out: every child
/// edge is a factor or summand, apart from faded evidence.
pub fn candidates<T: Real>(net: &Network<T>) -> Vec<NodeId> {
    let g = net.graph();
    let mut children: HashMap<NodeId, Vec<(NodeId, ParentRole)>> = HashMap::new();
    for (c, n) in g.nodes() {
        for &(role, p) in &n.parents {
            children.entry(g.resolve(p)).or_default().push((c, role));
        }
    }
    g.nodes()
        .filter(|(_, n)| n.is_updatable() && n.kind != NodeKind::Dirichlet)
        .filter(|(id, _)| {
            children.get(id).map_or(true, |cs| {
                cs.iter().all(|&(c, role)| match g.node(c).map(|n| &n.state) {
                    Ok(NodeState::Evidence(e)) => e.is_inert(),
                    _ => matches!(role, ParentRole::Factor | ParentRole::Summand),
                })
            })
        })
        .map(|(id, _)| id)
        .collect()
}

/// Greedy best-first pruning: repeatedly removes the candidate with the
/// most negative removal delta while it is below `threshold`, re-pricing
/// after every removal. The network is rebuilt after each removal.
pub fn prune<T: Real>(net: &mut Network<T>, threshold: T, policy: &CascadePolicy) -> Result<Vec<PruneReport>> {
    let mut reports = Vec::new();
    loop {
        let mut best: Option<(NodeId, T)> = None;
        for c in candidates(net) {
            let d = match removal_delta(net, c, policy) {
                Ok(d) => d,
                Err(Error::NotLinearPath { .. }) => continue,
                Err(e) => return Err(e),
            };
            if d < threshold && best.is_none_or(|(_, b)| d < b) {
                best = Some((c, d));
            }
        }
        let Some((cand, delta)) = best else { break };
        let mut g = net.graph().clone();
        g.frozen = false;
        let label = g.label(cand);
        let removed = cascade_remove(&mut g, cand, policy)?;
        let removed_labels = removed.iter().map(|(_, l)| l.clone()).collect();
        *net = Network::new(g)?;
        reports.push(PruneReport {
            candidate: cand,
            label,
            delta_cost: delta.as_f64(),
            removed: removed.into_iter().map(|(id, _)| id).collect(),
            removed_labels,
        });
    }
    Ok(reports)
}

fn zero_constant<T: Real>(g: &mut ModelGraph<T>) -> Result<NodeId> {
    if let Some(id) = g.find(ZERO_LABEL) {
        return Ok(id);
    }
    g.constant(ZERO_LABEL, T::zero())
}

fn is_disposable<T: Real>(g: &ModelGraph<T>, id: NodeId) -> bool {
    g.node(id).is_ok_and(|n| {
        (n.is_updatable() || n.kind.is_computational() || n.kind == NodeKind::Proxy) && !n.is_observed()
    })
}

/// Removes `root` and everything the policy cascades to. Returns the
/// removed ids with their labels, in removal order.
pub fn cascade_remove<T: Real>(
    g: &mut ModelGraph<T>,
    root: NodeId,
    policy: &CascadePolicy,
) -> Result<Vec<(NodeId, String)>> {
    if g.node(root)?.is_observed() {
        return Err(Error::NotPrunable(g.label(root)));
    }
    let mut removed = Vec::new();
    let mut done = BTreeSet::new();
    let mut work = vec![root];
    while let Some(x) = work.pop() {
        if done.contains(&x) || !g.contains(x) || g.node(x)?.is_observed() {
            continue;
        }
        let aliases: BTreeSet<NodeId> = std::iter::once(x)
            .chain(g.nodes().filter(|(p, n)| n.kind == NodeKind::Proxy && g.resolve(*p) == x).map(|(p, _)| p))
            .collect();
        let former_parents: BTreeSet<NodeId> = aliases
            .iter()
            .filter_map(|&a| g.node(a).ok())
            .flat_map(|n| n.parents.iter().map(|&(_, p)| g.resolve(p)))
            .collect();

        for c in g.ids() {
            if aliases.contains(&c) {
                continue;
            }
            let (kind, parents) = {
                let n = g.node(c)?;
                (n.kind, n.parents.clone())
            };
            let mut kept = Vec::with_capacity(parents.len());
            let mut changed = false;
            for (role, p) in parents {
                if !aliases.contains(&p) {
                    kept.push((role, p));
                    continue;
                }
                changed = true;
                match policy.action(kind, role) {
                    CascadeAction::RemoveChild => {
                        work.push(c);
                        kept.push((role, p));
                    }
                    CascadeAction::DropEdge => {}
                    CascadeAction::RewireToZero => kept.push((role, zero_constant(g)?)),
                }
            }
            if changed {
                let empty_sum = kind == NodeKind::Sum && kept.is_empty();
                g.node_mut(c)?.parents = kept;
                if empty_sum {
                    work.push(c);
                }
            }
        }
        for &a in &aliases {
            let label = g.label(a);
            g.remove(a)?;
            done.insert(a);
            removed.push((a, label));
        }
        // Parents left without children go too.
        for p in former_parents {
            if done.contains(&p) || !is_disposable(g, p) {
                continue;
            }
            let has_child = g.nodes().any(|(_, n)| n.parents.iter().any(|&(_, q)| g.resolve(q) == p));
            if !has_child {
                work.push(p);
            }
        }
    }
    Ok(removed)
}

/// A node to create in [`add_component`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PatchNode<T> {
    pub kind: NodeKind,
    pub label: String,
    pub arity: Arity,
    /// Constant value, or proxy target for proxies is given in `target`.
    #[serde(default)]
    pub value: Option<T>,
    #[serde(default)]
    pub target: Option<String>,
}

/// Edge between labelled nodes (new or existing).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEdge {
    pub child: String,
    pub parent: String,
    pub role: ParentRole,
}

/// Fading evidence used to initialize a new node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EvidenceInit<T> {
    pub node: String,
    pub target: Vec<T>,
    pub precision: T,
    pub fade_sweeps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ComponentPatch<T> {
    pub nodes: Vec<PatchNode<T>>,
    pub edges: Vec<PatchEdge>,
    pub evidence: Vec<EvidenceInit<T>>,
}

/// Adds new nodes and edges to a network. Nodes with evidence start at the
/// evidence target; other new latent nodes are randomized from `seed`.
/// Existing posteriors are untouched. On any error the network is left as
/// it was.
pub fn add_component<T: Real>(net: &mut Network<T>, patch: &ComponentPatch<T>, seed: u64) -> Result<Vec<NodeId>> {
    let mut g = net.graph().clone();
    g.frozen = false;
    let mut created = Vec::new();
    for pn in &patch.nodes {
        let id = match (pn.kind, &pn.target) {
            (NodeKind::Proxy, Some(t)) => g.proxy(&pn.label, t, pn.arity)?,
            (NodeKind::Constant, _) => g.constant(&pn.label, pn.value.unwrap_or_else(T::zero))?,
            (kind, _) => g.create_node(kind, &pn.label, pn.arity)?,
        };
        created.push(id);
    }
    let find = |g: &ModelGraph<T>, l: &str| g.find(l).ok_or_else(|| Error::UnknownLabel(l.to_string()));
    for e in &patch.edges {
        let (c, p) = (find(&g, &e.child)?, find(&g, &e.parent)?);
        g.connect(c, p, e.role)?;
    }
    for ev in &patch.evidence {
        let target = find(&g, &ev.node)?;
        let schedule = EvidenceSchedule::new(ev.target.clone(), ev.precision, ev.fade_sweeps)?;
        let len = g.node(target)?.len(g.sample_count());
        if schedule.target.len() != 1 && schedule.target.len() != len {
            return Err(Error::DimensionMismatch {
                what: format!("evidence target for `{}`", ev.node),
                expected: len,
                got: schedule.target.len(),
            });
        }
        let fresh = g.node(target)?.init_pending;
        for t in 0..len {
            let m = schedule.target_at(t);
            if fresh && g.node(target)?.is_updatable() {
                g.set_posterior(target, t, m, T::lit(crate::graph::DEFAULT_INIT_VAR))?;
            }
        }
        created.push(g.evidence(&format!("evidence({})", ev.node), target, schedule)?);
    }
    if g.nodes().any(|(_, n)| matches!(n.state, NodeState::Proxy { resolved: None, .. })) {
        g.connect_proxies()?;
    }
    let mut new_net = Network::new(g)?;
    new_net.initialize(seed);
    *net = new_net;
    Ok(created)
}
