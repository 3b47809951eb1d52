//! Model graph: typed nodes, role-labelled parent edges, proxies and delays.
//!
//! Nodes are created through the graph (the node factory), connected with
//! [`ModelGraph::connect`], and checked with [`ModelGraph::validate`].
//! Each node is either scalar or a vector over the graph's `sample_count`
//! samples; a vector node may have scalar parents but not the reverse.

pub mod doc;
pub mod rules;
pub(crate) mod validate;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::messages::NonlinKind;
use crate::scalar::Real;
use crate::variables::{DirichletPosterior, EvidenceSchedule, GaussianPosterior, MixturePosterior, RectifiedPosterior};

pub use doc::GraphDoc;
pub use validate::{ValidationReport, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Constant,
    Gaussian,
    RectifiedGaussian,
    MixtureOfGaussians,
    Dirichlet,
    Evidence,
    Sum,
    Product,
    NonlinExpSquare,
    NonlinCut,
    Delay,
    Proxy,
}

impl NodeKind {
    pub const ALL: [NodeKind; 12] = [
        NodeKind::Constant,
        NodeKind::Gaussian,
        NodeKind::RectifiedGaussian,
        NodeKind::MixtureOfGaussians,
        NodeKind::Dirichlet,
        NodeKind::Evidence,
        NodeKind::Sum,
        NodeKind::Product,
        NodeKind::NonlinExpSquare,
        NodeKind::NonlinCut,
        NodeKind::Delay,
        NodeKind::Proxy,
    ];

    /// Random-variable nodes that own a posterior.
    pub fn is_variable(self) -> bool {
        matches!(
            self,
            NodeKind::Gaussian | NodeKind::RectifiedGaussian | NodeKind::MixtureOfGaussians | NodeKind::Dirichlet
        )
    }

    /// Deterministic functions of their inputs.
    pub fn is_computational(self) -> bool {
        matches!(
            self,
            NodeKind::Sum | NodeKind::Product | NodeKind::NonlinExpSquare | NodeKind::NonlinCut | NodeKind::Delay
        )
    }

    pub fn nonlinearity(self) -> Option<NonlinKind> {
        match self {
            NodeKind::NonlinExpSquare => Some(NonlinKind::ExpSquare),
            NodeKind::NonlinCut => Some(NonlinKind::Cut),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arity {
    Scalar,
    Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParentRole {
    Mean,
    Variance,
    Summand,
    Factor,
    NonlinInput,
    DelayInput,
    DelayInit,
    ComponentMean(usize),
    ComponentVariance(usize),
    Selector,
    Concentration,
}

impl ParentRole {
    /// Whether the child reads the expected exponential through this edge.
    pub fn is_variance(self) -> bool {
        matches!(self, ParentRole::Variance | ParentRole::ComponentVariance(_))
    }
}

impl fmt::Display for ParentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParentRole::ComponentMean(i) => write!(f, "ComponentMean({i})"),
            ParentRole::ComponentVariance(i) => write!(f, "ComponentVariance({i})"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub child: NodeId,
    pub parent: NodeId,
    pub role: ParentRole,
}

/// Kind-specific state of a node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeState<T> {
    Computational,
    Constant(T),
    Gaussian(GaussianPosterior<T>),
    Rectified(RectifiedPosterior<T>),
    Mixture(MixturePosterior<T>),
    Dirichlet(DirichletPosterior<T>),
    Evidence(EvidenceSchedule<T>),
    Proxy { target: String, resolved: Option<NodeId> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node<T> {
    pub kind: NodeKind,
    pub label: String,
    pub arity: Arity,
    pub parents: Vec<(ParentRole, NodeId)>,
    pub state: NodeState<T>,
    /// Latent posteriors not yet set explicitly; randomized on first training.
    pub(crate) init_pending: bool,
}

impl<T: Real> Node<T> {
    pub fn len(&self, sample_count: usize) -> usize {
        match self.arity {
            Arity::Scalar => 1,
            Arity::Vector => sample_count,
        }
    }

    pub fn is_observed(&self) -> bool {
        match &self.state {
            NodeState::Gaussian(g) => g.observed,
            _ => false,
        }
    }

    /// Variable nodes updated by learning.
    pub fn is_updatable(&self) -> bool {
        match &self.state {
            NodeState::Gaussian(g) => !g.observed,
            NodeState::Rectified(_) | NodeState::Mixture(_) | NodeState::Dirichlet(_) => true,
            _ => false,
        }
    }

    pub fn parent(&self, role: ParentRole) -> Option<NodeId> {
        self.parents.iter().find(|(r, _)| *r == role).map(|&(_, p)| p)
    }

    pub fn gaussian(&self) -> Option<&GaussianPosterior<T>> {
        match &self.state {
            NodeState::Gaussian(g) => Some(g),
            NodeState::Mixture(m) => Some(&m.value),
            _ => None,
        }
    }
}

/// Default posterior variance given to new latent nodes.
pub const DEFAULT_INIT_VAR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T> {
    sample_count: usize,
    nodes: Vec<Option<Node<T>>>,
    labels: HashMap<String, NodeId>,
    pub(crate) frozen: bool,
    /// Free-form description stored with the graph (e.g. which builder made it).
    pub metadata: Option<serde_json::Value>,
}

impl<T: Real> ModelGraph<T> {
    pub fn new(sample_count: usize) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::InvalidSampleCount);
        }
        Ok(Self { sample_count, nodes: Vec::new(), labels: HashMap::new(), frozen: false, metadata: None })
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Size of the id space, including removed slots.
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_some()).count()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.get(id.0).is_some_and(Option::is_some)
    }

    pub fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes.get(id.0).and_then(Option::as_ref).ok_or(Error::UnknownNode(id))
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Result<&mut Node<T>> {
        self.nodes.get_mut(id.0).and_then(Option::as_mut).ok_or(Error::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node<T>)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.as_ref().map(|n| (NodeId(i), n)))
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.nodes().map(|(id, _)| id).collect()
    }

    pub fn find(&self, label: &str) -> Option<NodeId> {
        self.labels.get(label).copied()
    }

    pub fn label(&self, id: NodeId) -> String {
        self.node(id).map(|n| n.label.clone()).unwrap_or_else(|_| id.to_string())
    }

    pub fn edges(&self) -> Vec<Edge> {
        self.nodes()
            .flat_map(|(child, n)| n.parents.iter().map(move |&(role, parent)| Edge { child, parent, role }))
            .collect()
    }

    fn check_mutable(&self) -> Result<()> {
        if self.frozen {
            Err(Error::Frozen)
        } else {
            Ok(())
        }
    }

    fn default_state(&self, kind: NodeKind, arity: Arity) -> NodeState<T> {
        let len = match arity {
            Arity::Scalar => 1,
            Arity::Vector => self.sample_count,
        };
        let var = T::lit(DEFAULT_INIT_VAR);
        match kind {
            NodeKind::Constant => NodeState::Constant(T::zero()),
            NodeKind::Gaussian => NodeState::Gaussian(GaussianPosterior::latent(len, T::zero(), var)),
            NodeKind::RectifiedGaussian => NodeState::Rectified(RectifiedPosterior::new(len, T::zero(), var)),
            NodeKind::MixtureOfGaussians => {
                NodeState::Mixture(MixturePosterior::new(GaussianPosterior::latent(len, T::zero(), var), 0))
            }
            NodeKind::Dirichlet => NodeState::Dirichlet(DirichletPosterior::new(Vec::new())),
            NodeKind::Evidence => NodeState::Evidence(EvidenceSchedule {
                target: vec![T::zero()],
                precision: T::one(),
                fade_sweeps: 1,
                sweep: 0,
            }),
            NodeKind::Proxy => NodeState::Proxy { target: String::new(), resolved: None },
            _ => NodeState::Computational,
        }
    }

    fn insert(&mut self, kind: NodeKind, label: &str, arity: Arity, state: NodeState<T>) -> Result<NodeId> {
        self.check_mutable()?;
        if label.is_empty() {
            return Err(Error::EmptyLabel);
        }
        if kind != NodeKind::Proxy && self.labels.contains_key(label) {
            return Err(Error::DuplicateLabel(label.to_string()));
        }
        let id = NodeId(self.nodes.len());
        let init_pending = matches!(
            state,
            NodeState::Gaussian(GaussianPosterior { observed: false, .. }) | NodeState::Rectified(_) | NodeState::Mixture(_)
        );
        self.nodes.push(Some(Node { kind, label: label.to_string(), arity, parents: Vec::new(), state, init_pending }));
        if kind != NodeKind::Proxy {
            self.labels.insert(label.to_string(), id);
        }
        Ok(id)
    }

    /// Registers a node with default state and no parents. Vector nodes get
    /// `sample_count` posterior slots.
    pub fn create_node(&mut self, kind: NodeKind, label: &str, arity: Arity) -> Result<NodeId> {
        if kind == NodeKind::Proxy {
            return Err(Error::ProxyWithoutTarget);
        }
        let arity = if kind == NodeKind::Delay { Arity::Vector } else { arity };
        let state = self.default_state(kind, arity);
        self.insert(kind, label, arity, state)
    }

    /// Placeholder for the node labelled `target`, which may not exist yet.
    /// Resolved by [`ModelGraph::connect_proxies`].
    pub fn proxy(&mut self, label: &str, target: &str, arity: Arity) -> Result<NodeId> {
        let state = NodeState::Proxy { target: target.to_string(), resolved: None };
        self.insert(NodeKind::Proxy, label, arity, state)
    }

    /// Follows a resolved proxy to its target.
    pub fn resolve(&self, id: NodeId) -> NodeId {
        match self.node(id).map(|n| &n.state) {
            Ok(NodeState::Proxy { resolved: Some(t), .. }) => *t,
            _ => id,
        }
    }

    /// Kind used for role checks: proxies report their target's kind once resolved.
    pub fn effective_kind(&self, id: NodeId) -> Result<NodeKind> {
        let r = self.resolve(id);
        Ok(self.node(r)?.kind)
    }

    pub fn effective_arity(&self, id: NodeId) -> Result<Arity> {
        let r = self.resolve(id);
        Ok(self.node(r)?.arity)
    }

    /// Adds a parent edge after checking the connectivity rules. Structural
    /// rules that depend on the whole graph are left to `validate`.
    pub fn connect(&mut self, child: NodeId, parent: NodeId, role: ParentRole) -> Result<()> {
        self.check_mutable()?;
        let child_node = self.node(child)?;
        let child_kind = child_node.kind;
        let child_arity = child_node.arity;
        let parent_kind = self.effective_kind(parent)?;
        if !rules::role_allowed(child_kind, parent_kind, role) {
            return Err(Error::IllegalRole { child_kind, parent_kind, role });
        }
        if child_arity == Arity::Scalar && self.effective_arity(parent)? == Arity::Vector {
            return Err(Error::ScalarChildVectorParent { child: self.label(child), parent: self.label(parent) });
        }
        self.node_mut(child)?.parents.push((role, parent));
        Ok(())
    }

    /// Resolves every proxy to its target label.
    pub fn connect_proxies(&mut self) -> Result<()> {
        let mut dangling = Vec::new();
        let mut updates = Vec::new();
        for (id, n) in self.nodes() {
            if let NodeState::Proxy { target, .. } = &n.state {
                match self.labels.get(target) {
                    Some(&t) => updates.push((id, t)),
                    None => dangling.push(format!("{} -> {}", n.label, target)),
                }
            }
        }
        if !dangling.is_empty() {
            return Err(Error::UnresolvedProxy(dangling));
        }
        for (id, t) in updates {
            let arity = self.node(t)?.arity;
            let n = self.node_mut(id)?;
            n.arity = arity;
            if let NodeState::Proxy { resolved, .. } = &mut n.state {
                *resolved = Some(t);
            }
        }
        Ok(())
    }

    pub fn proxies_connected(&self) -> bool {
        self.nodes().all(|(_, n)| !matches!(n.state, NodeState::Proxy { resolved: None, .. }))
    }

    // --- convenience constructors -------------------------------------

    pub fn constant(&mut self, label: &str, value: T) -> Result<NodeId> {
        self.insert(NodeKind::Constant, label, Arity::Scalar, NodeState::Constant(value))
    }

    /// Latent Gaussian `N(mean, e^{-var})`.
    pub fn gaussian(&mut self, label: &str, arity: Arity, mean: NodeId, var: NodeId) -> Result<NodeId> {
        let id = self.create_node(NodeKind::Gaussian, label, arity)?;
        self.attach(id, &[(ParentRole::Mean, mean), (ParentRole::Variance, var)])
    }

    /// Observed Gaussian clamped to `data` (one value for scalar, `sample_count` for vector).
    pub fn observed(&mut self, label: &str, data: Vec<T>, mean: NodeId, var: NodeId) -> Result<NodeId> {
        let arity = self.arity_for_len(data.len(), "observed data")?;
        let id = self.insert(NodeKind::Gaussian, label, arity, NodeState::Gaussian(GaussianPosterior::observed(data)))?;
        self.attach(id, &[(ParentRole::Mean, mean), (ParentRole::Variance, var)])
    }

    /// Connects the parents of a node just created; on failure the node is
    /// discarded so that a rejected constructor leaves no trace.
    fn attach(&mut self, id: NodeId, parents: &[(ParentRole, NodeId)]) -> Result<NodeId> {
        for &(role, p) in parents {
            if let Err(e) = self.connect(id, p, role) {
                debug_assert_eq!(id.0 + 1, self.nodes.len());
                if let Some(Some(n)) = self.nodes.pop() {
                    if n.kind != NodeKind::Proxy {
                        self.labels.remove(&n.label);
                    }
                }
                return Err(e);
            }
        }
        Ok(id)
    }

    fn arity_for_len(&self, len: usize, what: &str) -> Result<Arity> {
        if len == self.sample_count {
            Ok(Arity::Vector)
        } else if len == 1 {
            Ok(Arity::Scalar)
        } else {
            Err(Error::DimensionMismatch { what: what.to_string(), expected: self.sample_count, got: len })
        }
    }

    pub fn rectified(&mut self, label: &str, arity: Arity, var: NodeId) -> Result<NodeId> {
        let id = self.create_node(NodeKind::RectifiedGaussian, label, arity)?;
        self.attach(id, &[(ParentRole::Variance, var)])
    }

    pub fn sum(&mut self, label: &str, arity: Arity, summands: &[NodeId]) -> Result<NodeId> {
        let id = self.create_node(NodeKind::Sum, label, arity)?;
        let parents: Vec<_> = summands.iter().map(|&s| (ParentRole::Summand, s)).collect();
        self.attach(id, &parents)
    }

    pub fn product(&mut self, label: &str, arity: Arity, a: NodeId, b: NodeId) -> Result<NodeId> {
        let id = self.create_node(NodeKind::Product, label, arity)?;
        self.attach(id, &[(ParentRole::Factor, a), (ParentRole::Factor, b)])
    }

    pub fn nonlinearity(&mut self, kind: NonlinKind, label: &str, input: NodeId) -> Result<NodeId> {
        let node_kind = match kind {
            NonlinKind::ExpSquare => NodeKind::NonlinExpSquare,
            NonlinKind::Cut => NodeKind::NonlinCut,
        };
        let arity = self.effective_arity(input)?;
        let id = self.create_node(node_kind, label, arity)?;
        self.attach(id, &[(ParentRole::NonlinInput, input)])
    }

    pub fn delay(&mut self, label: &str, init: NodeId, input: NodeId) -> Result<NodeId> {
        let id = self.create_node(NodeKind::Delay, label, Arity::Vector)?;
        self.attach(id, &[(ParentRole::DelayInit, init), (ParentRole::DelayInput, input)])
    }

    /// Dirichlet weights; an empty `prior` means all-ones sized to the mixture.
    pub fn dirichlet(&mut self, label: &str, prior: Vec<T>) -> Result<NodeId> {
        if prior.iter().any(|&u| !(u > T::zero())) {
            return Err(Error::invalid("dirichlet prior", "concentrations must be positive"));
        }
        self.insert(NodeKind::Dirichlet, label, Arity::Scalar, NodeState::Dirichlet(DirichletPosterior::new(prior)))
    }

    /// Mixture of Gaussians with component `(mean, variance)` parents.
    pub fn mixture(
        &mut self,
        label: &str,
        arity: Arity,
        components: &[(NodeId, NodeId)],
        selector: NodeId,
    ) -> Result<NodeId> {
        let id = self.create_node(NodeKind::MixtureOfGaussians, label, arity)?;
        let mut parents = Vec::with_capacity(2 * components.len() + 1);
        for (i, &(m, v)) in components.iter().enumerate() {
            parents.push((ParentRole::ComponentMean(i), m));
            parents.push((ParentRole::ComponentVariance(i), v));
        }
        parents.push((ParentRole::Selector, selector));
        self.attach(id, &parents)?;
        if let NodeState::Mixture(m) = &mut self.node_mut(id)?.state {
            m.resize(components.len());
        }
        Ok(id)
    }

    pub fn evidence(&mut self, label: &str, parent: NodeId, schedule: EvidenceSchedule<T>) -> Result<NodeId> {
        let arity = self.effective_arity(parent)?;
        let id = self.insert(NodeKind::Evidence, label, arity, NodeState::Evidence(schedule))?;
        self.attach(id, &[(ParentRole::Mean, parent)])
    }

    // --- state access ---------------------------------------------------

    pub fn set_constant(&mut self, id: NodeId, value: T) -> Result<()> {
        match &mut self.node_mut(id)?.state {
            NodeState::Constant(v) => {
                *v = value;
                Ok(())
            }
            _ => Err(Error::invalid("set_constant", "node is not a constant")),
        }
    }

    /// Clamps a Gaussian node to data.
    pub fn set_observed(&mut self, id: NodeId, data: Vec<T>) -> Result<()> {
        let sc = self.sample_count;
        let n = self.node_mut(id)?;
        let len = n.len(sc);
        if data.len() != len {
            return Err(Error::DimensionMismatch { what: format!("data for `{}`", n.label), expected: len, got: data.len() });
        }
        match &mut n.state {
            NodeState::Gaussian(g) => {
                *g = GaussianPosterior::observed(data);
                n.init_pending = false;
                Ok(())
            }
            NodeState::Mixture(m) => {
                m.value = GaussianPosterior::observed(data);
                Ok(())
            }
            _ => Err(Error::invalid("set_observed", "node is not a Gaussian or mixture")),
        }
    }

    /// Sets one sample of a latent Gaussian, mixture value or rectified
    /// (location, scale²) posterior.
    pub fn set_posterior(&mut self, id: NodeId, slot: usize, mean: T, var: T) -> Result<()> {
        let sc = self.sample_count;
        let n = self.node_mut(id)?;
        let len = n.len(sc);
        if slot >= len {
            return Err(Error::OutOfRange { index: slot, lo: 0, hi: len });
        }
        if !(var > T::zero()) {
            return Err(Error::invalid("posterior variance", "must be positive"));
        }
        n.init_pending = false;
        match &mut n.state {
            NodeState::Gaussian(g) if !g.observed => g.set_slot(slot, crate::messages::NormalQ::new(mean, var)),
            NodeState::Mixture(m) if !m.value.observed => {
                m.value.set_slot(slot, crate::messages::NormalQ::new(mean, var))
            }
            NodeState::Rectified(r) => r.set_slot(slot, crate::variables::TruncatedQ { loc: mean, scale2: var }),
            _ => return Err(Error::invalid("set_posterior", "node has no settable latent posterior")),
        }
        Ok(())
    }

    /// Marks a node's current posterior as an explicit initialization.
    pub fn mark_initialized(&mut self, id: NodeId) -> Result<()> {
        self.node_mut(id)?.init_pending = false;
        Ok(())
    }

    pub(crate) fn remove(&mut self, id: NodeId) -> Result<Node<T>> {
        let node = self.nodes.get_mut(id.0).and_then(Option::take).ok_or(Error::UnknownNode(id))?;
        if self.labels.get(&node.label) == Some(&id) {
            self.labels.remove(&node.label);
        }
        Ok(node)
    }

    /// Places a node at a given id (used when loading documents).
    pub(crate) fn insert_at(&mut self, id: NodeId, node: Node<T>) -> Result<()> {
        if node.kind != NodeKind::Proxy {
            if self.labels.contains_key(&node.label) {
                return Err(Error::DuplicateLabel(node.label));
            }
            self.labels.insert(node.label.clone(), id);
        }
        if self.nodes.len() <= id.0 {
            self.nodes.resize_with(id.0 + 1, || None);
        }
        if self.nodes[id.0].is_some() {
            return Err(Error::invalid("node id", format!("{id} used twice")));
        }
        self.nodes[id.0] = Some(node);
        Ok(())
    }
}
