//! JSON document form of a model graph.
//!
//! ```json
//! {
//!   "format": "vbblocks-graph/1",
//!   "sample_count": 300,
//!   "metadata": { ... },
//!   "nodes": [
//!     {"id": 0, "kind": "Constant", "label": "const0", "arity": "scalar", "value": 0.0},
//!     {"id": 1, "kind": "Gaussian", "label": "s", "arity": "vector",
//!      "posterior": {"family": "gaussian", "mean": [...], "var": [...]}}
//!   ],
//!   "edges": [{"child": 1, "parent": 0, "role": "Mean"}]
//! }
//! ```
//!
//! Roles are written as strings, with component indices in parentheses
//! (`"ComponentMean(2)"`). Edges of a child appear in the order its parents
//! were connected; this order is preserved on load.

use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Arity, ModelGraph, Node, NodeId, NodeKind, NodeState, ParentRole};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::variables::{DirichletPosterior, EvidenceSchedule, GaussianPosterior, MixturePosterior, RectifiedPosterior};

pub const FORMAT: &str = "vbblocks-graph/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GraphDoc<T> {
    pub format: String,
    pub sample_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
    pub nodes: Vec<NodeDoc<T>>,
    pub edges: Vec<EdgeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NodeDoc<T> {
    pub id: usize,
    pub kind: NodeKind,
    pub label: String,
    pub arity: Arity,
    /// Constant value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<T>,
    /// Proxy target label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Clamped data of an observed Gaussian or mixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<Vec<T>>,
    /// Dirichlet prior concentrations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<EvidenceSchedule<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PosteriorDoc<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", bound = "T: Real")]
pub enum PosteriorDoc<T> {
    Gaussian { mean: Vec<T>, var: Vec<T> },
    Rectified { loc: Vec<T>, scale2: Vec<T> },
    Mixture { mean: Vec<T>, var: Vec<T>, resp: Vec<Vec<T>> },
    Dirichlet { counts: Vec<T> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub child: usize,
    pub parent: usize,
    #[serde(serialize_with = "role_to_str", deserialize_with = "role_from_str")]
    pub role: ParentRole,
}

fn role_to_str<S: Serializer>(role: &ParentRole, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&role.to_string())
}

fn role_from_str<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ParentRole, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

impl FromStr for ParentRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let indexed = |prefix: &str| -> Option<usize> {
            s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?.trim().parse().ok()
        };
        Ok(match s {
            "Mean" => ParentRole::Mean,
            "Variance" => ParentRole::Variance,
            "Summand" => ParentRole::Summand,
            "Factor" => ParentRole::Factor,
            "NonlinInput" => ParentRole::NonlinInput,
            "DelayInput" => ParentRole::DelayInput,
            "DelayInit" => ParentRole::DelayInit,
            "Selector" => ParentRole::Selector,
            "Concentration" => ParentRole::Concentration,
            _ => {
                if let Some(i) = indexed("ComponentMean") {
                    ParentRole::ComponentMean(i)
                } else if let Some(i) = indexed("ComponentVariance") {
                    ParentRole::ComponentVariance(i)
                } else {
                    return Err(Error::Parse(format!("unknown parent role `{s}`")));
                }
            }
        })
    }
}

impl<T: Real> ModelGraph<T> {
    /// Document form; posteriors of latent nodes are included when asked.
    pub fn to_doc(&self, with_posteriors: bool) -> GraphDoc<T> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (id, n) in self.nodes() {
            let mut doc = NodeDoc {
                id: id.0,
                kind: n.kind,
                label: n.label.clone(),
                arity: n.arity,
                value: None,
                target: None,
                observed: None,
                prior: None,
                evidence: None,
                posterior: None,
            };
            match &n.state {
                NodeState::Constant(c) => doc.value = Some(*c),
                NodeState::Proxy { target, .. } => doc.target = Some(target.clone()),
                NodeState::Gaussian(g) if g.observed => doc.observed = Some(g.mean.clone()),
                NodeState::Gaussian(g) => {
                    if with_posteriors {
                        doc.posterior = Some(PosteriorDoc::Gaussian { mean: g.mean.clone(), var: g.var.clone() })
                    }
                }
                NodeState::Rectified(r) => {
                    if with_posteriors {
                        doc.posterior = Some(PosteriorDoc::Rectified { loc: r.loc.clone(), scale2: r.scale2.clone() })
                    }
                }
                NodeState::Mixture(m) => {
                    if m.value.observed {
                        doc.observed = Some(m.value.mean.clone());
                    }
                    if with_posteriors {
                        doc.posterior = Some(PosteriorDoc::Mixture {
                            mean: m.value.mean.clone(),
                            var: m.value.var.clone(),
                            resp: m.resp.clone(),
                        })
                    }
                }
                NodeState::Dirichlet(d) => {
                    doc.prior = Some(d.prior.clone());
                    if with_posteriors {
                        doc.posterior = Some(PosteriorDoc::Dirichlet { counts: d.counts.clone() })
                    }
                }
                NodeState::Evidence(e) => doc.evidence = Some(e.clone()),
                NodeState::Computational => {}
            }
            nodes.push(doc);
            for &(role, p) in &n.parents {
                edges.push(EdgeDoc { child: id.0, parent: p.0, role });
            }
        }
        GraphDoc { format: FORMAT.to_string(), sample_count: self.sample_count(), metadata: self.metadata.clone(), nodes, edges }
    }

    /// Rebuilds a graph from its document. Edges go through the same role
    /// checks as [`ModelGraph::connect`]; proxies are resolved if possible.
    pub fn from_doc(doc: &GraphDoc<T>) -> Result<Self> {
        if doc.format != FORMAT {
            return Err(Error::Parse(format!("unsupported graph format `{}`", doc.format)));
        }
        let mut g = ModelGraph::new(doc.sample_count)?;
        g.metadata = doc.metadata.clone();
        for nd in &doc.nodes {
            let node = node_from_doc(&g, nd)?;
            g.insert_at(NodeId(nd.id), node)?;
        }
        for e in &doc.edges {
            let (child, parent) = (NodeId(e.child), NodeId(e.parent));
            g.node(parent)?;
            g.connect(child, parent, e.role)?;
        }
        if g.nodes().any(|(_, n)| n.kind == NodeKind::Proxy) {
            g.connect_proxies()?;
        }
        Ok(g)
    }

    pub fn to_json(&self, with_posteriors: bool) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc(with_posteriors))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GraphDoc<T> = serde_json::from_str(s)?;
        Self::from_doc(&doc)
    }
}

fn check_len<T>(label: &str, what: &str, v: &[T], len: usize) -> Result<()> {
    if v.len() == len {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what: format!("{what} of `{label}`"), expected: len, got: v.len() })
    }
}

fn node_from_doc<T: Real>(g: &ModelGraph<T>, nd: &NodeDoc<T>) -> Result<Node<T>> {
    let len = match nd.arity {
        Arity::Scalar => 1,
        Arity::Vector => g.sample_count(),
    };
    let label = nd.label.as_str();
    let missing = |field: &str| Error::Parse(format!("node `{label}` ({:?}) needs field `{field}`", nd.kind));
    let var = T::lit(super::DEFAULT_INIT_VAR);
    let mut init_pending = false;
    let state = match nd.kind {
        NodeKind::Constant => NodeState::Constant(nd.value.ok_or_else(|| missing("value"))?),
        NodeKind::Proxy => NodeState::Proxy { target: nd.target.clone().ok_or_else(|| missing("target"))?, resolved: None },
        NodeKind::Gaussian => match (&nd.observed, &nd.posterior) {
            (Some(data), _) => {
                check_len(label, "observed data", data, len)?;
                NodeState::Gaussian(GaussianPosterior::observed(data.clone()))
            }
            (None, Some(PosteriorDoc::Gaussian { mean, var })) => {
                check_len(label, "posterior mean", mean, len)?;
                check_len(label, "posterior var", var, len)?;
                NodeState::Gaussian(GaussianPosterior { mean: mean.clone(), var: var.clone(), observed: false })
            }
            (None, None) => {
                init_pending = true;
                NodeState::Gaussian(GaussianPosterior::latent(len, T::zero(), var))
            }
            _ => return Err(missing("gaussian posterior")),
        },
        NodeKind::RectifiedGaussian => match &nd.posterior {
            Some(PosteriorDoc::Rectified { loc, scale2 }) => {
                check_len(label, "posterior loc", loc, len)?;
                check_len(label, "posterior scale2", scale2, len)?;
                NodeState::Rectified(RectifiedPosterior { loc: loc.clone(), scale2: scale2.clone() })
            }
            None => {
                init_pending = true;
                NodeState::Rectified(RectifiedPosterior::new(len, T::zero(), var))
            }
            _ => return Err(missing("rectified posterior")),
        },
        NodeKind::MixtureOfGaussians => {
            let mut value = match &nd.observed {
                Some(data) => {
                    check_len(label, "observed data", data, len)?;
                    GaussianPosterior::observed(data.clone())
                }
                None => GaussianPosterior::latent(len, T::zero(), var),
            };
            match &nd.posterior {
                Some(PosteriorDoc::Mixture { mean, var, resp }) => {
                    if !value.observed {
                        check_len(label, "posterior mean", mean, len)?;
                        check_len(label, "posterior var", var, len)?;
                        value = GaussianPosterior { mean: mean.clone(), var: var.clone(), observed: false };
                    }
                    check_len(label, "responsibilities", resp, len)?;
                    NodeState::Mixture(MixturePosterior { resp: resp.clone(), value })
                }
                None => {
                    init_pending = !value.observed;
                    NodeState::Mixture(MixturePosterior::new(value, 0))
                }
                _ => return Err(missing("mixture posterior")),
            }
        }
        NodeKind::Dirichlet => {
            let prior = nd.prior.clone().unwrap_or_default();
            let mut d = DirichletPosterior::new(prior);
            if let Some(PosteriorDoc::Dirichlet { counts }) = &nd.posterior {
                d.counts = counts.clone();
            }
            NodeState::Dirichlet(d)
        }
        NodeKind::Evidence => {
            let e = nd.evidence.clone().ok_or_else(|| missing("evidence"))?;
            EvidenceSchedule::new(e.target.clone(), e.precision, e.fade_sweeps)?;
            NodeState::Evidence(e)
        }
        _ => NodeState::Computational,
    };
    Ok(Node { kind: nd.kind, label: nd.label.clone(), arity: nd.arity, parents: Vec::new(), state, init_pending })
}
