use thiserror::Error;

use crate::graph::{NodeId, NodeKind, ParentRole, ValidationReport};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample count must be positive")]
    InvalidSampleCount,
    #[error("label must be nonempty")]
    EmptyLabel,
    #[error("label `{0}` is already used by another node")]
    DuplicateLabel(String),
    #[error("no node with id {0}")]
    UnknownNode(NodeId),
    #[error("no node labelled `{0}`")]
    UnknownLabel(String),
    #[error("graph is frozen; structural edits go through the network")]
    Frozen,
    #[error(
        "illegal connection: {parent_kind:?} cannot be the {role} parent of {child_kind:?} \
         (allowed-connectivity table)"
    )]
    IllegalRole { child_kind: NodeKind, parent_kind: NodeKind, role: ParentRole },
    #[error("scalar node `{child}` cannot have the vector parent `{parent}`")]
    ScalarChildVectorParent { child: String, parent: String },
    #[error("unresolved proxies: {}", .0.join(", "))]
    UnresolvedProxy(Vec<String>),
    #[error("proxy nodes are created with `ModelGraph::proxy`, which takes the target label")]
    ProxyWithoutTarget,
    #[error("graph failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error("a variance-type message reached a node without the expected-exponential statistic")]
    MissingExpStat,
    #[error("aggregated quadratic coefficient must be positive, got {0}")]
    NonPositiveQuad(f64),
    #[error("node `{node}` reaches `{through}` through a nonlinearity; removal is not priced by substitution")]
    NotLinearPath { node: String, through: String },
    #[error("node `{0}` cannot be pruned (observed or not a latent variable)")]
    NotPrunable(String),
    #[error("mask row {0} has no connections")]
    EmptyRow(usize),
    #[error("index {index} out of range (valid {lo}..{hi})")]
    OutOfRange { index: usize, lo: usize, hi: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },
    #[error("invalid {what}: {reason}")]
    InvalidArgument { what: String, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidArgument { what: what.into(), reason: reason.into() }
    }
}
