//! The allowed-connectivity table written out independently of the engine.

use vbblocks::{Arity, Error, Graph, NodeId, NodeKind, ParentRole};

pub const KINDS: [NodeKind; 12] = [
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

pub const ROLES: [ParentRole; 11] = [
    ParentRole::Mean,
    ParentRole::Variance,
    ParentRole::Summand,
    ParentRole::Factor,
    ParentRole::NonlinInput,
    ParentRole::DelayInput,
    ParentRole::DelayInit,
    ParentRole::ComponentMean(0),
    ParentRole::ComponentVariance(0),
    ParentRole::Selector,
    ParentRole::Concentration,
];

/// The allowed-connectivity table, written out independently of the
/// engine. Proxies stand in for any value until resolved.
pub fn expected(child: NodeKind, parent: NodeKind, role: ParentRole) -> bool {
    use NodeKind::*;
    let value = !matches!(parent, Dirichlet | Evidence);
    let variance = matches!(parent, Gaussian | Sum | Constant | Delay | Proxy);
    match child {
        Gaussian => match role {
            ParentRole::Mean => value,
            ParentRole::Variance => variance,
            _ => false,
        },
        RectifiedGaussian => role == ParentRole::Variance && variance,
        MixtureOfGaussians => match role {
            ParentRole::ComponentMean(_) => value,
            ParentRole::ComponentVariance(_) => variance,
            ParentRole::Selector => matches!(parent, Dirichlet | Proxy),
            _ => false,
        },
        Sum => role == ParentRole::Summand && value,
        Product => role == ParentRole::Factor && value,
        NonlinExpSquare | NonlinCut => role == ParentRole::NonlinInput && matches!(parent, Gaussian | Proxy),
        Delay => matches!(role, ParentRole::DelayInput | ParentRole::DelayInit) && value,
        Dirichlet => role == ParentRole::Concentration && parent == Constant,
        Evidence => role == ParentRole::Mean && matches!(parent, Gaussian | RectifiedGaussian | MixtureOfGaussians | Proxy),
        Constant | Proxy => false,
    }
}

pub fn make(g: &mut Graph, kind: NodeKind, label: &str) -> NodeId {
    if kind == NodeKind::Proxy {
        g.proxy(label, "nowhere", Arity::Scalar).unwrap()
    } else {
        g.create_node(kind, label, Arity::Scalar).unwrap()
    }
}

/// Tries every (child, parent, role) triple against the table. Returns the
/// number of triples checked.
pub fn check_table() -> Result<usize, String> {
    let mut checked = 0;
    for child in KINDS {
        if child == NodeKind::Proxy {
            continue;
        }
        for parent in KINDS {
            for role in ROLES {
                let mut g = Graph::new(4).unwrap();
                let p = make(&mut g, parent, "p");
                let c = g.create_node(child, "c", Arity::Vector).unwrap();
                let got = g.connect(c, p, role);
                if got.is_ok() != expected(child, parent, role) {
                    return Err(format!("{child:?} <-{role:?}- {parent:?}: {got:?}"));
                }
                if let Err(e) = got {
                    if !matches!(e, Error::IllegalRole { .. }) || !e.to_string().contains("allowed-connectivity table") {
                        return Err(format!("{child:?} <-{role:?}- {parent:?}: unexpected error {e}"));
                    }
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}
