//! Allowed connectivity between node kinds.
//!
//! | child                      | role                    | parent kinds          |
//! |----------------------------|-------------------------|-----------------------|
//! | Gaussian                   | Mean                    | any value             |
//! | Gaussian                   | Variance                | Gaussian, Sum         |
//! | RectifiedGaussian          | Variance                | Gaussian, Sum         |
//! | MixtureOfGaussians         | ComponentMean(i)        | any value             |
//! | MixtureOfGaussians         | ComponentVariance(i)    | Gaussian, Sum         |
//! | Sum                        | Summand                 | any value             |
//! | Product                    | Factor                  | any value             |
//! | NonlinExpSquare, NonlinCut | NonlinInput             | Gaussian              |
//!
//! Constants count as (observed) Gaussians for the variance rows but not
//! for nonlinearity inputs, where a deterministic input is pointless. Roles
//! outside the table: a mixture's `Selector` is a Dirichlet, a Dirichlet's
//! `Concentration` parents are constants, a delay takes any value as input or
//! initial value, and an evidence node attaches to a variable node.
//!
//! Proxies and delays are transparent wrappers: a proxy is checked against
//! its target once resolved, and a delay used as a variance parent must wrap
//! variance-capable values. Sums used as variance parents must have
//! variance-capable summands all the way down; both are checked in
//! validation since they depend on the rest of the graph.

use super::{NodeKind, ParentRole};

/// Kinds whose output is a value usable as a generic ("any") parent.
pub fn provides_value(kind: NodeKind) -> bool {
    !matches!(kind, NodeKind::Dirichlet | NodeKind::Evidence)
}

/// Kinds accepted in variance roles at connect time.
pub fn variance_capable(kind: NodeKind) -> bool {
    matches!(kind, NodeKind::Gaussian | NodeKind::Sum | NodeKind::Constant | NodeKind::Delay | NodeKind::Proxy)
}

/// Whether `parent` may be connected to `child` in `role`.
///
/// Proxies are accepted wherever some value kind is; the resolved target is
/// re-checked during validation.
pub fn role_allowed(child: NodeKind, parent: NodeKind, role: ParentRole) -> bool {
    use NodeKind::*;
    use ParentRole::*;
    match (child, role) {
        (Gaussian, Mean) => provides_value(parent),
        (Gaussian, Variance) => variance_capable(parent),
        (RectifiedGaussian, Variance) => variance_capable(parent),
        (MixtureOfGaussians, ComponentMean(_)) => provides_value(parent),
        (MixtureOfGaussians, ComponentVariance(_)) => variance_capable(parent),
        (MixtureOfGaussians, Selector) => matches!(parent, Dirichlet | Proxy),
        (Sum, Summand) => provides_value(parent),
        (Product, Factor) => provides_value(parent),
        (NonlinExpSquare | NonlinCut, NonlinInput) => matches!(parent, Gaussian | Proxy),
        (Delay, DelayInput | DelayInit) => provides_value(parent),
        (Dirichlet, Concentration) => matches!(parent, Constant),
        (Evidence, Mean) => matches!(parent, Gaussian | RectifiedGaussian | MixtureOfGaussians | Proxy),
        _ => false,
    }
}

/// Roles a node of `kind` can have as parents, used for error messages.
pub fn roles_of(kind: NodeKind) -> &'static str {
    use NodeKind::*;
    match kind {
        Gaussian => "Mean, Variance",
        RectifiedGaussian => "Variance",
        MixtureOfGaussians => "ComponentMean(i), ComponentVariance(i), Selector",
        Sum => "Summand",
        Product => "Factor (exactly two)",
        NonlinExpSquare | NonlinCut => "NonlinInput",
        Delay => "DelayInput, DelayInit",
        Dirichlet => "Concentration",
        Evidence => "Mean",
        Constant | Proxy => "none",
    }
}
