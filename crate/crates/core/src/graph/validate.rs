use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{rules, Arity, ModelGraph, NodeId, NodeKind, NodeState, ParentRole};
use crate::scalar::Real;

/// A structural rule broken by the graph. Node references are labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    UnresolvedProxy { proxy: String, target: String },
    /// Cycle that does not pass through a delay input.
    Cycle { nodes: Vec<String> },
    /// Cycle made only of computational nodes (through a delay); its output
    /// would be a deterministic recursion with no variable to absorb it.
    ComputationalLoop { nodes: Vec<String> },
    /// More than one purely computational path from a latent variable to
    /// another variable at the same time lag.
    MultiplePaths { from: String, to: String, lag: usize, count: usize },
    IllegalRole { child: String, parent: String, role: String, detail: String },
    ProductArity { node: String, factors: usize },
    MissingParent { node: String, role: String },
    DuplicateRole { node: String, role: String },
    ArityMismatch { child: String, parent: String },
    ComponentMismatch { node: String, detail: String },
    DataLength { node: String, expected: usize, got: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnresolvedProxy { proxy, target } => write!(f, "proxy `{proxy}` targets missing label `{target}`"),
            Violation::Cycle { nodes } => write!(f, "cycle without a delay: {}", nodes.join(" -> ")),
            Violation::ComputationalLoop { nodes } => {
                write!(f, "loop of computational nodes: {}", nodes.join(" -> "))
            }
            Violation::MultiplePaths { from, to, lag, count } => write!(
                f,
                "{count} computational paths from `{from}` to `{to}` at lag {lag}; inputs must be independent"
            ),
            Violation::IllegalRole { child, parent, role, detail } => {
                write!(f, "`{parent}` cannot be the {role} parent of `{child}`: {detail}")
            }
            Violation::ProductArity { node, factors } => {
                write!(f, "product `{node}` has {factors} factors, needs exactly 2")
            }
            Violation::MissingParent { node, role } => write!(f, "`{node}` is missing its {role} parent"),
            Violation::DuplicateRole { node, role } => write!(f, "`{node}` has more than one {role} parent"),
            Violation::ArityMismatch { child, parent } => {
                write!(f, "scalar `{child}` has vector parent `{parent}`")
            }
            Violation::ComponentMismatch { node, detail } => write!(f, "`{node}`: {detail}"),
            Violation::DataLength { node, expected, got } => {
                write!(f, "`{node}` holds {got} samples, expected {expected}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Parent and child adjacency with proxies followed. Indexed by node id;
/// removed ids and proxies have empty lists.
#[derive(Debug, Clone)]
pub(crate) struct Wiring {
    pub parents: Vec<Vec<(ParentRole, NodeId)>>,
    /// `(child, index into child's parents)`.
    pub children: Vec<Vec<(NodeId, usize)>>,
}

impl Wiring {
    pub fn build<T: Real>(g: &ModelGraph<T>) -> Self {
        let n = g.capacity();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for (id, node) in g.nodes() {
            if node.kind == NodeKind::Proxy {
                continue;
            }
            for (k, &(role, p)) in node.parents.iter().enumerate() {
                let rp = g.resolve(p);
                parents[id.0].push((role, rp));
                if rp.0 < n {
                    children[rp.0].push((id, k));
                }
            }
        }
        Self { parents, children }
    }

    pub fn is_delay_input(&self, child: NodeId, k: usize, kinds: &[Option<NodeKind>]) -> bool {
        kinds[child.0] == Some(NodeKind::Delay) && self.parents[child.0][k].0 == ParentRole::DelayInput
    }
}

fn kinds_of<T: Real>(g: &ModelGraph<T>) -> Vec<Option<NodeKind>> {
    let mut kinds = vec![None; g.capacity()];
    for (id, n) in g.nodes() {
        kinds[id.0] = Some(n.kind);
    }
    kinds
}

/// Finds one cycle in the directed graph given by `next` (parent lists), if any.
fn find_cycle(n: usize, live: &[bool], next: impl Fn(usize) -> Vec<usize>) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut mark = vec![Mark::New; n];
    for start in 0..n {
        if !live[start] || mark[start] != Mark::New {
            continue;
        }
        // Iterative DFS with explicit path.
        let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(start, next(start), 0)];
        mark[start] = Mark::Active;
        while let Some((v, succ, i)) = stack.last_mut() {
            if *i < succ.len() {
                let w = succ[*i];
                *i += 1;
                if !live[w] {
                    continue;
                }
                match mark[w] {
                    Mark::New => {
                        mark[w] = Mark::Active;
                        let s = next(w);
                        stack.push((w, s, 0));
                    }
                    Mark::Active => {
                        let pos = stack.iter().position(|(u, _, _)| *u == w).unwrap_or(0);
                        let mut cyc: Vec<usize> = stack[pos..].iter().map(|(u, _, _)| *u).collect();
                        cyc.push(w);
                        return Some(cyc);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[*v] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

/// Number of delay edges crossed, keyed by reached variable node.
pub(crate) type LagPaths = BTreeMap<(NodeId, usize), usize>;

/// Enumerates computational paths from `start` to variable (or evidence)
/// nodes, counting paths per (endpoint, lag).
pub(crate) fn computational_paths(wiring: &Wiring, kinds: &[Option<NodeKind>], start: NodeId) -> LagPaths {
    const PATH_LIMIT: usize = 1 << 16;
    let mut out = LagPaths::new();
    let mut stack: Vec<(NodeId, usize)> = Vec::new();
    let mut explored = 0usize;
    for &(c, k) in &wiring.children[start.0] {
        stack.push((c, usize::from(wiring.is_delay_input(c, k, kinds))));
    }
    while let Some((node, lag)) = stack.pop() {
        explored += 1;
        if explored > PATH_LIMIT {
            break;
        }
        match kinds[node.0] {
            Some(k) if k.is_computational() => {
                for &(c, j) in &wiring.children[node.0] {
                    stack.push((c, lag + usize::from(wiring.is_delay_input(c, j, kinds))));
                }
            }
            Some(_) => *out.entry((node, lag)).or_insert(0) += 1,
            None => {}
        }
    }
    out
}

impl<T: Real> ModelGraph<T> {
    pub(crate) fn wiring(&self) -> Wiring {
        Wiring::build(self)
    }

    /// Checks every structural rule; violations are returned, not raised.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let kinds = kinds_of(self);
        let wiring = self.wiring();
        let label = |id: NodeId| self.label(id);

        for (id, n) in self.nodes() {
            if let NodeState::Proxy { target, resolved } = &n.state {
                if resolved.is_none() {
                    v.push(Violation::UnresolvedProxy { proxy: n.label.clone(), target: target.clone() });
                }
                continue;
            }
            self.check_parents(id, &wiring, &mut v);
        }

        // Acyclicity ignoring delay inputs.
        let live: Vec<bool> = kinds.iter().map(Option::is_some).collect();
        let cycle = find_cycle(self.capacity(), &live, |i| {
            wiring.parents[i]
                .iter()
                .enumerate()
                .filter(|&(k, _)| !wiring.is_delay_input(NodeId(i), k, &kinds))
                .map(|(_, &(_, p))| p.0)
                .collect()
        });
        if let Some(c) = cycle {
            v.push(Violation::Cycle { nodes: c.into_iter().rev().map(|i| label(NodeId(i))).collect() });
        }
        let comp_live: Vec<bool> = kinds.iter().map(|k| k.is_some_and(NodeKind::is_computational)).collect();
        let loop_ = find_cycle(self.capacity(), &comp_live, |i| wiring.parents[i].iter().map(|&(_, p)| p.0).collect());
        if let Some(c) = loop_ {
            v.push(Violation::ComputationalLoop { nodes: c.into_iter().rev().map(|i| label(NodeId(i))).collect() });
        }

        // One computational path per (latent, variable, lag).
        if v.iter().all(|x| !matches!(x, Violation::ComputationalLoop { .. })) {
            for (id, n) in self.nodes() {
                if !n.is_updatable() {
                    continue;
                }
                for ((to, lag), count) in computational_paths(&wiring, &kinds, id) {
                    if count > 1 {
                        v.push(Violation::MultiplePaths { from: n.label.clone(), to: label(to), lag, count });
                    }
                }
            }
        }
        ValidationReport { violations: v }
    }

    fn check_parents(&self, id: NodeId, wiring: &Wiring, v: &mut Vec<Violation>) {
        let Ok(n) = self.node(id) else { return };
        let name = n.label.clone();
        let parents = &wiring.parents[id.0];
        let count = |pred: &dyn Fn(ParentRole) -> bool| parents.iter().filter(|(r, _)| pred(*r)).count();
        let need_one = |role: ParentRole, v: &mut Vec<Violation>| match count(&|r| r == role) {
            0 => v.push(Violation::MissingParent { node: name.clone(), role: role.to_string() }),
            1 => {}
            _ => v.push(Violation::DuplicateRole { node: name.clone(), role: role.to_string() }),
        };
        match n.kind {
            NodeKind::Gaussian => {
                need_one(ParentRole::Mean, v);
                need_one(ParentRole::Variance, v);
            }
            NodeKind::RectifiedGaussian => need_one(ParentRole::Variance, v),
            NodeKind::Sum => {
                if count(&|r| r == ParentRole::Summand) == 0 {
                    v.push(Violation::MissingParent { node: name.clone(), role: "Summand".into() });
                }
            }
            NodeKind::Product => {
                let f = count(&|r| r == ParentRole::Factor);
                if f != 2 {
                    v.push(Violation::ProductArity { node: name.clone(), factors: f });
                }
            }
            NodeKind::NonlinExpSquare | NodeKind::NonlinCut => need_one(ParentRole::NonlinInput, v),
            NodeKind::Delay => {
                need_one(ParentRole::DelayInput, v);
                need_one(ParentRole::DelayInit, v);
                if n.arity != Arity::Vector {
                    v.push(Violation::ComponentMismatch { node: name.clone(), detail: "delay must be a vector node".into() });
                }
            }
            NodeKind::Evidence => need_one(ParentRole::Mean, v),
            NodeKind::MixtureOfGaussians => self.check_mixture(id, parents, v),
            NodeKind::Dirichlet => {
                let c = count(&|r| r == ParentRole::Concentration);
                if let NodeState::Dirichlet(d) = &n.state {
                    if c > 0 && !d.prior.is_empty() && c != d.prior.len() {
                        v.push(Violation::ComponentMismatch {
                            node: name.clone(),
                            detail: format!("{c} concentration parents for {} components", d.prior.len()),
                        });
                    }
                }
            }
            NodeKind::Constant | NodeKind::Proxy => {}
        }

        let len = n.len(self.sample_count());
        match &n.state {
            NodeState::Gaussian(g) if g.len() != len => {
                v.push(Violation::DataLength { node: name.clone(), expected: len, got: g.len() })
            }
            NodeState::Evidence(e) if e.target.len() != 1 && e.target.len() != len => {
                v.push(Violation::DataLength { node: name.clone(), expected: len, got: e.target.len() })
            }
            _ => {}
        }

        for &(role, p) in parents {
            let Ok(pn) = self.node(p) else {
                v.push(Violation::MissingParent { node: name.clone(), role: role.to_string() });
                continue;
            };
            if n.arity == Arity::Scalar && pn.arity == Arity::Vector {
                v.push(Violation::ArityMismatch { child: name.clone(), parent: pn.label.clone() });
            }
            if pn.kind == NodeKind::Proxy {
                continue; // reported as unresolved
            }
            if !rules::role_allowed(n.kind, pn.kind, role) {
                v.push(Violation::IllegalRole {
                    child: name.clone(),
                    parent: pn.label.clone(),
                    role: role.to_string(),
                    detail: format!("{:?} is not an allowed parent kind here", pn.kind),
                });
                continue;
            }
            if role.is_variance() {
                if let Some(bad) = self.variance_blocker(p, wiring, 0) {
                    v.push(Violation::IllegalRole {
                        child: name.clone(),
                        parent: pn.label.clone(),
                        role: role.to_string(),
                        detail: format!(
                            "variance parents must be Gaussian or sums of Gaussians; `{}` ({:?}) lies upstream",
                            self.label(bad),
                            self.node(bad).map(|b| b.kind).unwrap_or(NodeKind::Proxy)
                        ),
                    });
                }
            }
        }
    }

    /// First node that prevents `id` from providing an expected exponential.
    fn variance_blocker(&self, id: NodeId, wiring: &Wiring, depth: usize) -> Option<NodeId> {
        let Ok(n) = self.node(id) else { return Some(id) };
        if depth > self.capacity() {
            return None; // cycles are reported separately
        }
        match n.kind {
            NodeKind::Gaussian | NodeKind::Constant => None,
            NodeKind::Sum | NodeKind::Delay => wiring.parents[id.0]
                .iter()
                .find_map(|&(_, p)| self.variance_blocker(p, wiring, depth + 1)),
            _ => Some(id),
        }
    }

    fn check_mixture(&self, id: NodeId, parents: &[(ParentRole, NodeId)], v: &mut Vec<Violation>) {
        let name = self.label(id);
        let mut means = BTreeMap::new();
        let mut vars = BTreeMap::new();
        let mut selectors = Vec::new();
        for &(role, p) in parents {
            match role {
                ParentRole::ComponentMean(i) => *means.entry(i).or_insert(0) += 1,
                ParentRole::ComponentVariance(i) => *vars.entry(i).or_insert(0) += 1,
                ParentRole::Selector => selectors.push(p),
                _ => {}
            }
        }
        let k = means.len();
        let contiguous = |m: &BTreeMap<usize, i32>| m.keys().copied().eq(0..m.len()) && m.values().all(|&c| c == 1);
        if k == 0 {
            v.push(Violation::MissingParent { node: name.clone(), role: "ComponentMean(0)".into() });
        }
        if !contiguous(&means) || !contiguous(&vars) || means.len() != vars.len() {
            v.push(Violation::ComponentMismatch {
                node: name.clone(),
                detail: "component mean/variance parents must pair up as indices 0..K".into(),
            });
        }
        match selectors.as_slice() {
            [] => v.push(Violation::MissingParent { node: name, role: "Selector".into() }),
            [sel] => {
                if let Ok(NodeState::Dirichlet(d)) = self.node(*sel).map(|n| &n.state) {
                    if !d.prior.is_empty() && d.prior.len() != k {
                        v.push(Violation::ComponentMismatch {
                            node: name,
                            detail: format!("{k} components but Dirichlet has {}", d.prior.len()),
                        });
                    }
                }
            }
            _ => v.push(Violation::DuplicateRole { node: name, role: "Selector".into() }),
        }
    }

    /// Updatable variable nodes ordered so that every node comes after all
    /// of its variable descendants (delay inputs ignored). Ties are broken
    /// by creation order.
    pub fn update_order(&self) -> Vec<NodeId> {
        let kinds = kinds_of(self);
        let wiring = self.wiring();
        let n = self.capacity();
        let mut remaining = vec![0usize; n];
        for (id, _) in self.nodes() {
            remaining[id.0] = wiring.children[id.0]
                .iter()
                .filter(|&&(c, k)| !wiring.is_delay_input(c, k, &kinds))
                .count();
        }
        let mut ready: BTreeSet<usize> = self.nodes().filter(|(id, _)| remaining[id.0] == 0).map(|(id, _)| id.0).collect();
        let mut order = Vec::new();
        while let Some(i) = ready.pop_first() {
            order.push(NodeId(i));
            for (k, &(_, p)) in wiring.parents[i].iter().enumerate() {
                if wiring.is_delay_input(NodeId(i), k, &kinds) || p.0 >= n || kinds[p.0].is_none() {
                    continue;
                }
                remaining[p.0] -= 1;
                if remaining[p.0] == 0 {
                    ready.insert(p.0);
                }
            }
        }
        order.into_iter().filter(|&id| self.node(id).is_ok_and(|n| n.is_updatable())).collect()
    }
}
