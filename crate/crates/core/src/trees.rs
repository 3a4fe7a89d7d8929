//! Labelled rooted plane trees behind the series expansion.
//!
//! A coefficient of order k is a sum over trees with k nodes: end nodes carry
//! forcing modes, internal nodes carry a branch factor `-eps^d a_p`, and every
//! line carries a propagator `1/D(eps, omega . nu)` (or `1/a` when its
//! momentum vanishes). Children are ordered — two trees differing by a sibling
//! swap count separately, which is what makes the sum match the recursion's
//! multinomial weights with no extra symmetry factors.
//!
//! Besides enumeration and evaluation, this module classifies nodes and lines
//! by how a small divisor on a line can be offset by the mode decay of the end
//! nodes feeding it, and exposes the two counting inequalities the series
//! bounds rest on.

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use num_complex::Complex64;

use crate::divisors::d_symbol;
use crate::error::{Error, Result};
use crate::problem::{ForcingSpectrum, FrequencyVector, Mode, ProblemSpec};

/// Cap on the number of subtree records a single enumeration may allocate.
pub const DEFAULT_TREE_BUDGET: u128 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// Leaf carrying a forcing mode.
    End { mode: Mode },
    /// Branch point; `eps_degree` is 1 exactly when the exiting line has
    /// nonzero momentum, and governs the eps power in the node factor.
    Internal { eps_degree: u8 },
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub parent: Option<usize>,
    /// Ordered children (sibling order is part of the tree's identity).
    pub children: Vec<usize>,
    pub kind: NodeKind,
    /// Momentum of the line exiting this node: the sum of all end-node modes
    /// in the subtree rooted here.
    pub momentum: Mode,
}

/// A rooted plane tree with mode, degree, and momentum labels. Node ids are
/// indices into a flat arena; the root is node 0 and its exiting line is the
/// root line.
#[derive(Clone, Debug)]
pub struct LabelledTree {
    nodes: Vec<TreeNode>,
}

impl LabelledTree {
    /// Assemble a tree from explicit node records, checking only structure:
    /// node 0 is the root, parent/children references agree, and every node
    /// is reachable from the root exactly once. Label constraints are checked
    /// separately by [`LabelledTree::check_constraints`].
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidTree("a tree needs at least one node".into()));
        }
        if nodes[0].parent.is_some() {
            return Err(Error::InvalidTree("node 0 must be the root".into()));
        }
        let child_refs: usize = nodes.iter().map(|n| n.children.len()).sum();
        if child_refs != nodes.len() - 1 {
            return Err(Error::InvalidTree(format!(
                "{} child references for {} non-root nodes",
                child_refs,
                nodes.len() - 1
            )));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(id) = stack.pop() {
            for &child in &nodes[id].children {
                if child >= nodes.len() || seen[child] {
                    return Err(Error::InvalidTree(format!(
                        "child {child} of node {id} is out of range or repeated"
                    )));
                }
                if nodes[child].parent != Some(id) {
                    return Err(Error::InvalidTree(format!(
                        "node {child} does not point back to its parent {id}"
                    )));
                }
                seen[child] = true;
                stack.push(child);
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidTree("some nodes are unreachable from the root".into()));
        }
        let dim = nodes[0].momentum.dim();
        if nodes.iter().any(|n| n.momentum.dim() != dim) {
            return Err(Error::InvalidTree("momentum dimensions disagree".into()));
        }
        Ok(LabelledTree { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].momentum.dim()
    }

    /// Order: the number of nodes.
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn end_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::End { .. })).count()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.len() - self.end_count()
    }

    /// Degree: end nodes plus internal nodes whose node factor carries an
    /// eps (this is the power of eps in the tree's value, numerator side).
    pub fn degree(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| match &n.kind {
                NodeKind::End { .. } => true,
                NodeKind::Internal { eps_degree } => *eps_degree == 1,
            })
            .count()
    }

    /// Momentum of the root line.
    pub fn root_momentum(&self) -> &Mode {
        &self.nodes[0].momentum
    }

    /// The label constraints that make a structurally sound tree a valid
    /// expansion term: branch factors at least 2 and drawn from `branchings`,
    /// end modes in the forcing support, momenta equal to the sum of end
    /// modes below, and the eps degree matching momentum (non)vanishing.
    pub fn check_constraints(
        &self,
        forcing: &ForcingSpectrum,
        branchings: &[usize],
    ) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            match &node.kind {
                NodeKind::End { mode } => {
                    if !node.children.is_empty() {
                        return Err(Error::InvalidTree(format!("end node {id} has children")));
                    }
                    if !forcing.modes().contains_key(mode) {
                        return Err(Error::InvalidTree(format!(
                            "end node {id} carries mode {mode} outside the forcing support"
                        )));
                    }
                    if node.momentum != *mode {
                        return Err(Error::InvalidTree(format!(
                            "end node {id} momentum differs from its mode"
                        )));
                    }
                }
                NodeKind::Internal { eps_degree } => {
                    let p = node.children.len();
                    if p < 2 {
                        return Err(Error::InvalidTree(format!(
                            "internal node {id} has {p} children; at least 2 required"
                        )));
                    }
                    if !branchings.contains(&p) {
                        return Err(Error::InvalidTree(format!(
                            "internal node {id} branches {p} ways, which the nonlinearity does not allow"
                        )));
                    }
                    let mut sum = Mode::zero(self.dim());
                    for &child in &node.children {
                        sum = sum.add(&self.nodes[child].momentum);
                    }
                    if node.momentum != sum {
                        return Err(Error::InvalidTree(format!(
                            "internal node {id} momentum is not the sum of its children's"
                        )));
                    }
                    let expect = u8::from(!node.momentum.is_zero());
                    if *eps_degree != expect {
                        return Err(Error::InvalidTree(format!(
                            "internal node {id} has eps degree {eps_degree}, expected {expect}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical depth-first encoding: end nodes as `(modes)`, internal nodes
    /// as `[d<degree> child child ...]`. Byte-lexicographic order on these
    /// strings is the canonical enumeration order.
    pub fn encode(&self) -> String {
        let mut out = String::new();
        self.encode_node(0, &mut out);
        out
    }

    fn encode_node(&self, id: usize, out: &mut String) {
        match &self.nodes[id].kind {
            NodeKind::End { mode } => {
                out.push('(');
                out.push_str(&mode.to_string());
                out.push(')');
            }
            NodeKind::Internal { eps_degree } => {
                out.push_str("[d");
                out.push(char::from(b'0' + eps_degree));
                for &child in &self.nodes[id].children {
                    out.push(' ');
                    self.encode_node(child, out);
                }
                out.push(']');
            }
        }
    }

    /// The tree with every end mode negated (all momenta flip sign, degrees
    /// are unchanged). For real eps and Hermitian forcing, values of a tree
    /// and its mirror are complex conjugates.
    pub fn mirrored(&self) -> LabelledTree {
        let nodes = self
            .nodes
            .iter()
            .map(|n| TreeNode {
                parent: n.parent,
                children: n.children.clone(),
                kind: match &n.kind {
                    NodeKind::End { mode } => NodeKind::End { mode: mode.neg() },
                    other => other.clone(),
                },
                momentum: n.momentum.neg(),
            })
            .collect();
        LabelledTree { nodes }
    }
}

impl fmt::Display for LabelledTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// Shared-subtree representation used during enumeration.
enum Build {
    End(Mode),
    Internal(Vec<Rc<Build>>),
}

/// Ordered compositions of `total` into `parts` summands, each at least 1.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(parts);
    fn recurse(remaining: usize, parts_left: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts_left == 1 {
            current.push(remaining);
            out.push(current.clone());
            current.pop();
            return;
        }
        for first in 1..=remaining - (parts_left - 1) {
            current.push(first);
            recurse(remaining - first, parts_left - 1, current, out);
            current.pop();
        }
    }
    if parts >= 1 && total >= parts {
        recurse(total, parts, &mut current, &mut out);
    }
    out
}

fn sorted_branchings(branchings: &[usize]) -> Result<Vec<usize>> {
    if branchings.iter().any(|&p| p < 2) {
        return Err(Error::InvalidSpec("branch factors below 2 are not allowed".into()));
    }
    let mut sorted = branchings.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(sorted)
}

/// All subtrees of each order up to `k_max`, grouped by momentum.
fn build_table(
    dim: usize,
    support: &[Mode],
    branchings: &[usize],
    k_max: usize,
    budget: u128,
) -> Result<Vec<BTreeMap<Mode, Vec<Rc<Build>>>>> {
    let mut table: Vec<BTreeMap<Mode, Vec<Rc<Build>>>> = vec![BTreeMap::new(); k_max + 1];
    let mut created: u128 = 0;
    if k_max == 0 {
        return Ok(table);
    }
    for mode in support {
        created += 1;
        table[1]
            .entry(mode.clone())
            .or_default()
            .push(Rc::new(Build::End(mode.clone())));
    }
    for k in 2..=k_max {
        let mut slice: BTreeMap<Mode, Vec<Rc<Build>>> = BTreeMap::new();
        for &p in branchings {
            if k < p + 1 {
                continue;
            }
            for parts in compositions(k - 1, p) {
                // Ordered tuples of subtrees realizing this composition.
                let mut partial: Vec<(Mode, Vec<Rc<Build>>)> =
                    vec![(Mode::zero(dim), Vec::new())];
                for &child_order in &parts {
                    let sub = &table[child_order];
                    let mut next = Vec::new();
                    for (momentum, chosen) in &partial {
                        for (m, builds) in sub {
                            for build in builds {
                                created += 1;
                                if created > budget {
                                    return Err(Error::BudgetExceeded {
                                        needed: created,
                                        budget,
                                    });
                                }
                                let mut extended = chosen.clone();
                                extended.push(Rc::clone(build));
                                next.push((momentum.add(m), extended));
                            }
                        }
                    }
                    partial = next;
                    if partial.is_empty() {
                        break;
                    }
                }
                for (momentum, children) in partial {
                    slice
                        .entry(momentum)
                        .or_default()
                        .push(Rc::new(Build::Internal(children)));
                }
            }
        }
        table[k] = slice;
    }
    Ok(table)
}

fn flatten(build: &Build, dim: usize) -> LabelledTree {
    fn place(build: &Build, parent: Option<usize>, dim: usize, nodes: &mut Vec<TreeNode>) -> usize {
        let id = nodes.len();
        nodes.push(TreeNode {
            parent,
            children: Vec::new(),
            kind: NodeKind::Internal { eps_degree: 0 },
            momentum: Mode::zero(dim),
        });
        match build {
            Build::End(mode) => {
                nodes[id].kind = NodeKind::End { mode: mode.clone() };
                nodes[id].momentum = mode.clone();
            }
            Build::Internal(children) => {
                let mut momentum = Mode::zero(dim);
                let mut ids = Vec::with_capacity(children.len());
                for child in children {
                    let child_id = place(child, Some(id), dim, nodes);
                    momentum = momentum.add(&nodes[child_id].momentum);
                    ids.push(child_id);
                }
                nodes[id].kind =
                    NodeKind::Internal { eps_degree: u8::from(!momentum.is_zero()) };
                nodes[id].momentum = momentum;
                nodes[id].children = ids;
            }
        }
        id
    }
    let mut nodes = Vec::new();
    place(build, None, dim, &mut nodes);
    LabelledTree { nodes }
}

/// Every tree of order `k` whose root line carries momentum `nu`,
/// in canonical (encoding-lexicographic) order.
pub fn enumerate_trees(
    forcing: &ForcingSpectrum,
    branchings: &[usize],
    k: usize,
    nu: &Mode,
) -> Result<Vec<LabelledTree>> {
    enumerate_trees_budgeted(forcing, branchings, k, nu, DEFAULT_TREE_BUDGET)
}

pub fn enumerate_trees_budgeted(
    forcing: &ForcingSpectrum,
    branchings: &[usize],
    k: usize,
    nu: &Mode,
    budget: u128,
) -> Result<Vec<LabelledTree>> {
    if k < 1 {
        return Err(Error::InvalidSpec("tree order must be at least 1".into()));
    }
    if nu.dim() != forcing.dim() {
        return Err(Error::InvalidSpec(format!(
            "momentum has dimension {} but the forcing has dimension {}",
            nu.dim(),
            forcing.dim()
        )));
    }
    let branchings = sorted_branchings(branchings)?;
    let support: Vec<Mode> = forcing.modes().keys().cloned().collect();
    let table = build_table(forcing.dim(), &support, &branchings, k, budget)?;
    let mut trees: Vec<LabelledTree> = table[k]
        .get(nu)
        .map(|builds| builds.iter().map(|b| flatten(b, forcing.dim())).collect())
        .unwrap_or_default();
    trees.sort_by_cached_key(LabelledTree::encode);
    Ok(trees)
}

/// Whole order slices 1..=k_max at once (index 0 is empty), each momentum
/// group in canonical order. Enumerating a full sweep this way costs one
/// table build instead of one per momentum.
pub fn enumerate_orders(
    forcing: &ForcingSpectrum,
    branchings: &[usize],
    k_max: usize,
) -> Result<Vec<BTreeMap<Mode, Vec<LabelledTree>>>> {
    if k_max < 1 {
        return Err(Error::InvalidSpec("tree order must be at least 1".into()));
    }
    let branchings = sorted_branchings(branchings)?;
    let support: Vec<Mode> = forcing.modes().keys().cloned().collect();
    let table = build_table(forcing.dim(), &support, &branchings, k_max, DEFAULT_TREE_BUDGET)?;
    let mut orders = Vec::with_capacity(k_max + 1);
    for slice in &table {
        let mut grouped: BTreeMap<Mode, Vec<LabelledTree>> = BTreeMap::new();
        for (momentum, builds) in slice {
            let mut trees: Vec<LabelledTree> =
                builds.iter().map(|b| flatten(b, forcing.dim())).collect();
            trees.sort_by_cached_key(LabelledTree::encode);
            grouped.insert(momentum.clone(), trees);
        }
        orders.push(grouped);
    }
    Ok(orders)
}

/// Number of trees of order `k` with root momentum `nu`, by dynamic
/// programming over (order, momentum) — no trees are materialized.
pub fn count_trees(
    forcing: &ForcingSpectrum,
    branchings: &[usize],
    k: usize,
    nu: &Mode,
) -> Result<u128> {
    if k < 1 {
        return Err(Error::InvalidSpec("tree order must be at least 1".into()));
    }
    let branchings = sorted_branchings(branchings)?;
    let dim = forcing.dim();
    let mut counts: Vec<BTreeMap<Mode, u128>> = vec![BTreeMap::new(); k + 1];
    for mode in forcing.modes().keys() {
        *counts[1].entry(mode.clone()).or_insert(0) += 1;
    }
    for order in 2..=k {
        let mut slice: BTreeMap<Mode, u128> = BTreeMap::new();
        for &p in &branchings {
            if order < p + 1 {
                continue;
            }
            for parts in compositions(order - 1, p) {
                let mut partial: BTreeMap<Mode, u128> = BTreeMap::new();
                partial.insert(Mode::zero(dim), 1);
                for &child_order in &parts {
                    let mut next: BTreeMap<Mode, u128> = BTreeMap::new();
                    for (momentum, count) in &partial {
                        for (m, c) in &counts[child_order] {
                            *next.entry(momentum.add(m)).or_insert(0) +=
                                count.saturating_mul(*c);
                        }
                    }
                    partial = next;
                    if partial.is_empty() {
                        break;
                    }
                }
                for (momentum, count) in partial {
                    let entry = slice.entry(momentum).or_insert(0);
                    *entry = entry.saturating_add(count);
                }
            }
        }
        counts[order] = slice;
    }
    Ok(counts[k].get(nu).copied().unwrap_or(0))
}

/// Per-internal-node child statistics: how the branches split between end
/// nodes and internal nodes, and the summed modes of the end children.
#[derive(Clone, Debug)]
pub struct NodeShape {
    pub branch: usize,
    pub end_children: usize,
    pub internal_children: usize,
    /// Sum of the modes on the end children.
    pub end_mode_sum: Mode,
    /// l1 norm of that sum.
    pub end_mode_l1: i64,
}

/// Node and line classification of a tree.
///
/// "Fans" are internal nodes all of whose children are end nodes; "pairs"
/// have exactly one end child and one internal child. The active ones are
/// those whose incident line momenta are nonzero, so their propagators carry
/// actual divisors. An active node protects an incident line when the
/// divisor on that line is bounded below by the decay budget of the node's
/// end children (`e^{-xi mu / 16}` against `c0 |omega . nu|`, with a factor 2
/// for pairs); every eps-carrying line not protected this way is counted in
/// `unprotected_lines`.
#[derive(Clone, Debug, Default)]
pub struct TreeClassification {
    pub shapes: BTreeMap<usize, NodeShape>,
    /// Internal nodes with zero / unit eps degree.
    pub zero_eps_nodes: Vec<usize>,
    pub unit_eps_nodes: Vec<usize>,
    pub end_fans: Vec<usize>,
    pub end_internal_pairs: Vec<usize>,
    pub active_fans: Vec<usize>,
    pub active_pairs: Vec<usize>,
    /// Active node -> the lines it protects (lines named by exiting node).
    pub protected_by: BTreeMap<usize, Vec<usize>>,
    /// Lines exiting unit-eps-degree internal nodes.
    pub eps_lines: Vec<usize>,
    pub protected_lines: Vec<usize>,
    pub unprotected_lines: Vec<usize>,
    /// Active fans whose protection inequality c0|omega.nu| >= e^{-xi mu/16}
    /// fails — the sign of a divisor constant estimated on too small a ball.
    pub fan_violations: Vec<usize>,
}

/// Classify nodes and lines of `tree` given the divisor constant `c0`.
///
/// Errors with `ClassificationContradiction` if an active pair protects
/// neither incident line, which a correctly sized divisor constant rules out.
pub fn classify(
    tree: &LabelledTree,
    omega: &FrequencyVector,
    xi: f64,
    c0: f64,
) -> Result<TreeClassification> {
    if omega.dim() != tree.dim() {
        return Err(Error::InvalidSpec(format!(
            "omega has dimension {} but the tree has dimension {}",
            omega.dim(),
            tree.dim()
        )));
    }
    if xi.is_nan() || xi <= 0.0 || c0.is_nan() || c0 <= 0.0 {
        return Err(Error::InvalidSpec(format!(
            "classification needs xi > 0 and c0 > 0, got xi = {xi}, c0 = {c0}"
        )));
    }
    let mut cls = TreeClassification::default();
    for (id, node) in tree.nodes().iter().enumerate() {
        let NodeKind::Internal { eps_degree } = &node.kind else { continue };
        if *eps_degree == 0 {
            cls.zero_eps_nodes.push(id);
        } else {
            cls.unit_eps_nodes.push(id);
            cls.eps_lines.push(id);
        }

        let mut end_mode_sum = Mode::zero(tree.dim());
        let mut end_children = 0usize;
        let mut internal_child = None;
        for &child in &node.children {
            match &tree.nodes()[child].kind {
                NodeKind::End { mode } => {
                    end_children += 1;
                    end_mode_sum = end_mode_sum.add(mode);
                }
                NodeKind::Internal { .. } => internal_child = Some(child),
            }
        }
        let branch = node.children.len();
        let internal_children = branch - end_children;
        let mu = end_mode_sum.l1();
        cls.shapes.insert(
            id,
            NodeShape { branch, end_children, internal_children, end_mode_sum, end_mode_l1: mu },
        );

        let threshold = (-xi * mu as f64 / 16.0).exp();
        if internal_children == 0 {
            cls.end_fans.push(id);
            if !node.momentum.is_zero() {
                cls.active_fans.push(id);
                cls.protected_by.insert(id, vec![id]);
                if c0 * omega.dot(&node.momentum).abs() < threshold {
                    cls.fan_violations.push(id);
                }
            }
        } else if end_children == 1 && internal_children == 1 {
            cls.end_internal_pairs.push(id);
            let inner = internal_child.expect("pair node has an internal child");
            let inner_momentum = &tree.nodes()[inner].momentum;
            if !node.momentum.is_zero() && !inner_momentum.is_zero() {
                cls.active_pairs.push(id);
                let mut protected = Vec::new();
                for (line, momentum) in [(id, &node.momentum), (inner, inner_momentum)] {
                    if 2.0 * c0 * omega.dot(momentum).abs() >= threshold {
                        protected.push(line);
                    }
                }
                if protected.is_empty() {
                    return Err(Error::ClassificationContradiction { node: id });
                }
                cls.protected_by.insert(id, protected);
            }
        }
    }
    let mut protected: Vec<usize> = cls.protected_by.values().flatten().copied().collect();
    protected.sort_unstable();
    protected.dedup();
    cls.unprotected_lines =
        cls.eps_lines.iter().copied().filter(|l| !protected.contains(l)).collect();
    cls.protected_lines = protected;
    Ok(cls)
}

/// End nodes outnumber internal nodes: |E| >= |V| + 1, hence 2|E| >= k + 1.
pub fn end_node_count_bound(tree: &LabelledTree) -> bool {
    let ends = tree.end_count();
    ends > tree.internal_count() && 2 * ends > tree.order()
}

/// Unprotected eps-carrying lines are rare: 4 |L0| <= 3 |E| - 4.
///
/// A bare end node has no internal lines for the inequality to constrain and
/// reports as holding (the counting argument starts from one internal node).
pub fn unprotected_line_bound(tree: &LabelledTree, cls: &TreeClassification) -> bool {
    if tree.internal_count() == 0 {
        return true;
    }
    4 * cls.unprotected_lines.len() <= 3 * tree.end_count() - 4
}

fn propagator(momentum: &Mode, eps: Complex64, spec: &ProblemSpec) -> Result<Complex64> {
    let a = spec.nonlinearity.a1();
    if momentum.is_zero() {
        if a == 0.0 {
            return Err(Error::SingularPropagator { eps, s: 0.0 });
        }
        Ok(Complex64::new(1.0 / a, 0.0))
    } else {
        let s = spec.frequency.dot(momentum);
        let d = d_symbol(eps, s, a);
        if d.norm() == 0.0 {
            return Err(Error::SingularPropagator { eps, s });
        }
        Ok(d.inv())
    }
}

fn eval_node(
    tree: &LabelledTree,
    id: usize,
    eps: Complex64,
    spec: &ProblemSpec,
) -> Result<Complex64> {
    let node = &tree.nodes()[id];
    let bare = match &node.kind {
        NodeKind::End { mode } => eps * spec.forcing.amplitude(mode),
        NodeKind::Internal { eps_degree } => {
            let mut product = Complex64::new(1.0, 0.0);
            for &child in &node.children {
                product *= eval_node(tree, child, eps, spec)?;
            }
            let mut factor = Complex64::new(-spec.nonlinearity.a(node.children.len()), 0.0);
            if *eps_degree == 1 {
                factor *= eps;
            }
            product * factor
        }
    };
    Ok(bare * propagator(&node.momentum, eps, spec)?)
}

/// Product of all node factors and propagators. Factors multiply in a fixed
/// order — children left to right, then the node factor, then the exiting
/// line's propagator — so repeated evaluation is bit-identical.
pub fn value(tree: &LabelledTree, eps: Complex64, spec: &ProblemSpec) -> Result<Complex64> {
    if tree.dim() != spec.dim() {
        return Err(Error::InvalidTree(format!(
            "tree has dimension {} but the problem has dimension {}",
            tree.dim(),
            spec.dim()
        )));
    }
    eval_node(tree, 0, eps, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::NonlinearityTaylor;
    use proptest::prelude::*;

    fn cosine_forcing_1d() -> ForcingSpectrum {
        let half = Complex64::new(0.5, 0.0);
        ForcingSpectrum::new(
            1,
            vec![(Mode::new(vec![1]), half), (Mode::new(vec![-1]), half)],
            0.0,
            1.0,
        )
        .unwrap()
    }

    /// omega = 1, g(x) = x + x^2 recentred at c0 = 0, f = cos t.
    fn quadratic_spec_1d() -> ProblemSpec {
        ProblemSpec::new(
            FrequencyVector::new(vec![1.0]).unwrap(),
            cosine_forcing_1d(),
            NonlinearityTaylor::new(0.0, vec![0.0, 1.0, 1.0]).unwrap(),
        )
        .unwrap()
    }

    fn mode(components: &[i32]) -> Mode {
        Mode::new(components.to_vec())
    }

    #[test]
    fn single_end_node_trees() {
        let forcing = cosine_forcing_1d();
        let trees = enumerate_trees(&forcing, &[2], 1, &mode(&[1])).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].encode(), "(1)");
        assert_eq!(trees[0].order(), 1);
        assert_eq!(trees[0].degree(), 1);
        trees[0].check_constraints(&forcing, &[2]).unwrap();

        assert!(enumerate_trees(&forcing, &[2], 1, &mode(&[2])).unwrap().is_empty());
        assert!(enumerate_trees(&forcing, &[2], 1, &mode(&[0])).unwrap().is_empty());
    }

    #[test]
    fn order_two_is_empty() {
        let forcing = cosine_forcing_1d();
        for nu in [-2i32, -1, 0, 1, 2] {
            assert!(enumerate_trees(&forcing, &[2, 3], 2, &mode(&[nu])).unwrap().is_empty());
            assert_eq!(count_trees(&forcing, &[2, 3], 2, &mode(&[nu])).unwrap(), 0);
        }
    }

    #[test]
    fn order_three_zero_momentum_pair() {
        let forcing = cosine_forcing_1d();
        let trees = enumerate_trees(&forcing, &[2], 3, &mode(&[0])).unwrap();
        let encodings: Vec<String> = trees.iter().map(LabelledTree::encode).collect();
        assert_eq!(encodings, ["[d0 (-1) (1)]", "[d0 (1) (-1)]"]);
        for tree in &trees {
            tree.check_constraints(&forcing, &[2]).unwrap();
            assert_eq!(tree.order(), 3);
            assert_eq!(tree.degree(), 2);
            assert!(tree.root_momentum().is_zero());
            assert_eq!(tree.nodes()[0].kind, NodeKind::Internal { eps_degree: 0 });
        }
    }

    #[test]
    fn order_three_momentum_two_fan() {
        let forcing = cosine_forcing_1d();
        let omega = FrequencyVector::new(vec![1.0]).unwrap();
        let trees = enumerate_trees(&forcing, &[2], 3, &mode(&[2])).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].encode(), "[d1 (1) (1)]");
        assert_eq!(trees[0].degree(), 3);

        let c0 = (-1.0f64 / 16.0).exp();
        let cls = classify(&trees[0], &omega, 1.0, c0).unwrap();
        assert_eq!(cls.end_fans, [0]);
        assert_eq!(cls.active_fans, [0]);
        assert!(cls.end_internal_pairs.is_empty());
        assert_eq!(cls.shapes[&0].end_mode_sum, mode(&[2]));
        assert_eq!(cls.shapes[&0].end_mode_l1, 2);
        assert_eq!(cls.eps_lines, [0]);
        assert_eq!(cls.protected_lines, [0]);
        assert!(cls.unprotected_lines.is_empty());
        assert!(cls.fan_violations.is_empty());
        assert!(end_node_count_bound(&trees[0]));
        assert!(unprotected_line_bound(&trees[0], &cls));
    }

    #[test]
    fn zero_momentum_fan_is_inactive() {
        let forcing = cosine_forcing_1d();
        let omega = FrequencyVector::new(vec![1.0]).unwrap();
        let trees = enumerate_trees(&forcing, &[2], 3, &mode(&[0])).unwrap();
        let cls = classify(&trees[0], &omega, 1.0, 1.0).unwrap();
        assert_eq!(cls.end_fans, [0]);
        assert!(cls.active_fans.is_empty());
        assert!(cls.eps_lines.is_empty());
        assert!(cls.unprotected_lines.is_empty());
        assert!(unprotected_line_bound(&trees[0], &cls));
    }

    /// Root with one end child and one internal fan child: the shape whose
    /// protection needs the factor-2 dichotomy.
    fn pair_tree() -> LabelledTree {
        LabelledTree::from_nodes(vec![
            TreeNode {
                parent: None,
                children: vec![1, 2],
                kind: NodeKind::Internal { eps_degree: 1 },
                momentum: mode(&[3]),
            },
            TreeNode {
                parent: Some(0),
                children: vec![],
                kind: NodeKind::End { mode: mode(&[1]) },
                momentum: mode(&[1]),
            },
            TreeNode {
                parent: Some(0),
                children: vec![3, 4],
                kind: NodeKind::Internal { eps_degree: 1 },
                momentum: mode(&[2]),
            },
            TreeNode {
                parent: Some(2),
                children: vec![],
                kind: NodeKind::End { mode: mode(&[1]) },
                momentum: mode(&[1]),
            },
            TreeNode {
                parent: Some(2),
                children: vec![],
                kind: NodeKind::End { mode: mode(&[1]) },
                momentum: mode(&[1]),
            },
        ])
        .unwrap()
    }

    #[test]
    fn pair_node_classification() {
        let tree = pair_tree();
        tree.check_constraints(&cosine_forcing_1d(), &[2]).unwrap();
        let omega = FrequencyVector::new(vec![1.0]).unwrap();
        let c0 = (-1.0f64 / 16.0).exp();
        let cls = classify(&tree, &omega, 1.0, c0).unwrap();
        assert_eq!(cls.end_internal_pairs, [0]);
        assert_eq!(cls.active_pairs, [0]);
        assert_eq!(cls.shapes[&0].end_mode_l1, 1);
        assert_eq!(cls.protected_by[&0], [0, 2]);
        assert_eq!(cls.eps_lines, [0, 2]);
        assert!(cls.unprotected_lines.is_empty());
        assert!(end_node_count_bound(&tree));
        assert!(unprotected_line_bound(&tree, &cls));
    }

    #[test]
    fn undersized_divisor_constant_is_detected() {
        let omega = FrequencyVector::new(vec![1.0]).unwrap();
        let forcing = cosine_forcing_1d();
        let fan = &enumerate_trees(&forcing, &[2], 3, &mode(&[2])).unwrap()[0];
        let cls = classify(fan, &omega, 1.0, 1e-12).unwrap();
        assert_eq!(cls.fan_violations, [0]);

        let err = classify(&pair_tree(), &omega, 1.0, 1e-12).unwrap_err();
        assert!(matches!(err, Error::ClassificationContradiction { node: 0 }), "{err}");
    }

    #[test]
    fn value_of_single_end_node() {
        let spec = quadratic_spec_1d();
        let eps = Complex64::new(0.05, 0.0);
        let tree = &enumerate_trees(&spec.forcing, &[2], 1, &mode(&[1])).unwrap()[0];
        // eps * f_1 / D(eps, 1) with D = i at a = 1.
        let expected = Complex64::new(0.0, -0.025);
        assert!((value(tree, eps, &spec).unwrap() - expected).norm() <= 1e-18);
    }

    #[test]
    fn value_of_order_three_zero_momentum() {
        let spec = quadratic_spec_1d();
        let eps = Complex64::new(0.05, 0.0);
        let trees = enumerate_trees(&spec.forcing, &[2], 3, &mode(&[0])).unwrap();
        let total: Complex64 =
            trees.iter().map(|t| value(t, eps, &spec).unwrap()).sum();
        // -2 a2 eps^2 f_1 f_{-1} / (a D(eps,1) D(eps,-1))
        let d_plus = d_symbol(eps, 1.0, 1.0);
        let d_minus = d_symbol(eps, -1.0, 1.0);
        let expected = -2.0 * eps * eps * 0.25 / (d_plus * d_minus);
        assert!((total - expected).norm() <= 1e-15 * expected.norm());
    }

    #[test]
    fn mirror_values_conjugate_for_real_eps() {
        let spec = quadratic_spec_1d();
        let eps = Complex64::new(0.07, 0.0);
        for k in [1usize, 3, 4] {
            for nu in 0..=2i32 {
                for tree in enumerate_trees(&spec.forcing, &[2], k, &mode(&[nu])).unwrap() {
                    let direct = value(&tree, eps, &spec).unwrap();
                    let mirrored = value(&tree.mirrored(), eps, &spec).unwrap();
                    let scale = direct.norm().max(1e-300);
                    assert!(
                        (mirrored - direct.conj()).norm() <= 1e-14 * scale,
                        "tree {tree}: {direct} vs {mirrored}"
                    );
                }
            }
        }
    }

    #[test]
    fn singular_propagator_is_reported() {
        // With a = 2 the denominator at momentum 2 reads
        // eps (2 - 4) + 2i = -2 eps + 2i, exactly zero at eps = i: every
        // quantity is a small integer, so the hit is exact in binary
        // floating point rather than a 1 ulp near-miss.
        let spec = ProblemSpec::new(
            FrequencyVector::new(vec![1.0]).unwrap(),
            cosine_forcing_1d(),
            NonlinearityTaylor::new(0.0, vec![0.0, 2.0, 1.0]).unwrap(),
        )
        .unwrap();
        let eps = Complex64::new(0.0, 1.0);
        let fan = &enumerate_trees(&spec.forcing, &[2], 3, &mode(&[2])).unwrap()[0];
        let err = value(fan, eps, &spec).unwrap_err();
        assert!(matches!(err, Error::SingularPropagator { s, .. } if s == 2.0), "{err}");
        // Momentum 1 keeps the denominator away from zero at the same eps.
        let tree = &enumerate_trees(&spec.forcing, &[2], 1, &mode(&[1])).unwrap()[0];
        assert!(value(tree, eps, &spec).is_ok());
    }

    #[test]
    fn budget_stops_enumeration() {
        let forcing = cosine_forcing_1d();
        let err = enumerate_trees_budgeted(
            &forcing,
            &[2, 3, 4, 5, 6, 7, 8],
            8,
            &mode(&[0]),
            100,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { budget: 100, .. }), "{err}");
    }

    #[test]
    fn malformed_trees_are_rejected() {
        let forcing = cosine_forcing_1d();
        // Internal node with a single child.
        let tree = LabelledTree::from_nodes(vec![
            TreeNode {
                parent: None,
                children: vec![1],
                kind: NodeKind::Internal { eps_degree: 1 },
                momentum: mode(&[1]),
            },
            TreeNode {
                parent: Some(0),
                children: vec![],
                kind: NodeKind::End { mode: mode(&[1]) },
                momentum: mode(&[1]),
            },
        ])
        .unwrap();
        assert!(matches!(
            tree.check_constraints(&forcing, &[2]),
            Err(Error::InvalidTree(_))
        ));

        // Momentum not matching the children sum.
        let mut bad = pair_tree();
        let nodes = {
            let mut nodes = bad.nodes().to_vec();
            nodes[0].momentum = mode(&[1]);
            nodes
        };
        bad = LabelledTree::from_nodes(nodes).unwrap();
        assert!(matches!(
            bad.check_constraints(&forcing, &[2]),
            Err(Error::InvalidTree(_))
        ));

        // Degree label contradicting the momentum.
        let nodes = {
            let mut nodes = pair_tree().nodes().to_vec();
            nodes[0].kind = NodeKind::Internal { eps_degree: 0 };
            nodes
        };
        let bad = LabelledTree::from_nodes(nodes).unwrap();
        assert!(matches!(
            bad.check_constraints(&forcing, &[2]),
            Err(Error::InvalidTree(_))
        ));

        // Parent/child mismatch is structural and fails assembly.
        let result = LabelledTree::from_nodes(vec![
            TreeNode {
                parent: None,
                children: vec![1],
                kind: NodeKind::Internal { eps_degree: 0 },
                momentum: mode(&[0]),
            },
            TreeNode {
                parent: None,
                children: vec![],
                kind: NodeKind::End { mode: mode(&[1]) },
                momentum: mode(&[1]),
            },
        ]);
        assert!(matches!(result, Err(Error::InvalidTree(_))));
    }

    /// Independent count: iterated convolution of the generating map of
    /// lower-order counts, avoiding the enumerator's composition recursion.
    fn oracle_counts(
        support: &[Mode],
        branchings: &[usize],
        k_max: usize,
    ) -> Vec<BTreeMap<Mode, u128>> {
        let dim = support[0].dim();
        let mut counts: Vec<BTreeMap<Mode, u128>> = vec![BTreeMap::new(); k_max + 1];
        for m in support {
            *counts[1].entry(m.clone()).or_insert(0) += 1;
        }
        for k in 2..=k_max {
            for &p in branchings {
                // power[j][nu] = ordered p-tuples of lower-order subtrees
                // with orders summing to j and momenta summing to nu.
                let mut power: Vec<BTreeMap<Mode, u128>> = vec![BTreeMap::new(); k];
                power[0].insert(Mode::zero(dim), 1);
                for _ in 0..p {
                    let mut next: Vec<BTreeMap<Mode, u128>> = vec![BTreeMap::new(); k];
                    for (j, slice) in power.iter().enumerate() {
                        for (m, c) in slice {
                            for jj in 1..k - j {
                                for (mm, cc) in &counts[jj] {
                                    *next[j + jj].entry(m.add(mm)).or_insert(0) += c * cc;
                                }
                            }
                        }
                    }
                    power = next;
                }
                for (m, c) in &power[k - 1] {
                    *counts[k].entry(m.clone()).or_insert(0) += c;
                }
            }
        }
        counts
    }

    #[test]
    fn enumeration_matches_count_oracle() {
        let forcing = cosine_forcing_1d();
        let support: Vec<Mode> = forcing.modes().keys().cloned().collect();
        let branchings = [2usize, 3];
        let oracle = oracle_counts(&support, &branchings, 6);
        for (k, counts) in oracle.iter().enumerate().skip(1) {
            for nu in -7..=7i32 {
                let nu = mode(&[nu]);
                let expected = counts.get(&nu).copied().unwrap_or(0);
                let trees = enumerate_trees(&forcing, &branchings, k, &nu).unwrap();
                assert_eq!(trees.len() as u128, expected, "k={k}, nu={nu}");
                assert_eq!(count_trees(&forcing, &branchings, k, &nu).unwrap(), expected);
            }
        }
    }

    #[test]
    fn enumeration_matches_count_oracle_2d() {
        let half = Complex64::new(0.5, 0.0);
        let forcing = ForcingSpectrum::new(
            2,
            vec![
                (mode(&[1, 0]), half),
                (mode(&[-1, 0]), half),
                (mode(&[0, 1]), half),
                (mode(&[0, -1]), half),
            ],
            0.0,
            1.0,
        )
        .unwrap();
        let support: Vec<Mode> = forcing.modes().keys().cloned().collect();
        let oracle = oracle_counts(&support, &[2], 5);
        for k in [3usize, 4, 5] {
            for (nu, &expected) in &oracle[k] {
                assert_eq!(
                    count_trees(&forcing, &[2], k, nu).unwrap(),
                    expected,
                    "k={k}, nu={nu}"
                );
                assert_eq!(
                    enumerate_trees(&forcing, &[2], k, nu).unwrap().len() as u128,
                    expected
                );
            }
        }
    }

    #[test]
    fn census_reaches_thousands_by_order_eight() {
        let forcing = cosine_forcing_1d();
        let branchings = [2usize, 3, 4, 5, 6, 7, 8];
        let mut total: u128 = 0;
        for k in 1..=8usize {
            for nu in -8..=8i32 {
                total += count_trees(&forcing, &branchings, k, &mode(&[nu])).unwrap();
            }
        }
        assert_eq!(total, 2286);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn enumerated_trees_are_valid(
            k in 1usize..=5,
            with_two in proptest::bool::ANY,
            cubic in proptest::bool::ANY,
        ) {
            let mut entries = vec![
                (mode(&[1]), Complex64::new(0.5, 0.0)),
                (mode(&[-1]), Complex64::new(0.5, 0.0)),
            ];
            if with_two {
                entries.push((mode(&[2]), Complex64::new(0.1, 0.2)));
                entries.push((mode(&[-2]), Complex64::new(0.1, -0.2)));
            }
            let forcing = ForcingSpectrum::new(1, entries, 0.0, 1.0).unwrap();
            let branchings: &[usize] = if cubic { &[2, 3] } else { &[2] };
            let radius = 2 * k as i32;
            let mut seen = std::collections::BTreeSet::new();
            for nu in -radius..=radius {
                let nu = mode(&[nu]);
                let trees = enumerate_trees(&forcing, branchings, k, &nu).unwrap();
                prop_assert_eq!(
                    trees.len() as u128,
                    count_trees(&forcing, branchings, k, &nu).unwrap()
                );
                for tree in &trees {
                    prop_assert!(tree.check_constraints(&forcing, branchings).is_ok());
                    prop_assert_eq!(tree.order(), k);
                    prop_assert_eq!(tree.root_momentum(), &nu);
                    prop_assert!(end_node_count_bound(tree));
                    prop_assert!(seen.insert(tree.encode()), "duplicate encoding");
                }
            }
        }
    }
}
