//! Maximum weighted matching on spanning trees.
//!
//! [`t_mwm`] runs in two linear passes over a parent-ordered edge list: a
//! bottom-up pass that fills the per-node utility tables and a top-down pass
//! that activates edges. [`brute_force_mwm`] enumerates every edge subset and
//! is kept as an independent oracle for small trees.

use crate::error::MatchingError;

/// Upper bound on the edge count accepted by [`brute_force_mwm`].
pub const BRUTE_FORCE_LIMIT: usize = 25;

/// A weighted spanning tree over dense node indices `0..nodes`.
///
/// Edges are `(parent, child)` pairs. Every edge leaving a node comes after
/// the edge that reaches it, so the root's edges come first and a reverse
/// sweep visits children before parents.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTree {
    nodes: usize,
    root: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
}

impl WeightedTree {
    pub fn new(
        nodes: usize,
        edges: Vec<(usize, usize)>,
        weights: Vec<f64>,
    ) -> Result<Self, MatchingError> {
        if nodes == 0 {
            return Err(MatchingError::Empty);
        }
        if edges.len() + 1 != nodes {
            return Err(MatchingError::EdgeCount { nodes, edges: edges.len() });
        }
        if weights.len() != edges.len() {
            return Err(MatchingError::WeightCount { edges: edges.len(), weights: weights.len() });
        }
        for (index, &weight) in weights.iter().enumerate() {
            if !weight.is_finite() || weight < 0.0 {
                return Err(MatchingError::BadWeight { index, weight });
            }
        }

        let mut incoming = vec![None; nodes];
        for (index, &(parent, child)) in edges.iter().enumerate() {
            for node in [parent, child] {
                if node >= nodes {
                    return Err(MatchingError::NodeOutOfRange { index, node, nodes });
                }
            }
            if parent == child {
                return Err(MatchingError::SelfLoop { index });
            }
            if incoming[child].replace(index).is_some() {
                return Err(MatchingError::MultipleParents { node: child });
            }
        }
        // n-1 edges and one parent per child leave exactly one root.
        let root = incoming.iter().position(Option::is_none).ok_or(MatchingError::Empty)?;
        for (index, &(parent, _)) in edges.iter().enumerate() {
            match incoming[parent] {
                Some(feeding) if feeding >= index => {
                    return Err(MatchingError::Misordered { index, node: parent })
                }
                None if parent != root => {
                    return Err(MatchingError::Misordered { index, node: parent })
                }
                _ => {}
            }
        }

        Ok(Self { nodes, root, edges, weights })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same topology with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, MatchingError> {
        let weights = self.weights.iter().map(|w| w * factor).collect();
        Self::new(self.nodes, self.edges.clone(), weights)
    }
}

/// A feasible set of active edges (indices into the tree's edge list).
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub edges: Vec<usize>,
    pub utility: f64,
}

/// Per-node dynamic-programming tables from the bottom-up pass.
///
/// `with_edge[n]` is the best utility of the subtree rooted at `n` when `n`
/// may still be matched to one of its children, `without_edge[n]` the best
/// utility when no edge leaving `n` is active, and `best_edge[n]` the child
/// edge that realizes the gain (if any edge improves on `without_edge`).
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTables {
    pub with_edge: Vec<f64>,
    pub without_edge: Vec<f64>,
    pub best_edge: Vec<Option<usize>>,
}

/// Computes a maximum weighted matching of `tree`.
pub fn t_mwm(tree: &WeightedTree) -> Matching {
    t_mwm_with_tables(tree).0
}

/// Like [`t_mwm`] but also returns the utility tables.
pub fn t_mwm_with_tables(tree: &WeightedTree) -> (Matching, UtilityTables) {
    let tables = fill_tables(tree);
    let edges = activate(tree, &tables);
    let utility = sum_weights(tree, &edges);
    (Matching { edges, utility }, tables)
}

fn fill_tables(tree: &WeightedTree) -> UtilityTables {
    let n = tree.nodes;
    let mut with_edge = vec![0.0; n];
    let mut without_edge = vec![0.0; n];
    let mut gain = vec![0.0; n];
    let mut best_edge: Vec<Option<usize>> = vec![None; n];

    for (index, &(parent, child)) in tree.edges.iter().enumerate().rev() {
        // Every edge leaving `child` has a larger index, so its row is final.
        let child_with = without_edge[child] + gain[child];
        with_edge[child] = child_with;
        without_edge[parent] += child_with;

        let marginal = tree.weights[index] + without_edge[child] - child_with;
        // `>=` while sweeping backwards keeps the lowest index among ties.
        if marginal > 0.0 && (best_edge[parent].is_none() || marginal >= gain[parent]) {
            gain[parent] = marginal;
            best_edge[parent] = Some(index);
        }
    }
    let root = tree.root;
    with_edge[root] = without_edge[root] + gain[root];

    UtilityTables { with_edge, without_edge, best_edge }
}

fn activate(tree: &WeightedTree, tables: &UtilityTables) -> Vec<usize> {
    let mut taken = vec![false; tree.nodes];
    let mut active = Vec::new();
    let top_down = std::iter::once(tree.root).chain(tree.edges.iter().map(|&(_, child)| child));
    for node in top_down {
        if taken[node] {
            continue;
        }
        if let Some(edge) = tables.best_edge[node] {
            if tables.with_edge[node] >= tables.without_edge[node] {
                active.push(edge);
                taken[tree.edges[edge].1] = true;
            }
        }
    }
    active.sort_unstable();
    active
}

fn sum_weights(tree: &WeightedTree, edges: &[usize]) -> f64 {
    edges.iter().map(|&e| tree.weights[e]).sum()
}

/// True iff the edges in `set` are pairwise vertex-disjoint.
pub fn is_feasible(tree: &WeightedTree, set: &[usize]) -> Result<bool, MatchingError> {
    let mut used = vec![false; tree.nodes];
    let mut feasible = true;
    for &edge in set {
        let &(parent, child) = tree.edges.get(edge).ok_or(MatchingError::UnknownEdge(edge))?;
        for node in [parent, child] {
            if std::mem::replace(&mut used[node], true) {
                feasible = false;
            }
        }
    }
    Ok(feasible)
}

/// Total weight of a feasible edge set.
pub fn utility(tree: &WeightedTree, set: &[usize]) -> Result<f64, MatchingError> {
    if !is_feasible(tree, set)? {
        return Err(MatchingError::Infeasible);
    }
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    Ok(sum_weights(tree, &sorted))
}

/// Exhaustive maximum weighted matching over all `2^|E|` edge subsets.
///
/// Among optimal subsets the lexicographically smallest index list wins.
pub fn brute_force_mwm(tree: &WeightedTree) -> Result<Matching, MatchingError> {
    let m = tree.edges.len();
    if m > BRUTE_FORCE_LIMIT {
        return Err(MatchingError::TooLarge { edges: m, limit: BRUTE_FORCE_LIMIT });
    }
    let endpoint_mask: Vec<u64> =
        tree.edges.iter().map(|&(p, c)| (1u64 << p) | (1u64 << c)).collect();

    let mut best = Matching { edges: Vec::new(), utility: 0.0 };
    for mask in 1u64..(1u64 << m) {
        let mut used = 0u64;
        let mut feasible = true;
        let mut edges = Vec::new();
        for (edge, &ends) in endpoint_mask.iter().enumerate() {
            if mask & (1 << edge) != 0 {
                if used & ends != 0 {
                    feasible = false;
                    break;
                }
                used |= ends;
                edges.push(edge);
            }
        }
        if !feasible {
            continue;
        }
        let total = sum_weights(tree, &edges);
        if total > best.utility || (total == best.utility && edges < best.edges) {
            best = Matching { edges, utility: total };
        }
    }
    Ok(best)
}
