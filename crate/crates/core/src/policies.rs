//! Edge weight policies for the central controller.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::PolicyError;
use crate::tmwm::WeightedTree;
use crate::topology::{Edge, IabGraph};

/// Allocation policy. `Distr` runs the schedulers without any controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Distr,
    Msr,
    Ba,
    Mrba,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Distr, Policy::Msr, Policy::Ba, Policy::Mrba];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Distr => "distr",
            Policy::Msr => "msr",
            Policy::Ba => "ba",
            Policy::Mrba => "mrba",
        }
    }

    pub fn is_centralized(self) -> bool {
        self != Policy::Distr
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown policy `{s}`, expected one of distr, msr, ba, mrba"))
    }
}

/// What the controller knows about one edge.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinkState {
    /// Bits per subframe.
    pub capacity: f64,
    /// Bytes waiting to cross the edge.
    pub queue: f64,
    /// Subframes since the edge was last favored.
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub policy: Policy,
    pub eta: f64,
    pub mu_thr: f64,
    pub mrba_exponent: f64,
    /// Multiplier turning queue units into capacity units in the MRBA sum.
    pub queue_unit_bits: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self { policy: Policy::Mrba, eta: 1.0, mu_thr: 10.0, mrba_exponent: 2.0, queue_unit_bits: 8.0 }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |key, reason: &str| Err(PolicyError::InvalidParam { key, reason: reason.into() });
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad("eta", "must be finite and non-negative");
        }
        if !(self.mu_thr > 0.0) || !self.mu_thr.is_finite() {
            return bad("mu_thr", "must be finite and positive");
        }
        if !(self.mrba_exponent >= 0.0) || !self.mrba_exponent.is_finite() {
            return bad("mrba_exponent", "must be finite and non-negative");
        }
        if !(self.queue_unit_bits > 0.0) || !self.queue_unit_bits.is_finite() {
            return bad("queue_unit_bits", "must be finite and positive");
        }
        Ok(())
    }
}

pub fn weight_msr(s: &LinkState) -> f64 {
    s.capacity
}

pub fn weight_ba(s: &LinkState) -> f64 {
    s.queue
}

pub fn weight_mrba(s: &LinkState, p: &PolicyParams) -> f64 {
    s.capacity + p.eta * s.queue * p.queue_unit_bits * (s.mu / p.mu_thr).powf(p.mrba_exponent)
}

/// Weight of one edge under `p.policy`.
pub fn weight(s: &LinkState, p: &PolicyParams) -> Result<f64, PolicyError> {
    match p.policy {
        Policy::Msr => Ok(weight_msr(s)),
        Policy::Ba => Ok(weight_ba(s)),
        Policy::Mrba => Ok(weight_mrba(s, p)),
        Policy::Distr => Err(PolicyError::NotCentralized("distr")),
    }
}

/// Builds the weighted tree for the matching, aligned with the graph's edges.
pub fn compute_weights(
    g: &IabGraph,
    states: &HashMap<Edge, LinkState>,
    p: &PolicyParams,
) -> Result<WeightedTree, PolicyError> {
    let mut edges = Vec::with_capacity(g.edges().len());
    let mut weights = Vec::with_capacity(g.edges().len());
    for e in g.edges() {
        let state = states
            .get(e)
            .ok_or(PolicyError::MissingLinkState { parent: e.parent, child: e.child })?;
        let (Some(a), Some(b)) = (g.index_of(e.parent), g.index_of(e.child)) else {
            return Err(PolicyError::UnindexedEdge { parent: e.parent, child: e.child });
        };
        edges.push((a, b));
        weights.push(weight(state, p)?);
    }
    Ok(WeightedTree::new(g.nodes().len(), edges, weights)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Node, NodeId, NodeKind, Position};

    fn unit_params() -> PolicyParams {
        PolicyParams { queue_unit_bits: 1.0, ..Default::default() }
    }

    fn worked_state() -> LinkState {
        LinkState { capacity: 100.0, queue: 50.0, mu: 5.0 }
    }

    fn three_edge_tree() -> IabGraph {
        let nodes = (0..4)
            .map(|i| Node {
                id: NodeId(i),
                kind: if i == 0 { NodeKind::Donor } else { NodeKind::IabNode },
                pos: Position::new(i as f64, 0.0),
                depth: Some(i.min(2)),
                home: None,
            })
            .collect();
        let e = |p, c| Edge { parent: NodeId(p), child: NodeId(c) };
        IabGraph::new(nodes, vec![e(0, 1), e(0, 2), e(1, 3)]).unwrap()
    }

    #[test]
    fn msr_is_capacity() {
        assert_eq!(weight_msr(&LinkState { capacity: 1e6, queue: 77.0, mu: 3.0 }), 1e6);
        assert_eq!(weight_msr(&LinkState::default()), 0.0);
    }

    #[test]
    fn ba_is_queue_bytes() {
        assert_eq!(weight_ba(&LinkState { capacity: 9.0, queue: 5000.0, mu: 0.0 }), 5000.0);
        assert_eq!(weight_ba(&LinkState { capacity: 9.0, queue: 0.0, mu: 0.0 }), 0.0);
    }

    #[test]
    fn mrba_worked_value() {
        assert_eq!(weight_mrba(&worked_state(), &unit_params()), 112.5);
    }

    #[test]
    fn mrba_converts_bytes_to_bits_by_default() {
        assert_eq!(weight_mrba(&worked_state(), &PolicyParams::default()), 100.0 + 8.0 * 12.5);
    }

    #[test]
    fn mrba_reductions() {
        let no_eta = PolicyParams { eta: 0.0, ..unit_params() };
        assert_eq!(weight_mrba(&worked_state(), &no_eta), 100.0);
        let fresh = LinkState { mu: 0.0, ..worked_state() };
        assert_eq!(weight_mrba(&fresh, &unit_params()), 100.0);
        let linear = PolicyParams { mrba_exponent: 1.0, ..unit_params() };
        let at_thr = LinkState { mu: 10.0, ..worked_state() };
        assert_eq!(weight_mrba(&at_thr, &linear), 150.0);
    }

    #[test]
    fn compute_weights_dispatches() {
        let g = three_edge_tree();
        let e = |p, c| Edge { parent: NodeId(p), child: NodeId(c) };
        let caps = [1e6, 2e6, 3e6];
        let queues = [0.0, 9000.0, 100.0];
        let mut states: HashMap<Edge, LinkState> = g
            .edges()
            .iter()
            .zip(caps.iter().zip(queues))
            .map(|(&edge, (&capacity, queue))| (edge, LinkState { capacity, queue, mu: 0.0 }))
            .collect();

        let msr = compute_weights(&g, &states, &PolicyParams { policy: Policy::Msr, ..unit_params() }).unwrap();
        assert_eq!(msr.weights(), &caps);
        let ba = compute_weights(&g, &states, &PolicyParams { policy: Policy::Ba, ..unit_params() }).unwrap();
        assert_eq!(ba.weights(), &queues);

        states.insert(e(0, 1), worked_state());
        let mrba = compute_weights(&g, &states, &unit_params()).unwrap();
        assert_eq!(mrba.weights()[0], 112.5);

        states.remove(&e(1, 3));
        assert_eq!(
            compute_weights(&g, &states, &unit_params()).unwrap_err(),
            PolicyError::MissingLinkState { parent: NodeId(1), child: NodeId(3) }
        );
    }

    #[test]
    fn distr_has_no_weights() {
        let p = PolicyParams { policy: Policy::Distr, ..Default::default() };
        assert!(weight(&worked_state(), &p).is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!("pf".parse::<Policy>().is_err());
    }

    #[test]
    fn params_validation_names_key() {
        let p = PolicyParams { mu_thr: 0.0, ..Default::default() };
        assert!(matches!(p.validate(), Err(PolicyError::InvalidParam { key: "mu_thr", .. })));
    }
}
