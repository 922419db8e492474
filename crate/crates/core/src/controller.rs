//! Central controller at the donor: feedback ingestion, topology tracking,
//! staleness bookkeeping and favored-child indications.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::Write;

use crate::error::{ControllerError, TopologyError};
use crate::phy::{cqi_to_capacity, ChannelParams, Cqi, MAX_CQI};
use crate::policies::{compute_weights, LinkState, PolicyParams};
use crate::tmwm::t_mwm;
use crate::topology::{Edge, IabGraph, Node, NodeId, NodeKind, DONOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChildReport {
    pub child: NodeId,
    pub cqi: Cqi,
    pub bsr_bytes: u64,
}

/// What one gNB sends to the controller each collection round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackReport {
    pub reporter: NodeId,
    pub subframe: u64,
    pub children: Vec<ChildReport>,
}

/// Mean CQI rounded to the nearest index, halves rounding up.
pub fn aggregate_cqi(cqis: &[Cqi]) -> Cqi {
    if cqis.is_empty() {
        return 0;
    }
    let sum: u64 = cqis.iter().map(|&c| c as u64).sum();
    let n = cqis.len() as u64;
    ((2 * sum + n) / (2 * n)).min(MAX_CQI as u64) as Cqi
}

impl FeedbackReport {
    /// Report with one entry per IAB-child plus a single entry for all UEs,
    /// whose CQIs are averaged and whose BSRs are summed.
    pub fn aggregate(reporter: NodeId, subframe: u64, iab_children: Vec<ChildReport>, ues: &[ChildReport]) -> Self {
        let mut children = iab_children;
        if !ues.is_empty() {
            let cqis: Vec<Cqi> = ues.iter().map(|u| u.cqi).collect();
            children.push(ChildReport {
                child: NodeId::cluster_of(reporter),
                cqi: aggregate_cqi(&cqis),
                bsr_bytes: ues.iter().map(|u| u.bsr_bytes).sum(),
            });
        }
        Self { reporter, subframe, children }
    }
}

/// Favored child per parent for the next allocation period.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SchedulingIndication {
    pub favored: BTreeMap<NodeId, NodeId>,
    pub valid_from: u64,
    pub period: u64,
}

/// One controller trace row per edge per cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub subframe: u64,
    pub edge: Edge,
    pub weight: f64,
    pub favored: bool,
    pub mu: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subframe", "edge", "weight", "favored", "mu"])?;
    for r in rows {
        w.write_record([
            r.subframe.to_string(),
            format!("{}->{}", r.edge.parent, r.edge.child),
            format!("{:.3}", r.weight),
            u8::from(r.favored).to_string(),
            format!("{}", r.mu),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    graph: IabGraph,
    mu: HashMap<Edge, f64>,
    held: HashMap<Edge, LinkState>,
    params: PolicyParams,
    channel: ChannelParams,
    t_alloc: u64,
}

impl ControllerState {
    /// `graph` must be the reduced topology.
    pub fn new(
        graph: IabGraph,
        params: PolicyParams,
        channel: ChannelParams,
        t_alloc: u64,
    ) -> Result<Self, ControllerError> {
        graph.validate_tree()?;
        params.validate()?;
        let mu = graph.edges().iter().map(|&e| (e, 0.0)).collect();
        Ok(Self { graph, mu, held: HashMap::new(), params, channel, t_alloc })
    }

    pub fn graph(&self) -> &IabGraph {
        &self.graph
    }

    pub fn mu(&self, e: &Edge) -> Option<f64> {
        self.mu.get(e).copied()
    }

    pub fn t_alloc(&self) -> u64 {
        self.t_alloc
    }

    /// Per-edge link state from the latest reports. Edges without a fresh
    /// entry keep the last state received for them.
    pub fn ingest_feedback(&mut self, reports: &[FeedbackReport]) -> HashMap<Edge, LinkState> {
        let symbols = self.channel.symbols_per_subframe;
        for r in reports {
            for c in &r.children {
                let edge = Edge { parent: r.reporter, child: c.child };
                if self.mu.contains_key(&edge) {
                    let state = LinkState {
                        capacity: cqi_to_capacity(c.cqi, symbols, &self.channel),
                        queue: c.bsr_bytes as f64,
                        mu: 0.0,
                    };
                    self.held.insert(edge, state);
                }
            }
        }
        self.graph
            .edges()
            .iter()
            .map(|e| {
                let held = self.held.get(e).copied().unwrap_or_default();
                (*e, LinkState { mu: self.mu[e], ..held })
            })
            .collect()
    }

    /// Applies the parent-child associations carried by `reports`. Returns
    /// whether the known topology changed.
    pub fn update_topology(&mut self, reports: &[FeedbackReport]) -> Result<bool, TopologyError> {
        let mut parent_of: HashMap<NodeId, NodeId> = self.graph.edges().iter().map(|e| (e.child, e.parent)).collect();
        let mut nodes: Vec<Node> = self.graph.nodes().to_vec();
        let mut changed = false;

        for r in reports {
            if !nodes.iter().any(|n| n.id == r.reporter) {
                return Err(TopologyError::UnknownNode { parent: r.reporter, child: r.reporter });
            }
            for c in &r.children {
                if parent_of.get(&c.child) == Some(&r.reporter) {
                    continue;
                }
                if c.child == DONOR || is_ancestor(&parent_of, c.child, r.reporter) {
                    return Err(TopologyError::Cycle { parent: r.reporter, child: c.child });
                }
                if !nodes.iter().any(|n| n.id == c.child) {
                    let host = nodes.iter().find(|n| n.id == r.reporter).expect("checked above");
                    nodes.push(Node {
                        id: c.child,
                        kind: if c.child.is_cluster() { NodeKind::UeCluster } else { NodeKind::IabNode },
                        pos: host.pos,
                        depth: None,
                        home: c.child.cluster_host(),
                    });
                }
                parent_of.insert(c.child, r.reporter);
                changed = true;
            }
        }
        if !changed {
            return Ok(false);
        }

        let graph = rebuild(nodes, &parent_of)?;
        self.mu = graph.edges().iter().map(|e| (*e, self.mu.get(e).copied().unwrap_or(0.0))).collect();
        self.held.retain(|e, _| graph.edges().contains(e));
        self.graph = graph;
        Ok(true)
    }

    /// Runs one controller cycle at `subframe` and advances the staleness
    /// counters: favored edges reset to 0, others age by `t_alloc`.
    pub fn allocation_cycle(
        &mut self,
        subframe: u64,
        link_states: &HashMap<Edge, LinkState>,
    ) -> Result<(SchedulingIndication, Vec<TraceRow>), ControllerError> {
        let tree = compute_weights(&self.graph, link_states, &self.params)?;
        let matching = t_mwm(&tree);
        let edges = self.graph.edges();

        let mut favored = BTreeMap::new();
        let mut active = HashSet::new();
        for &i in &matching.edges {
            favored.insert(edges[i].parent, edges[i].child);
            active.insert(i);
        }

        let mut trace = Vec::with_capacity(edges.len());
        for (i, e) in edges.iter().enumerate() {
            let mu = self.mu[e];
            trace.push(TraceRow { subframe, edge: *e, weight: tree.weights()[i], favored: active.contains(&i), mu });
            let next = if active.contains(&i) { 0.0 } else { mu + self.t_alloc as f64 };
            self.mu.insert(*e, next);
        }

        Ok((SchedulingIndication { favored, valid_from: subframe, period: self.t_alloc }, trace))
    }
}

fn is_ancestor(parent_of: &HashMap<NodeId, NodeId>, candidate: NodeId, mut node: NodeId) -> bool {
    let mut hops = 0;
    loop {
        if node == candidate {
            return true;
        }
        match parent_of.get(&node) {
            Some(&p) if hops <= parent_of.len() => {
                node = p;
                hops += 1;
            }
            _ => return false,
        }
    }
}

/// Rebuilds a tree with breadth-first edge order and fresh depths.
fn rebuild(mut nodes: Vec<Node>, parent_of: &HashMap<NodeId, NodeId>) -> Result<IabGraph, TopologyError> {
    let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (&c, &p) in parent_of {
        children.entry(p).or_default().push(c);
    }
    for list in children.values_mut() {
        list.sort();
    }
    let mut depth: HashMap<NodeId, u32> = HashMap::from([(DONOR, 0)]);
    let mut edges = Vec::with_capacity(parent_of.len());
    let mut queue = VecDeque::from([DONOR]);
    while let Some(p) = queue.pop_front() {
        for &c in children.get(&p).map(Vec::as_slice).unwrap_or(&[]) {
            depth.insert(c, depth[&p] + 1);
            edges.push(Edge { parent: p, child: c });
            queue.push_back(c);
        }
    }
    for n in &mut nodes {
        n.depth = depth.get(&n.id).copied();
    }
    let graph = IabGraph::new(nodes, edges)?;
    graph.validate_tree()?;
    Ok(graph)
}
