//! IAB network graph: construction, validation, attachment and reduction.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TopologyError;

/// Globally unique node identifier. `0` is the donor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

pub const DONOR: NodeId = NodeId(0);

const CLUSTER_FLAG: u32 = 1 << 31;

impl NodeId {
    /// Identifier of the UE cluster hosted by `gnb` in the reduced graph.
    pub fn cluster_of(gnb: NodeId) -> NodeId {
        NodeId(gnb.0 | CLUSTER_FLAG)
    }

    pub fn is_cluster(self) -> bool {
        self.0 & CLUSTER_FLAG != 0
    }

    pub fn cluster_host(self) -> Option<NodeId> {
        self.is_cluster().then_some(NodeId(self.0 & !CLUSTER_FLAG))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cluster_host() {
            Some(host) => write!(f, "ues@{}", host.0),
            None => write!(f, "{}", self.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Donor,
    IabNode,
    Ue,
    UeCluster,
}

impl NodeKind {
    pub fn is_gnb(self) -> bool {
        matches!(self, NodeKind::Donor | NodeKind::IabNode)
    }

    pub fn label(self) -> &'static str {
        match self {
            NodeKind::Donor => "donor",
            NodeKind::IabNode => "iab",
            NodeKind::Ue => "ue",
            NodeKind::UeCluster => "ue_cluster",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub pos: Position,
    /// Hop count from the donor, known once the node is attached.
    pub depth: Option<u32>,
    /// gNB around which a UE was dropped.
    pub home: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub parent: NodeId,
    pub child: NodeId,
}

/// Directed IAB graph. Once attached, edges form a spanning tree rooted at the
/// donor and are listed so that the edge reaching a node precedes every edge
/// leaving it.
#[derive(Debug, Clone, PartialEq)]
pub struct IabGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: HashMap<NodeId, usize>,
}

impl IabGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, TopologyError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id, i).is_some() {
                return Err(TopologyError::DuplicateNode(node.id));
            }
        }
        for e in &edges {
            if !index.contains_key(&e.parent) || !index.contains_key(&e.child) {
                return Err(TopologyError::UnknownNode { parent: e.parent, child: e.child });
            }
        }
        Ok(Self { nodes, edges, index })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn parent_of(&self, id: NodeId) -> Option<NodeId> {
        self.edges.iter().find(|e| e.child == id).map(|e| e.parent)
    }

    pub fn children_of(&self, id: NodeId) -> Vec<NodeId> {
        self.edges.iter().filter(|e| e.parent == id).map(|e| e.child).collect()
    }

    pub fn gnbs(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind.is_gnb())
    }

    pub fn ues(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Ue)
    }

    /// Largest hop count of any gNB.
    pub fn max_gnb_depth(&self) -> u32 {
        self.gnbs().filter_map(|n| n.depth).max().unwrap_or(0)
    }

    /// Checks the spanning-tree invariants: one donor with id 0, `|E| = |V|-1`,
    /// a single parent per node, parent-precedes-child ordering, depths equal
    /// to hop counts and UE nodes as leaves.
    pub fn validate_tree(&self) -> Result<(), TopologyError> {
        let donors: Vec<&Node> = self.nodes.iter().filter(|n| n.kind == NodeKind::Donor).collect();
        if donors.len() != 1 || donors[0].id != DONOR {
            return Err(TopologyError::DonorCount { found: donors.len() });
        }

        let mut reached: HashMap<NodeId, u32> = HashMap::new();
        reached.insert(DONOR, 0);
        for e in &self.edges {
            let parent = self.node(e.parent).expect("checked at construction");
            if matches!(parent.kind, NodeKind::Ue | NodeKind::UeCluster) {
                return Err(TopologyError::UeNotLeaf(e.parent));
            }
            let Some(&parent_depth) = reached.get(&e.parent) else {
                return Err(TopologyError::Misordered { parent: e.parent, child: e.child });
            };
            if e.child == DONOR || reached.insert(e.child, parent_depth + 1).is_some() {
                return Err(TopologyError::MultipleParents(e.child));
            }
        }
        if let Some(lost) = self.nodes.iter().find(|n| !reached.contains_key(&n.id)) {
            return Err(TopologyError::Disconnected(lost.id));
        }
        for node in &self.nodes {
            let expected = reached[&node.id];
            match node.depth {
                Some(found) if found == expected => {}
                found => {
                    return Err(TopologyError::BadDepth {
                        node: node.id,
                        found: found.unwrap_or(u32::MAX),
                        expected,
                    })
                }
            }
        }
        Ok(())
    }

    /// Writes `node_id,kind,x_m,y_m,parent_id,depth` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node_id", "kind", "x_m", "y_m", "parent_id", "depth"])?;
        let parents: HashMap<NodeId, NodeId> = self.edges.iter().map(|e| (e.child, e.parent)).collect();
        for n in &self.nodes {
            w.write_record([
                n.id.to_string(),
                n.kind.label().to_string(),
                format!("{:.3}", n.pos.x),
                format!("{:.3}", n.pos.y),
                parents.get(&n.id).map(|p| p.to_string()).unwrap_or_default(),
                n.depth.map(|d| d.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Geometry of the urban-grid evaluation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// IAB-nodes sit on intersections with `|x| <= extent` and `0 <= y <= extent`.
    pub grid_extent_m: f64,
    pub inter_site_distance_m: f64,
    pub iab_nodes: usize,
    pub ue_radius_m: f64,
    pub ues_per_gnb: usize,
    /// Whether the donor also serves a UE cluster of its own.
    pub donor_ues: bool,
    /// Minimum mean link gain (negative path loss) for a gNB to attach to a
    /// candidate parent.
    pub attach_floor_db: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            grid_extent_m: 100.0,
            inter_site_distance_m: 100.0,
            iab_nodes: 5,
            ue_radius_m: 30.0,
            ues_per_gnb: 8,
            donor_ues: false,
            attach_floor_db: -110.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), TopologyError> {
        let bad = |key, reason: &str| Err(TopologyError::InvalidScenario { key, reason: reason.into() });
        if !(self.grid_extent_m > 0.0) {
            return bad("grid_extent_m", "must be positive");
        }
        if !(self.ue_radius_m > MIN_UE_DISTANCE_M) {
            return bad("ue_radius_m", "must exceed 1 m");
        }
        if !(self.inter_site_distance_m >= 100.0) {
            return bad("inter_site_distance_m", "must be at least 100 m");
        }
        if intersections(self).len() < self.iab_nodes {
            return bad("iab_nodes", "more IAB-nodes than grid intersections");
        }
        Ok(())
    }
}

const MIN_UE_DISTANCE_M: f64 = 1.0;

fn intersections(cfg: &ScenarioConfig) -> Vec<Position> {
    let isd = cfg.inter_site_distance_m;
    let span = (cfg.grid_extent_m / isd).floor() as i64;
    let mut points: Vec<Position> = (-span..=span)
        .flat_map(|i| (0..=span).map(move |j| Position::new(i as f64 * isd, j as f64 * isd)))
        .filter(|p| *p != Position::ORIGIN)
        .collect();
    points.sort_by(|a, b| {
        let key = |p: &Position| (p.distance(&Position::ORIGIN), p.y, p.x);
        key(a).partial_cmp(&key(b)).expect("finite coordinates")
    });
    points
}

/// Places the donor at the origin, IAB-nodes on the nearest intersections and
/// `ues_per_gnb` UEs uniformly in a disk around every IAB-node (and around the
/// donor when `donor_ues` is set). No edges yet.
pub fn generate_grid_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<IabGraph, TopologyError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut nodes = vec![Node {
        id: DONOR,
        kind: NodeKind::Donor,
        pos: Position::ORIGIN,
        depth: None,
        home: None,
    }];
    for (i, pos) in intersections(cfg).into_iter().take(cfg.iab_nodes).enumerate() {
        nodes.push(Node { id: NodeId(i as u32 + 1), kind: NodeKind::IabNode, pos, depth: None, home: None });
    }

    let hosts: Vec<(NodeId, Position)> = nodes
        .iter()
        .filter(|n| n.kind == NodeKind::IabNode || cfg.donor_ues)
        .map(|n| (n.id, n.pos))
        .collect();
    let mut next_id = nodes.len() as u32;
    let r_min2 = MIN_UE_DISTANCE_M * MIN_UE_DISTANCE_M;
    let r_max2 = cfg.ue_radius_m * cfg.ue_radius_m;
    for (gnb, center) in hosts {
        for _ in 0..cfg.ues_per_gnb {
            let r = (r_min2 + rng.random::<f64>() * (r_max2 - r_min2)).sqrt();
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            nodes.push(Node {
                id: NodeId(next_id),
                kind: NodeKind::Ue,
                pos: Position::new(center.x + r * theta.cos(), center.y + r * theta.sin()),
                depth: None,
                home: Some(gnb),
            });
            next_id += 1;
        }
    }
    IabGraph::new(nodes, Vec::new())
}

/// Attaches every IAB-node to its best upstream candidate and every UE to its
/// home gNB (or the best gNB when it has none).
///
/// Depth levels are built outward from the donor: a gNB joins level `d+1` if
/// some level-`d` gNB reaches it with quality at least `floor_db`, and it picks
/// the level-`d` candidate with the highest quality (lowest id on ties).
pub fn attach_quality_greedy<Q>(g: &IabGraph, quality: Q, floor_db: f64) -> Result<IabGraph, TopologyError>
where
    Q: Fn(NodeId, NodeId) -> f64,
{
    let mut nodes: Vec<Node> = g.nodes().to_vec();
    for n in &mut nodes {
        n.depth = None;
    }
    let mut depth: BTreeMap<NodeId, u32> = BTreeMap::new();
    depth.insert(DONOR, 0);
    if g.node(DONOR).map(|n| n.kind) != Some(NodeKind::Donor) {
        return Err(TopologyError::DonorCount { found: 0 });
    }

    let mut pending: Vec<NodeId> =
        g.nodes().iter().filter(|n| n.kind == NodeKind::IabNode).map(|n| n.id).collect();
    pending.sort();
    let mut frontier = vec![DONOR];
    let mut edges: Vec<Edge> = Vec::new();
    let mut level = 0;
    while !pending.is_empty() && !frontier.is_empty() {
        let mut next = Vec::new();
        pending.retain(|&node| {
            let best = frontier
                .iter()
                .map(|&cand| (cand, quality(cand, node)))
                .filter(|&(_, q)| q >= floor_db)
                .fold(None, |acc: Option<(NodeId, f64)>, (cand, q)| match acc {
                    Some((_, bq)) if bq >= q => acc,
                    _ => Some((cand, q)),
                });
            match best {
                Some((parent, _)) => {
                    edges.push(Edge { parent, child: node });
                    next.push(node);
                    false
                }
                None => true,
            }
        });
        level += 1;
        for &n in &next {
            depth.insert(n, level);
        }
        frontier = next;
    }
    if let Some(&lost) = pending.first() {
        return Err(TopologyError::Unreachable(lost));
    }

    let gnb_ids: Vec<NodeId> = depth.keys().copied().collect();
    for ue in g.ues() {
        let parent = match ue.home.filter(|h| depth.contains_key(h)) {
            Some(home) => home,
            None => *gnb_ids
                .iter()
                .max_by(|a, b| {
                    quality(**a, ue.id)
                        .partial_cmp(&quality(**b, ue.id))
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(b.cmp(a))
                })
                .expect("donor exists"),
        };
        edges.push(Edge { parent, child: ue.id });
        depth.insert(ue.id, depth[&parent] + 1);
    }

    for n in &mut nodes {
        n.depth = depth.get(&n.id).copied();
    }
    edges.sort_by_key(|e| (depth[&e.child], e.child));
    let out = IabGraph::new(nodes, edges)?;
    out.validate_tree()?;
    Ok(out)
}

/// Collapses the UEs of every gNB into one `UeCluster` leaf placed at their
/// centroid. gNBs, gNB-to-gNB edges and existing clusters are kept as they are.
pub fn reduce_graph(g: &IabGraph) -> IabGraph {
    let mut nodes: Vec<Node> = g.nodes().iter().filter(|n| n.kind != NodeKind::Ue).cloned().collect();
    let mut edges: Vec<Edge> = g
        .edges()
        .iter()
        .filter(|e| g.node(e.child).map(|n| n.kind) != Some(NodeKind::Ue))
        .copied()
        .collect();

    let mut clusters: BTreeMap<NodeId, (f64, f64, usize)> = BTreeMap::new();
    for e in g.edges() {
        if let Some(ue) = g.node(e.child).filter(|n| n.kind == NodeKind::Ue) {
            let acc = clusters.entry(e.parent).or_insert((0.0, 0.0, 0));
            acc.0 += ue.pos.x;
            acc.1 += ue.pos.y;
            acc.2 += 1;
        }
    }
    for (gnb, (sx, sy, count)) in clusters {
        let id = NodeId::cluster_of(gnb);
        if g.contains(id) {
            continue;
        }
        let host_depth = g.node(gnb).and_then(|n| n.depth);
        nodes.push(Node {
            id,
            kind: NodeKind::UeCluster,
            pos: Position::new(sx / count as f64, sy / count as f64),
            depth: host_depth.map(|d| d + 1),
            home: Some(gnb),
        });
        edges.push(Edge { parent: gnb, child: id });
    }
    IabGraph::new(nodes, edges).expect("reduction keeps ids unique")
}
