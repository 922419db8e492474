//! Slotted simulation engine.
//!
//! Each subframe runs, in order: source arrivals at the donor, a controller
//! cycle every `t_alloc` subframes, look-ahead commits in depth order, and the
//! transmission of the current subframe from the deepest gNB up, so bytes
//! received in a subframe are forwarded at the earliest in the next one.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::controller::{ChildReport, ControllerState, FeedbackReport, SchedulingIndication, TraceRow};
use crate::error::SimError;
use crate::mac::{find_duplex_violation, schedule_subframe, ChildDemand, DuplexViolation, SchedulerState, SubframeGrid};
use crate::phy::{sinr_to_cqi, Channel, ChannelParams, Cqi};
use crate::policies::PolicyParams;
use crate::topology::{
    attach_quality_greedy, generate_grid_scenario, reduce_graph, IabGraph, NodeId, NodeKind, ScenarioConfig,
};

/// Delivery record of one application packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub ue: NodeId,
    pub size: u32,
    pub created: u64,
    /// End of the subframe in which the last byte reached the UE.
    pub delivered: Option<u64>,
    /// End of the subframe in which the last byte crossed each hop.
    pub hop_done: Vec<Option<u64>>,
}

impl Packet {
    pub fn hops(&self) -> usize {
        self.hop_done.len()
    }

    /// Time spent waiting for and crossing each hop, in subframes.
    pub fn residence_times(&self) -> Option<Vec<u64>> {
        let mut prev = self.created;
        self.hop_done
            .iter()
            .map(|done| {
                let d = (*done)?;
                let r = d - prev;
                prev = d;
                Some(r)
            })
            .collect()
    }
}

pub fn write_packets_csv<W: Write>(packets: &[Packet], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["packet_id", "ue_id", "size_B", "created_sf", "delivered_sf", "hops"])?;
    for p in packets {
        w.write_record([
            p.id.to_string(),
            p.ue.to_string(),
            p.size.to_string(),
            p.created.to_string(),
            p.delivered.map(|d| d.to_string()).unwrap_or_default(),
            p.hops().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Constant-bit-rate source towards one UE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowConfig {
    pub ue: NodeId,
    pub size: u32,
    pub inter_arrival: u64,
}

impl FlowConfig {
    /// Offered rate in bits per second.
    pub fn rate_bps(&self, subframe_s: f64) -> f64 {
        self.size as f64 * 8.0 / (self.inter_arrival as f64 * subframe_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Segment {
    packet: u64,
    bytes: u32,
}

/// FIFO of packet segments waiting to cross one edge.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RlcBuffer {
    queue: VecDeque<Segment>,
    occupancy: u64,
}

impl RlcBuffer {
    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }

    pub fn push(&mut self, packet: u64, bytes: u32) {
        if bytes == 0 {
            return;
        }
        match self.queue.back_mut() {
            Some(last) if last.packet == packet => last.bytes += bytes,
            _ => self.queue.push_back(Segment { packet, bytes }),
        }
        self.occupancy += bytes as u64;
    }

    /// Moves up to `max_bytes` from the head. Returns `(packet, bytes)` pieces.
    fn pop_bytes(&mut self, max_bytes: u64) -> Vec<(u64, u32)> {
        let mut left = max_bytes;
        let mut out = Vec::new();
        while left > 0 {
            let Some(head) = self.queue.front_mut() else { break };
            let take = (head.bytes as u64).min(left) as u32;
            out.push((head.packet, take));
            head.bytes -= take;
            left -= take as u64;
            self.occupancy -= take as u64;
            if head.bytes == 0 {
                self.queue.pop_front();
            }
        }
        out
    }
}

/// Drains a granted allocation from `buffer`. Moves
/// `min(occupancy, floor(symbols * bits_per_symbol / 8))` bytes in FIFO order.
pub fn drain_edge(buffer: &mut RlcBuffer, granted_symbols: usize, bits_per_symbol: f64) -> (u64, Vec<(u64, u32)>) {
    let worth = grant_bytes(granted_symbols, bits_per_symbol);
    let pieces = buffer.pop_bytes(worth);
    (pieces.iter().map(|&(_, b)| b as u64).sum(), pieces)
}

fn grant_bytes(symbols: usize, bits_per_symbol: f64) -> u64 {
    (symbols as f64 * bits_per_symbol / 8.0).floor() as u64
}

/// Per-run simulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub t_sim_s: f64,
    pub subframe_us: f64,
    pub t_alloc: u64,
    pub s_udp: u32,
    pub inter_arrival: u64,
    pub warmup_s: f64,
    /// Subframes between an indication being computed and taking effect.
    pub indication_delay: u64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_sim_s: 3.0,
            subframe_us: 100.0,
            t_alloc: 1,
            s_udp: 100,
            inter_arrival: 1,
            warmup_s: 0.1,
            indication_delay: 0,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |key, reason: &str| Err(SimError::InvalidConfig { key, reason: reason.into() });
        if !(self.t_sim_s > 0.0) || !self.t_sim_s.is_finite() {
            return bad("t_sim_s", "must be positive");
        }
        if !(self.subframe_us > 0.0) {
            return bad("subframe_us", "must be positive");
        }
        if self.t_alloc == 0 {
            return bad("t_alloc", "must be at least one subframe");
        }
        if self.inter_arrival == 0 {
            return bad("inter_arrival", "must be at least one subframe");
        }
        if !(self.warmup_s >= 0.0) || !self.warmup_s.is_finite() {
            return bad("warmup_s", "must be finite and non-negative");
        }
        Ok(())
    }

    pub fn subframe_s(&self) -> f64 {
        self.subframe_us * 1e-6
    }

    pub fn subframes(&self) -> u64 {
        (self.t_sim_s / self.subframe_s()).round() as u64
    }

    /// Subframes excluded from statistics: `warmup_s`, but never more than
    /// half of a short run.
    pub fn warmup_subframes(&self) -> u64 {
        ((self.warmup_s / self.subframe_s()).round() as u64).min(self.subframes() / 2)
    }
}

/// Attached full topology with the static per-link rates of one run.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: IabGraph,
    /// CQI of the edge reaching each node, indexed like `graph.nodes()`.
    pub cqi: Vec<Cqi>,
    pub channel: ChannelParams,
}

impl Network {
    /// Drops UEs and draws the channel for `seed`. gNB attachments only use
    /// shadowing-free link quality, so they do not depend on the seed.
    pub fn build(scenario: &ScenarioConfig, channel: &ChannelParams, seed: u64) -> Result<Self, SimError> {
        let physical = generate_grid_scenario(scenario, seed)?;
        let ch = Channel::new(channel.clone(), seed)?;
        let node = |id: NodeId| physical.node(id).expect("known node");
        let quality = |a: NodeId, b: NodeId| ch.mean_gain_db(node(a), node(b)).unwrap_or(f64::NEG_INFINITY);
        let graph = attach_quality_greedy(&physical, quality, scenario.attach_floor_db)?;
        let mut cqi = vec![0; graph.nodes().len()];
        for e in graph.edges() {
            let i = graph.index_of(e.child).expect("known node");
            cqi[i] = ch.cqi(node(e.parent), node(e.child))?;
        }
        Ok(Self { graph, cqi, channel: channel.clone() })
    }

    /// Network with explicit per-edge SNRs, for hand-built topologies.
    pub fn with_snr(graph: IabGraph, snr_db: &HashMap<NodeId, f64>, channel: ChannelParams) -> Result<Self, SimError> {
        graph.validate_tree()?;
        channel.validate()?;
        let cqi = graph
            .nodes()
            .iter()
            .map(|n| snr_db.get(&n.id).map(|&s| sinr_to_cqi(s, &channel.cqi)).unwrap_or(0))
            .collect();
        Ok(Self { graph, cqi, channel })
    }

    pub fn bits_per_symbol(&self, child: NodeId) -> f64 {
        self.graph.index_of(child).map(|i| self.channel.bits_per_symbol(self.cqi[i])).unwrap_or(0.0)
    }

    /// Commit horizon: one more than the deepest gNB.
    pub fn lookahead(&self) -> u64 {
        self.graph.max_gnb_depth() as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Ue,
    Node,
}

impl EdgeKind {
    pub fn label(self) -> &'static str {
        match self {
            EdgeKind::Ue => "ue",
            EdgeKind::Node => "node",
        }
    }
}

/// Summed RLC occupancy of one gNB's access or backhaul edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferSample {
    pub subframe: u64,
    pub gnb: NodeId,
    pub kind: EdgeKind,
    pub depth: u32,
    pub occupancy: u64,
}

pub fn write_buffers_csv<W: Write>(samples: &[BufferSample], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subframe", "gnb_id", "edge_kind", "depth", "occupancy_B"])?;
    for s in samples {
        w.write_record([
            s.subframe.to_string(),
            s.gnb.to_string(),
            s.kind.label().to_string(),
            s.depth.to_string(),
            s.occupancy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub subframes: u64,
    pub generated_bytes: u64,
    pub delivered_bytes: u64,
    pub in_flight_bytes: u64,
    pub duplex_checks: u64,
    pub duplex_violations: u64,
    pub reserved_reallocations: u64,
    pub conservation_checks: u64,
    pub dcis: u64,
    pub indications: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub packets: Vec<Packet>,
    pub buffers: Vec<BufferSample>,
    pub trace: Vec<TraceRow>,
    pub topology: IabGraph,
    pub stats: RunStats,
}

struct Gnb {
    id: NodeId,
    depth: u64,
    /// Node indices of the children, sorted by id.
    children: Vec<usize>,
}

struct Slot {
    grids: Vec<SubframeGrid>,
    /// `(gnb slot, child index, symbols)` per committed grant.
    grants: Vec<(usize, usize, usize)>,
}

/// Runs one simulation on a freshly built network.
pub fn run(
    scenario: &ScenarioConfig,
    channel: &ChannelParams,
    policy: &PolicyParams,
    cfg: &RunConfig,
) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let net = Network::build(scenario, channel, cfg.seed)?;
    run_network(&net, policy, cfg)
}

/// Runs one simulation on a given network.
pub fn run_network(net: &Network, policy: &PolicyParams, cfg: &RunConfig) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    policy.validate().map_err(|e| SimError::InvalidConfig { key: "policy", reason: e.to_string() })?;
    let g = &net.graph;
    let n = g.nodes().len();
    let symbols = net.channel.symbols_per_subframe;
    let k = net.lookahead();
    let idx = |id: NodeId| g.index_of(id).expect("known node");

    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in g.edges() {
        parent[idx(e.child)] = Some(idx(e.parent));
        children[idx(e.parent)].push(idx(e.child));
    }
    for c in &mut children {
        c.sort_by_key(|&i| g.nodes()[i].id);
    }
    let mut gnbs: Vec<Gnb> = g
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, node)| node.kind.is_gnb())
        .map(|(i, node)| Gnb { id: node.id, depth: node.depth.unwrap_or(0) as u64, children: children[i].clone() })
        .collect();
    gnbs.sort_by_key(|x| (x.depth, x.id));
    let gnb_slot: HashMap<NodeId, usize> = gnbs.iter().enumerate().map(|(s, x)| (x.id, s)).collect();
    let bps: Vec<f64> = g.nodes().iter().map(|node| net.bits_per_symbol(node.id)).collect();
    let is_ue: Vec<bool> = g.nodes().iter().map(|node| node.kind == NodeKind::Ue).collect();

    // Route of each UE as node indices after the donor.
    let mut routes: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, node) in g.nodes().iter().enumerate() {
        if node.kind == NodeKind::Ue {
            let mut path = vec![i];
            while let Some(p) = parent[*path.last().expect("non-empty")] {
                path.push(p);
            }
            path.pop();
            path.reverse();
            routes.insert(i, path);
        }
    }
    let mut flows: Vec<FlowConfig> = g
        .ues()
        .map(|u| FlowConfig { ue: u.id, size: cfg.s_udp, inter_arrival: cfg.inter_arrival })
        .collect();
    flows.sort_by_key(|f| f.ue);

    let mut controller = if policy.policy.is_centralized() {
        let reduced = reduce_graph(g);
        Some(ControllerState::new(reduced, policy.clone(), net.channel.clone(), cfg.t_alloc)?)
    } else {
        None
    };
    let mut schedulers: Vec<SchedulerState> = gnbs.iter().map(|x| SchedulerState::new(x.id, k)).collect();
    let mut pending_indications: VecDeque<SchedulingIndication> = VecDeque::new();

    let mut buffers: Vec<RlcBuffer> = vec![RlcBuffer::default(); n];
    let mut reserved: Vec<u64> = vec![0; n];
    let mut pipeline: BTreeMap<u64, Slot> = BTreeMap::new();
    let mut packets: Vec<Packet> = Vec::new();
    let mut hop_bytes: Vec<Vec<u32>> = Vec::new();
    let mut samples = Vec::new();
    let mut trace = Vec::new();
    let mut stats = RunStats::default();
    let total = cfg.subframes();

    for t in 0..total {
        // Source arrivals at the donor.
        for f in &flows {
            if f.size == 0 || t % f.inter_arrival != 0 {
                continue;
            }
            let id = packets.len() as u64;
            let ue = idx(f.ue);
            let route = &routes[&ue];
            packets.push(Packet { id, ue: f.ue, size: f.size, created: t, delivered: None, hop_done: vec![None; route.len()] });
            hop_bytes.push(vec![0; route.len()]);
            buffers[route[0]].push(id, f.size);
            stats.generated_bytes += f.size as u64;
        }

        // Feedback, controller cycle and indications.
        if let Some(ctrl) = controller.as_mut() {
            if t % cfg.t_alloc == 0 {
                let reports: Vec<FeedbackReport> = gnbs
                    .iter()
                    .map(|x| {
                        let entry = |c: usize| ChildReport {
                            child: g.nodes()[c].id,
                            cqi: net.cqi[c],
                            bsr_bytes: buffers[c].occupancy(),
                        };
                        let iab = x.children.iter().filter(|&&c| !is_ue[c]).map(|&c| entry(c)).collect();
                        let ues: Vec<ChildReport> = x.children.iter().filter(|&&c| is_ue[c]).map(|&c| entry(c)).collect();
                        FeedbackReport::aggregate(x.id, t, iab, &ues)
                    })
                    .collect();
                ctrl.update_topology(&reports)?;
                let states = ctrl.ingest_feedback(&reports);
                let (mut ind, rows) = ctrl.allocation_cycle(t, &states)?;
                ind.valid_from = t + cfg.indication_delay;
                pending_indications.push_back(ind);
                trace.extend(rows);
                stats.indications += 1;
            }
            while pending_indications.front().is_some_and(|i| i.valid_from <= t) {
                let ind = pending_indications.pop_front().expect("checked");
                for s in &mut schedulers {
                    s.favored = ind.favored.get(&s.gnb).copied();
                }
            }
        }

        // Look-ahead commits: the gNB at depth d commits subframe t + k - d.
        for (s, x) in gnbs.iter().enumerate() {
            let target = t + k - x.depth;
            if target >= total {
                continue;
            }
            let slot = pipeline.entry(target).or_insert_with(|| Slot {
                grids: gnbs.iter().map(|y| SubframeGrid::new(y.id, target, symbols)).collect(),
                grants: Vec::new(),
            });
            let demands: Vec<ChildDemand> = x
                .children
                .iter()
                .map(|&c| ChildDemand {
                    child: g.nodes()[c].id,
                    backhaul: !is_ue[c],
                    backlog: buffers[c].occupancy().saturating_sub(reserved[c]),
                    bits_per_symbol: bps[c],
                })
                .collect();
            let (grants, dcis) = schedule_subframe(&mut schedulers[s], &mut slot.grids[s], &demands);
            slot.grids[s].commit();
            for grant in grants {
                let c = idx(grant.child);
                let d = &demands[x.children.iter().position(|&y| y == c).expect("own child")];
                reserved[c] += grant_bytes(grant.symbols.len(), bps[c]).min(d.backlog);
                slot.grants.push((s, c, grant.symbols.len()));
            }
            for dci in dcis {
                let cs = gnb_slot[&dci.target];
                slot.grids[cs].apply_dci(&dci)?;
                stats.dcis += 1;
            }
        }

        // Transmission of subframe t, deepest gNBs first.
        if let Some(mut slot) = pipeline.remove(&t) {
            stats.duplex_checks += 1;
            match find_duplex_violation(&slot.grids, g) {
                None => {}
                Some(DuplexViolation::Reallocated { gnb, .. }) => {
                    return Err(SimError::ReservedReallocation { subframe: t, gnb, count: 1 })
                }
                Some(DuplexViolation::Overlap { symbol, node, count }) => {
                    return Err(SimError::HalfDuplex { subframe: t, symbol, node, count })
                }
                Some(DuplexViolation::NotAnEdge { symbol, parent, .. }) => {
                    return Err(SimError::HalfDuplex { subframe: t, symbol, node: parent, count: 0 })
                }
            }
            slot.grants.sort_by_key(|&(s, c, _)| (std::cmp::Reverse(gnbs[s].depth), s, c));
            for (_, c, syms) in slot.grants {
                // Reserved bytes are always the head of the FIFO.
                let (moved, pieces) = drain_edge(&mut buffers[c], syms, bps[c]);
                reserved[c] = reserved[c].saturating_sub(moved);
                for (pid, bytes) in pieces {
                    let p = pid as usize;
                    let ue = idx(packets[p].ue);
                    let route = &routes[&ue];
                    let hop = route.iter().position(|&h| h == c).expect("on route");
                    hop_bytes[p][hop] += bytes;
                    if hop_bytes[p][hop] == packets[p].size {
                        packets[p].hop_done[hop] = Some(t + 1);
                    }
                    if hop + 1 < route.len() {
                        buffers[route[hop + 1]].push(pid, bytes);
                    } else {
                        stats.delivered_bytes += bytes as u64;
                        if packets[p].hop_done[hop].is_some() {
                            packets[p].delivered = Some(t + 1);
                        }
                    }
                }
            }
        }

        // Conservation, every subframe, to the byte.
        let in_flight: u64 = buffers.iter().map(RlcBuffer::occupancy).sum();
        stats.conservation_checks += 1;
        if stats.generated_bytes != in_flight + stats.delivered_bytes {
            return Err(SimError::Conservation {
                subframe: t,
                generated: stats.generated_bytes,
                in_flight,
                delivered: stats.delivered_bytes,
            });
        }
        stats.in_flight_bytes = in_flight;

        if t % cfg.t_alloc == 0 {
            for x in &gnbs {
                for kind in [EdgeKind::Ue, EdgeKind::Node] {
                    let mut edges = x.children.iter().filter(|&&c| is_ue[c] == (kind == EdgeKind::Ue)).peekable();
                    if edges.peek().is_none() {
                        continue;
                    }
                    let occupancy = edges.map(|&c| buffers[c].occupancy()).sum();
                    samples.push(BufferSample { subframe: t, gnb: x.id, kind, depth: x.depth as u32, occupancy });
                }
            }
        }
    }
    stats.subframes = total;

    Ok(RunOutput { packets, buffers: samples, trace, topology: g.clone(), stats })
}
