//! Per-gNB TDMA scheduling with look-ahead DCI propagation.

use std::collections::HashMap;

use crate::error::MacError;
use crate::topology::{IabGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymbolUse {
    Idle,
    /// Downlink to a UE.
    Access(NodeId),
    /// Downlink to an IAB child.
    BackhaulTx(NodeId),
    /// Receiving from the parent, which reserved the symbol.
    ReservedByParent(NodeId),
}

/// Symbol allocation of one gNB for one subframe.
#[derive(Debug, Clone, PartialEq)]
pub struct SubframeGrid {
    owner: NodeId,
    subframe: u64,
    symbols: Vec<SymbolUse>,
    committed: bool,
}

impl SubframeGrid {
    pub fn new(owner: NodeId, subframe: u64, symbols: usize) -> Self {
        Self { owner, subframe, symbols: vec![SymbolUse::Idle; symbols], committed: false }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn subframe(&self) -> u64 {
        self.subframe
    }

    pub fn symbols(&self) -> &[SymbolUse] {
        &self.symbols
    }

    pub fn is_committed(&self) -> bool {
        self.committed
    }

    pub fn commit(&mut self) {
        self.committed = true;
    }

    pub fn free_symbols(&self) -> usize {
        self.symbols.iter().filter(|s| **s == SymbolUse::Idle).count()
    }

    /// Marks the DCI's symbols as reserved by its origin.
    pub fn apply_dci(&mut self, dci: &DciMessage) -> Result<(), MacError> {
        if self.committed {
            return Err(MacError::LateDci { origin: dci.origin, subframe: dci.subframe });
        }
        if dci.subframe != self.subframe {
            return Err(MacError::WrongSubframe { dci: dci.subframe, grid: self.subframe });
        }
        if dci.start >= dci.end || dci.end > self.symbols.len() {
            return Err(MacError::SymbolRange { start: dci.start, end: dci.end, symbols: self.symbols.len() });
        }
        for symbol in dci.start..dci.end {
            match self.symbols[symbol] {
                SymbolUse::ReservedByParent(existing) if existing != dci.origin => {
                    return Err(MacError::ReservationConflict { symbol, existing, origin: dci.origin })
                }
                SymbolUse::Idle | SymbolUse::ReservedByParent(_) => {}
                _ => return Err(MacError::Reserved { symbol }),
            }
        }
        for s in &mut self.symbols[dci.start..dci.end] {
            *s = SymbolUse::ReservedByParent(dci.origin);
        }
        Ok(())
    }

    /// Assigns up to `count` idle symbols, lowest first. Returns the symbols.
    fn take_idle(&mut self, count: usize, usage: SymbolUse) -> Vec<usize> {
        let mut taken = Vec::with_capacity(count);
        for (i, s) in self.symbols.iter_mut().enumerate() {
            if taken.len() == count {
                break;
            }
            if *s == SymbolUse::Idle {
                *s = usage;
                taken.push(i);
            }
        }
        taken
    }
}

/// Backhaul reservation sent by a parent to its child.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DciMessage {
    pub origin: NodeId,
    pub target: NodeId,
    pub subframe: u64,
    /// Half-open symbol range.
    pub start: usize,
    pub end: usize,
}

/// Scheduling view of one child of a gNB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildDemand {
    pub child: NodeId,
    /// IAB child (backhaul) rather than a UE.
    pub backhaul: bool,
    /// Bytes queued for the child and not yet granted.
    pub backlog: u64,
    pub bits_per_symbol: f64,
}

impl ChildDemand {
    fn symbols_needed(&self) -> usize {
        if self.backlog == 0 || !(self.bits_per_symbol > 0.0) {
            0
        } else {
            (self.backlog as f64 * 8.0 / self.bits_per_symbol).ceil() as usize
        }
    }
}

/// A grant produced by [`schedule_subframe`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub child: NodeId,
    pub symbols: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    pub gnb: NodeId,
    /// Favored child from the latest indication. A UE-cluster id favors every UE.
    pub favored: Option<NodeId>,
    /// Round-robin position, as a child id, where the next pass starts.
    pub cursor: Option<NodeId>,
    /// Subframes between commit and transmission for the donor.
    pub lookahead: u64,
}

impl SchedulerState {
    pub fn new(gnb: NodeId, lookahead: u64) -> Self {
        Self { gnb, favored: None, cursor: None, lookahead }
    }

    fn is_favored(&self, d: &ChildDemand) -> bool {
        match self.favored {
            Some(f) if f.cluster_host() == Some(self.gnb) => !d.backhaul,
            Some(f) => f == d.child,
            None => false,
        }
    }
}

/// Favored-first two-pass allocation of the grid's idle symbols.
///
/// Pass 1 serves the favored child (or all UEs when the UE cluster is
/// favored), pass 2 serves everyone else round-robin. A child receives
/// `ceil(backlog / bits per symbol)` symbols capped by what is left.
pub fn schedule_subframe(
    state: &mut SchedulerState,
    grid: &mut SubframeGrid,
    demands: &[ChildDemand],
) -> (Vec<Grant>, Vec<DciMessage>) {
    let n = demands.len();
    let start = state
        .cursor
        .and_then(|c| demands.iter().position(|d| d.child >= c))
        .unwrap_or(0);
    let order: Vec<usize> = (0..n).map(|i| (start + i) % n).collect();

    let mut grants = Vec::new();
    let mut last_served = None;
    for pass_favored in [true, false] {
        for &i in &order {
            let d = &demands[i];
            if state.is_favored(d) != pass_favored {
                continue;
            }
            let free = grid.free_symbols();
            if free == 0 {
                break;
            }
            let need = d.symbols_needed();
            if need == 0 {
                continue;
            }
            let usage = if d.backhaul { SymbolUse::BackhaulTx(d.child) } else { SymbolUse::Access(d.child) };
            let symbols = grid.take_idle(need.min(free), usage);
            if !pass_favored {
                last_served = Some(i);
            }
            grants.push(Grant { child: d.child, symbols });
        }
    }
    if let Some(i) = last_served {
        state.cursor = Some(demands[(i + 1) % n].child);
    }

    let mut dcis = Vec::new();
    for g in grants.iter().filter(|g| demands.iter().any(|d| d.child == g.child && d.backhaul)) {
        for (start, end) in runs(&g.symbols) {
            dcis.push(DciMessage { origin: state.gnb, target: g.child, subframe: grid.subframe, start, end });
        }
    }
    (grants, dcis)
}

fn runs(symbols: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &s in symbols {
        match out.last_mut() {
            Some((_, end)) if *end == s => *end += 1,
            _ => out.push((s, s + 1)),
        }
    }
    out
}

/// First half-duplex or reservation problem found in one subframe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DuplexViolation {
    /// A node takes part in more than one link on a symbol.
    Overlap { symbol: usize, node: NodeId, count: usize },
    /// A child used a symbol its parent reserved for backhaul.
    Reallocated { symbol: usize, gnb: NodeId },
    /// A link that is not a tree edge.
    NotAnEdge { symbol: usize, parent: NodeId, child: NodeId },
}

/// Checks every symbol of one subframe across all gNB grids.
pub fn find_duplex_violation(grids: &[SubframeGrid], tree: &IabGraph) -> Option<DuplexViolation> {
    let by_owner: HashMap<NodeId, &SubframeGrid> = grids.iter().map(|g| (g.owner, g)).collect();
    let symbols = grids.iter().map(|g| g.symbols.len()).max().unwrap_or(0);
    let mut load: HashMap<NodeId, usize> = HashMap::new();
    for symbol in 0..symbols {
        load.clear();
        for g in grids {
            let child = match g.symbols.get(symbol) {
                Some(SymbolUse::Access(c)) | Some(SymbolUse::BackhaulTx(c)) => *c,
                _ => continue,
            };
            if tree.parent_of(child) != Some(g.owner) {
                return Some(DuplexViolation::NotAnEdge { symbol, parent: g.owner, child });
            }
            if let Some(SymbolUse::BackhaulTx(_)) = g.symbols.get(symbol) {
                if let Some(cg) = by_owner.get(&child) {
                    if cg.symbols.get(symbol) != Some(&SymbolUse::ReservedByParent(g.owner)) {
                        return Some(DuplexViolation::Reallocated { symbol, gnb: child });
                    }
                }
            }
            for node in [g.owner, child] {
                *load.entry(node).or_default() += 1;
            }
        }
        if let Some((&node, &count)) = load.iter().filter(|(_, &c)| c > 1).min_by_key(|(n, _)| **n) {
            return Some(DuplexViolation::Overlap { symbol, node, count });
        }
    }
    None
}

/// True iff no node is in more than one link on any symbol.
pub fn check_half_duplex(grids: &[SubframeGrid], tree: &IabGraph) -> bool {
    find_duplex_violation(grids, tree).is_none()
}
