use thiserror::Error;

use crate::topology::NodeId;

/// Errors raised while building or validating the network graph.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid scenario parameter `{key}`: {reason}")]
    InvalidScenario { key: &'static str, reason: String },
    #[error("node {0} cannot reach any upstream gNB above the quality floor")]
    Unreachable(NodeId),
    #[error("graph has {found} donors, expected exactly one")]
    DonorCount { found: usize },
    #[error("node {0} appears more than once")]
    DuplicateNode(NodeId),
    #[error("edge {parent}->{child} references an unknown node")]
    UnknownNode { parent: NodeId, child: NodeId },
    #[error("node {0} has more than one parent")]
    MultipleParents(NodeId),
    #[error("node {0} is not connected to the donor")]
    Disconnected(NodeId),
    #[error("edge {parent}->{child} appears before the edge feeding {parent}")]
    Misordered { parent: NodeId, child: NodeId },
    #[error("node {node} has depth {found}, expected {expected}")]
    BadDepth { node: NodeId, found: u32, expected: u32 },
    #[error("UE node {0} must be a leaf")]
    UeNotLeaf(NodeId),
    #[error("association {parent}->{child} would create a cycle")]
    Cycle { parent: NodeId, child: NodeId },
}

/// Errors raised by the tree matching routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("tree has {nodes} nodes but {edges} edges")]
    EdgeCount { nodes: usize, edges: usize },
    #[error("weight list has {weights} entries for {edges} edges")]
    WeightCount { edges: usize, weights: usize },
    #[error("edge {index} has invalid weight {weight}")]
    BadWeight { index: usize, weight: f64 },
    #[error("edge {index} references node {node} outside 0..{nodes}")]
    NodeOutOfRange { index: usize, node: usize, nodes: usize },
    #[error("edge {index} is a self loop")]
    SelfLoop { index: usize },
    #[error("node {node} has more than one parent")]
    MultipleParents { node: usize },
    #[error("edge {index} leaves node {node} before any edge reaches it")]
    Misordered { index: usize, node: usize },
    #[error("tree must contain at least one node")]
    Empty,
    #[error("edge index {0} is not part of the tree")]
    UnknownEdge(usize),
    #[error("edge set is not a matching")]
    Infeasible,
    #[error("exhaustive search limited to {limit} edges, got {edges}")]
    TooLarge { edges: usize, limit: usize },
}

/// Errors raised by the weight policies.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("no link state for edge {parent}->{child}")]
    MissingLinkState { parent: NodeId, child: NodeId },
    #[error("invalid policy parameter `{key}`: {reason}")]
    InvalidParam { key: &'static str, reason: String },
    #[error("policy {0} does not produce weights")]
    NotCentralized(&'static str),
    #[error("edge {parent}->{child} is not in the graph index")]
    UnindexedEdge { parent: NodeId, child: NodeId },
    #[error(transparent)]
    Tree(#[from] MatchingError),
}

/// Errors raised by the MAC layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("DCI from {origin} for subframe {subframe} arrived after it was committed")]
    LateDci { origin: NodeId, subframe: u64 },
    #[error("DCI targets subframe {dci} but grid holds subframe {grid}")]
    WrongSubframe { dci: u64, grid: u64 },
    #[error("DCI symbol range {start}..{end} exceeds {symbols} symbols")]
    SymbolRange { start: usize, end: usize, symbols: usize },
    #[error("symbol {symbol} already reserved by {existing}, DCI from {origin}")]
    ReservationConflict { symbol: usize, existing: NodeId, origin: NodeId },
    #[error("symbol {symbol} is reserved by the parent")]
    Reserved { symbol: usize },
}

/// Errors raised by the channel model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("coincident positions ({x}, {y})")]
    Coincident { x: f64, y: f64 },
    #[error("invalid channel parameter `{key}`: {reason}")]
    InvalidParam { key: &'static str, reason: String },
}

/// Errors raised by the controller.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Errors that abort a simulation run.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("half-duplex violation in subframe {subframe}: node {node} in {count} links on symbol {symbol}")]
    HalfDuplex { subframe: u64, symbol: usize, node: NodeId, count: usize },
    #[error("gNB {gnb} reallocated {count} parent-reserved symbols in subframe {subframe}")]
    ReservedReallocation { subframe: u64, gnb: NodeId, count: usize },
    #[error("conservation broken at subframe {subframe}: generated {generated} != in flight {in_flight} + delivered {delivered}")]
    Conservation { subframe: u64, generated: u64, in_flight: u64, delivered: u64 },
    #[error("invalid run configuration `{key}`: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Phy(#[from] PhyError),
}

/// Errors raised while loading an experiment configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}
