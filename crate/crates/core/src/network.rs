//! Road network and travel demands, with BPR edge latencies.
//!
//! Flow is measured in vehicles per second everywhere in this crate.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;

/// Index into [`RoadNetwork::edges`].
pub type EdgeIndex = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Intersection,
    Depot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Planar coordinates in meters. Needed to rank turns during route recovery.
    pub position: Option<[f64; 2]>,
}

impl Node {
    pub fn new(id: NodeId, kind: NodeKind, x: f64, y: f64) -> Self {
        Node { id, kind, position: Some([x, y]) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    /// Free-flow travel time, seconds.
    pub free_flow_time: f64,
    /// Capacity, vehicles per second.
    pub capacity: f64,
    /// Length, meters.
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demand {
    pub id: usize,
    pub origin: NodeId,
    pub destination: NodeId,
    /// Vehicles per second.
    pub rate: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("negative flow {0} on edge")]
    NegativeFlow(f64),
}

/// BPR volume-delay coefficients: `t = t0 * (1 + alpha * (x / capacity)^beta)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bpr {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Bpr {
    fn default() -> Self {
        Bpr { alpha: 0.15, beta: 4.0 }
    }
}

impl Bpr {
    #[inline]
    fn ratio_pow(&self, edge: &Edge, flow: f64) -> f64 {
        let r = flow / edge.capacity;
        if self.beta == 4.0 {
            let r2 = r * r;
            r2 * r2
        } else {
            r.powf(self.beta)
        }
    }

    /// Travel time on `edge` carrying `flow`.
    pub fn latency(&self, edge: &Edge, flow: f64) -> Result<f64, DomainError> {
        if flow < 0.0 {
            return Err(DomainError::NegativeFlow(flow));
        }
        Ok(self.latency_unchecked(edge, flow))
    }

    /// Derivative of `flow * latency(flow)` with respect to flow.
    pub fn marginal_cost(&self, edge: &Edge, flow: f64) -> Result<f64, DomainError> {
        if flow < 0.0 {
            return Err(DomainError::NegativeFlow(flow));
        }
        Ok(self.marginal_cost_unchecked(edge, flow))
    }

    #[inline]
    pub(crate) fn latency_unchecked(&self, edge: &Edge, flow: f64) -> f64 {
        edge.free_flow_time * (1.0 + self.alpha * self.ratio_pow(edge, flow))
    }

    #[inline]
    pub(crate) fn marginal_cost_unchecked(&self, edge: &Edge, flow: f64) -> f64 {
        edge.free_flow_time * (1.0 + self.alpha * (self.beta + 1.0) * self.ratio_pow(edge, flow))
    }
}

/// Latency with the standard coefficients (0.15, 4).
pub fn bpr_latency(edge: &Edge, flow: f64) -> Result<f64, DomainError> {
    Bpr::default().latency(edge, flow)
}

/// Marginal cost with the standard coefficients (0.15, 4).
pub fn marginal_cost(edge: &Edge, flow: f64) -> Result<f64, DomainError> {
    Bpr::default().marginal_cost(edge, flow)
}

/// Directed road graph. Immutable once built.
///
/// Edges whose endpoints are unknown stay in the edge list, where
/// [`validate`] reports them, and never enter the adjacency lists.
#[derive(Clone, Debug)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    index: BTreeMap<NodeId, usize>,
    edges: Vec<Edge>,
    outgoing: Vec<Vec<EdgeIndex>>,
    incoming: Vec<Vec<EdgeIndex>>,
    bpr: Bpr,
}

impl RoadNetwork {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Self {
        Self::with_bpr(nodes, edges, Bpr::default())
    }

    pub fn with_bpr(nodes: Vec<Node>, edges: Vec<Edge>, bpr: Bpr) -> Self {
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            index.entry(n.id).or_insert(i);
        }
        let mut outgoing = vec![Vec::new(); nodes.len()];
        let mut incoming = vec![Vec::new(); nodes.len()];
        for (e, edge) in edges.iter().enumerate() {
            if let (Some(&a), Some(&b)) = (index.get(&edge.from), index.get(&edge.to)) {
                outgoing[a].push(e);
                incoming[b].push(e);
            }
        }
        RoadNetwork { nodes, index, edges, outgoing, incoming, bpr }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: EdgeIndex) -> &Edge {
        &self.edges[e]
    }

    pub fn bpr(&self) -> Bpr {
        self.bpr
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub(crate) fn slot(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn kind(&self, id: NodeId) -> Option<NodeKind> {
        self.node(id).map(|n| n.kind)
    }

    pub fn position(&self, id: NodeId) -> Option<[f64; 2]> {
        self.node(id).and_then(|n| n.position)
    }

    pub fn outgoing(&self, id: NodeId) -> &[EdgeIndex] {
        self.slot(id).map(|i| self.outgoing[i].as_slice()).unwrap_or(&[])
    }

    pub fn incoming(&self, id: NodeId) -> &[EdgeIndex] {
        self.slot(id).map(|i| self.incoming[i].as_slice()).unwrap_or(&[])
    }

    pub fn find_edge(&self, from: NodeId, to: NodeId) -> Option<EdgeIndex> {
        self.outgoing(from).iter().copied().find(|&e| self.edges[e].to == to)
    }

    /// Travel time on edge `e` under `flow`, with this network's coefficients.
    pub fn latency(&self, e: EdgeIndex, flow: f64) -> Result<f64, DomainError> {
        self.bpr.latency(&self.edges[e], flow)
    }

    pub fn marginal_cost(&self, e: EdgeIndex, flow: f64) -> Result<f64, DomainError> {
        self.bpr.marginal_cost(&self.edges[e], flow)
    }

    /// Nodes reachable from `source` along directed edges.
    pub fn reachable_from(&self, source: NodeId) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let Some(start) = self.slot(source) else {
            return seen;
        };
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &e in &self.outgoing[i] {
                let j = self.index[&self.edges[e].to];
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    }

    pub fn is_reachable(&self, from: NodeId, to: NodeId) -> bool {
        match self.slot(to) {
            Some(t) => self.reachable_from(from)[t],
            None => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DuplicateNode { node: NodeId },
    DanglingEdge { edge: EdgeIndex, node: NodeId },
    SelfLoop { edge: EdgeIndex },
    ParallelEdge { edge: EdgeIndex, first: EdgeIndex },
    NonpositiveFreeFlowTime { edge: EdgeIndex },
    NonpositiveCapacity { edge: EdgeIndex },
    NonpositiveLength { edge: EdgeIndex },
    InvalidBpr,
    UnknownDemandNode { demand: usize, node: NodeId },
    DemandNodeNotDepot { demand: usize, node: NodeId },
    DegenerateDemand { demand: usize },
    NonpositiveRate { demand: usize },
    Unreachable { demand: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            DuplicateNode { node } => write!(f, "duplicate node {node}"),
            DanglingEdge { edge, node } => write!(f, "dangling edge {edge}: unknown node {node}"),
            SelfLoop { edge } => write!(f, "self-loop on edge {edge}"),
            ParallelEdge { edge, first } => write!(f, "parallel edge {edge} duplicates edge {first}"),
            NonpositiveFreeFlowTime { edge } => write!(f, "nonpositive free-flow time on edge {edge}"),
            NonpositiveCapacity { edge } => write!(f, "nonpositive capacity on edge {edge}"),
            NonpositiveLength { edge } => write!(f, "nonpositive length on edge {edge}"),
            InvalidBpr => write!(f, "invalid BPR coefficients"),
            UnknownDemandNode { demand, node } => write!(f, "demand {demand}: unknown node {node}"),
            DemandNodeNotDepot { demand, node } => write!(f, "demand {demand}: node {node} is not a depot"),
            DegenerateDemand { demand } => write!(f, "demand {demand}: origin equals destination"),
            NonpositiveRate { demand } => write!(f, "demand {demand}: nonpositive rate"),
            Unreachable { demand } => write!(f, "demand {demand}: destination unreachable from origin"),
        }
    }
}

/// Checks structural well-formedness. Collects every violation instead of
/// stopping at the first one.
pub fn validate(network: &RoadNetwork, demands: &[Demand]) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for n in network.nodes() {
        if seen.insert(n.id, ()).is_some() {
            out.push(Violation::DuplicateNode { node: n.id });
        }
    }
    let bpr = network.bpr();
    if !(bpr.alpha >= 0.0 && bpr.beta > 0.0 && bpr.alpha.is_finite() && bpr.beta.is_finite()) {
        out.push(Violation::InvalidBpr);
    }
    let mut pairs: BTreeMap<(NodeId, NodeId), EdgeIndex> = BTreeMap::new();
    for (e, edge) in network.edges().iter().enumerate() {
        for node in [edge.from, edge.to] {
            if network.node(node).is_none() {
                out.push(Violation::DanglingEdge { edge: e, node });
            }
        }
        if edge.from == edge.to {
            out.push(Violation::SelfLoop { edge: e });
        }
        if let Some(&first) = pairs.get(&(edge.from, edge.to)) {
            out.push(Violation::ParallelEdge { edge: e, first });
        } else {
            pairs.insert((edge.from, edge.to), e);
        }
        // `!(x > 0)` also catches NaN
        if !(edge.free_flow_time > 0.0) {
            out.push(Violation::NonpositiveFreeFlowTime { edge: e });
        }
        if !(edge.capacity > 0.0) {
            out.push(Violation::NonpositiveCapacity { edge: e });
        }
        if !(edge.length > 0.0) {
            out.push(Violation::NonpositiveLength { edge: e });
        }
    }
    for d in demands {
        let mut endpoints_ok = true;
        for node in [d.origin, d.destination] {
            match network.kind(node) {
                None => {
                    out.push(Violation::UnknownDemandNode { demand: d.id, node });
                    endpoints_ok = false;
                }
                Some(NodeKind::Intersection) => {
                    out.push(Violation::DemandNodeNotDepot { demand: d.id, node });
                }
                Some(NodeKind::Depot) => {}
            }
        }
        if d.origin == d.destination {
            out.push(Violation::DegenerateDemand { demand: d.id });
        }
        if !(d.rate > 0.0) {
            out.push(Violation::NonpositiveRate { demand: d.id });
        }
        if endpoints_ok && d.origin != d.destination && !network.is_reachable(d.origin, d.destination) {
            out.push(Violation::Unreachable { demand: d.id });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
