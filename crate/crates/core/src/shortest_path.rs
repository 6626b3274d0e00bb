//! Dijkstra on edge costs with a deterministic tie-break.
//!
//! Among all minimum-cost paths the one with the lexicographically smallest
//! edge-index sequence is returned. Distances are computed backwards from the
//! target, then a forward walk picks the smallest tight edge at every node.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::network::{EdgeIndex, NodeId, RoadNetwork};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("node {0} is not in the network")]
    UnknownNode(NodeId),
    #[error("negative cost {cost} on edge {edge}")]
    NegativeCost { edge: EdgeIndex, cost: f64 },
    #[error("node {target} is unreachable from node {from}")]
    Unreachable { from: NodeId, target: NodeId },
    #[error("expected {expected} edge costs, got {got}")]
    CostLength { expected: usize, got: usize },
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    slot: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then slot
        other.dist.total_cmp(&self.dist).then_with(|| other.slot.cmp(&self.slot))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cost-to-target for every node, indexed by node slot.
#[derive(Clone, Debug)]
pub struct DistanceToTarget {
    pub target: NodeId,
    dist: Vec<f64>,
    next: Vec<Option<EdgeIndex>>,
}

impl DistanceToTarget {
    pub fn get(&self, network: &RoadNetwork, node: NodeId) -> f64 {
        network.slot(node).map(|s| self.dist[s]).unwrap_or(f64::INFINITY)
    }
}

fn check_costs(network: &RoadNetwork, costs: &[f64]) -> Result<(), PathError> {
    if costs.len() != network.edges().len() {
        return Err(PathError::CostLength { expected: network.edges().len(), got: costs.len() });
    }
    if let Some((edge, &cost)) = costs.iter().enumerate().find(|(_, c)| !(**c >= 0.0)) {
        return Err(PathError::NegativeCost { edge, cost });
    }
    Ok(())
}

/// Reverse Dijkstra from `target`.
pub fn distances_to(network: &RoadNetwork, costs: &[f64], target: NodeId) -> Result<DistanceToTarget, PathError> {
    check_costs(network, costs)?;
    let t = network.slot(target).ok_or(PathError::UnknownNode(target))?;
    let n = network.nodes().len();
    let mut dist = vec![f64::INFINITY; n];
    let mut next = vec![None; n];
    let mut done = vec![false; n];
    dist[t] = 0.0;
    let mut heap = BinaryHeap::from([Entry { dist: 0.0, slot: t }]);
    while let Some(Entry { dist: d, slot: v }) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        let vid = network.nodes()[v].id;
        for &e in network.incoming(vid) {
            let u = network.slot(network.edge(e).from).expect("adjacency only holds known nodes");
            let nd = d + costs[e];
            let better = nd < dist[u] || (nd == dist[u] && next[u].is_some_and(|old| e < old));
            if !done[u] && better {
                dist[u] = nd;
                next[u] = Some(e);
                heap.push(Entry { dist: nd, slot: u });
            }
        }
    }
    Ok(DistanceToTarget { target, dist, next })
}

/// Walks forward from `source` along tight edges, smallest index first.
pub fn extract_path(
    network: &RoadNetwork,
    costs: &[f64],
    to_target: &DistanceToTarget,
    source: NodeId,
) -> Result<Vec<EdgeIndex>, PathError> {
    let target = to_target.target;
    let s = network.slot(source).ok_or(PathError::UnknownNode(source))?;
    if !to_target.dist[s].is_finite() {
        return Err(PathError::Unreachable { from: source, target });
    }
    let mut visited = vec![false; network.nodes().len()];
    let mut path = Vec::new();
    let mut at = source;
    visited[s] = true;
    'walk: while at != target {
        let u = network.slot(at).expect("walk stays on known nodes");
        let du = to_target.dist[u];
        let tol = 1e-12 * du.abs().max(1.0);
        let mut candidates: Vec<EdgeIndex> = network.outgoing(at).to_vec();
        candidates.sort_unstable();
        for e in candidates {
            let head = network.edge(e).to;
            let v = network.slot(head).expect("adjacency only holds known nodes");
            if !visited[v] && costs[e] + to_target.dist[v] <= du + tol {
                visited[v] = true;
                path.push(e);
                at = head;
                continue 'walk;
            }
        }
        // Only reachable with zero-cost cycles; follow the Dijkstra tree instead.
        return Ok(tree_path(network, to_target, source));
    }
    Ok(path)
}

fn tree_path(network: &RoadNetwork, to_target: &DistanceToTarget, source: NodeId) -> Vec<EdgeIndex> {
    let mut path = Vec::new();
    let mut at = source;
    while at != to_target.target {
        let e = to_target.next[network.slot(at).unwrap()].expect("finite distance has a tree edge");
        path.push(e);
        at = network.edge(e).to;
    }
    path
}

/// Minimum-cost path from `source` to `target` as an ordered edge list.
pub fn shortest_path(
    network: &RoadNetwork,
    costs: &[f64],
    source: NodeId,
    target: NodeId,
) -> Result<Vec<EdgeIndex>, PathError> {
    let d = distances_to(network, costs, target)?;
    extract_path(network, costs, &d, source)
}
