//! Decomposition of per-demand edge flows into explicit routes.
//!
//! Each demand's flow is peeled off one route at a time: walk from the origin
//! along edges that still carry residual flow, preferring to go straight, keep
//! the running minimum of the residuals seen, and subtract that amount from
//! every edge of the walk once the destination is reached.

use std::f64::consts::FRAC_PI_4;
use std::io::{self, Write};

use thiserror::Error;

use crate::flow::CommodityFlowSolution;
use crate::network::{Demand, EdgeIndex, NodeId, RoadNetwork};

/// Residual flow at or below this is treated as zero (vehicles per second).
pub const FLOW_EPSILON: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub demand: usize,
    /// Position within the demand's route list, starting at 0.
    pub index: usize,
    pub edges: Vec<EdgeIndex>,
    pub flow: f64,
}

impl Route {
    pub fn nodes(&self, network: &RoadNetwork) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.edges.len() + 1);
        if let Some(&first) = self.edges.first() {
            out.push(network.edge(first).from);
        }
        out.extend(self.edges.iter().map(|&e| network.edge(e).to));
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RouteSet {
    /// Routes grouped by demand, in demand order.
    pub routes: Vec<Route>,
    /// Set when some turn ranking fell back to edge-index order because node
    /// coordinates were missing.
    pub index_fallback: bool,
}

impl RouteSet {
    pub fn for_demand(&self, demand: usize) -> impl Iterator<Item = &Route> {
        self.routes.iter().filter(move |r| r.demand == demand)
    }

    pub fn route_count(&self, demand: usize) -> usize {
        self.for_demand(demand).count()
    }

    /// Re-aggregated per-edge flow of one demand.
    pub fn edge_flows(&self, demand: usize, n_edges: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_edges];
        for r in self.for_demand(demand) {
            for &e in &r.edges {
                out[e] += r.flow;
            }
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteError {
    #[error("demand {demand}: no residual flow leaves node {node} before the destination")]
    Stuck { demand: usize, node: NodeId },
    #[error("demand {demand}: cyclic residual flow through node {node}")]
    CyclicResidualFlow { demand: usize, node: NodeId },
    #[error("demand {0} has no flow in the solution")]
    MissingDemand(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Turn {
    Straight,
    Right,
    Left,
    Reverse,
}

/// Signed turn angle from `incoming` to `outgoing` in radians, positive to the
/// left (counter-clockwise with y pointing up).
pub fn turn_angle(network: &RoadNetwork, incoming: EdgeIndex, outgoing: EdgeIndex) -> Option<f64> {
    let dir = |e: EdgeIndex| -> Option<[f64; 2]> {
        let edge = network.edge(e);
        let a = network.position(edge.from)?;
        let b = network.position(edge.to)?;
        Some([b[0] - a[0], b[1] - a[1]])
    };
    let (i, o) = (dir(incoming)?, dir(outgoing)?);
    let cross = i[0] * o[1] - i[1] * o[0];
    let dot = i[0] * o[0] + i[1] * o[1];
    Some(cross.atan2(dot))
}

pub fn classify_turn(angle: f64) -> Turn {
    let a = angle.abs();
    if a <= FRAC_PI_4 {
        Turn::Straight
    } else if a >= 3.0 * FRAC_PI_4 {
        Turn::Reverse
    } else if angle < 0.0 {
        Turn::Right
    } else {
        Turn::Left
    }
}

/// Orders candidate outgoing edges: straight, then right, then left, then
/// reverse; smaller absolute angle first within a class; ties by edge index.
///
/// The flag is set when coordinates are missing and edge-index order was used.
pub fn straight_priority(
    network: &RoadNetwork,
    incoming: Option<EdgeIndex>,
    candidates: &[EdgeIndex],
) -> (Vec<EdgeIndex>, bool) {
    let mut by_index = candidates.to_vec();
    by_index.sort_unstable();
    let Some(incoming) = incoming else {
        return (by_index, false);
    };
    let mut keyed = Vec::with_capacity(candidates.len());
    for &c in &by_index {
        match turn_angle(network, incoming, c) {
            Some(a) => keyed.push((classify_turn(a), a.abs(), c)),
            None => return (by_index, true),
        }
    }
    keyed.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(&y.2)));
    (keyed.into_iter().map(|k| k.2).collect(), false)
}

/// Splits every demand's flow into routes whose flows re-sum to the input.
pub fn recover_routes(
    network: &RoadNetwork,
    solution: &CommodityFlowSolution,
    demands: &[Demand],
) -> Result<RouteSet, RouteError> {
    let mut set = RouteSet::default();
    for d in demands {
        let flow = solution.commodity(d.id).ok_or(RouteError::MissingDemand(d.id))?;
        let (routes, fallback) = recover_demand(network, d, flow)?;
        set.index_fallback |= fallback;
        set.routes.extend(routes);
    }
    Ok(set)
}

fn recover_demand(network: &RoadNetwork, d: &Demand, flow: &[f64]) -> Result<(Vec<Route>, bool), RouteError> {
    let mut residual: Vec<f64> = flow.iter().map(|&f| if f > FLOW_EPSILON { f } else { 0.0 }).collect();
    let mut routes = Vec::new();
    let mut fallback = false;
    while residual.iter().any(|&r| r > FLOW_EPSILON) {
        let mut at = d.origin;
        let mut came_from: Option<EdgeIndex> = None;
        let mut visited = vec![d.origin];
        let mut edges = Vec::new();
        let mut f = d.rate;
        while at != d.destination {
            let live: Vec<EdgeIndex> =
                network.outgoing(at).iter().copied().filter(|&e| residual[e] > FLOW_EPSILON).collect();
            let (ordered, fb) = straight_priority(network, came_from, &live);
            fallback |= fb;
            let Some(&e) = ordered.first() else {
                return Err(RouteError::Stuck { demand: d.id, node: at });
            };
            f = f.min(residual[e]);
            edges.push(e);
            came_from = Some(e);
            at = network.edge(e).to;
            if visited.contains(&at) {
                return Err(RouteError::CyclicResidualFlow { demand: d.id, node: at });
            }
            visited.push(at);
        }
        for &e in &edges {
            residual[e] -= f;
            if residual[e] <= FLOW_EPSILON {
                residual[e] = 0.0;
            }
        }
        routes.push(Route { demand: d.id, index: routes.len(), edges, flow: f });
    }
    Ok((routes, fallback))
}

/// Writes `demand\troute\tflow\tnodes` rows, nodes joined by `-`.
pub fn write_route_table<W: Write + ?Sized>(out: &mut W, network: &RoadNetwork, routes: &RouteSet) -> io::Result<()> {
    writeln!(out, "demand\troute\tflow\tnodes")?;
    for r in &routes.routes {
        let nodes: Vec<String> = r.nodes(network).iter().map(|n| n.to_string()).collect();
        writeln!(out, "{}\t{}\t{:.12}\t{}", r.demand, r.index, r.flow, nodes.join("-"))?;
    }
    Ok(())
}
