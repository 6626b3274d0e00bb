//! System-optimal multi-commodity flow by conditional gradient (Frank-Wolfe).
//!
//! Minimizes `J(x) = sum_e x_e * t_e(x_e)` over per-demand flows that satisfy
//! conservation. Each iteration assigns every demand to its shortest path under
//! the current marginal costs (the all-or-nothing point), then moves toward it
//! with an exact line search. The duality gap `<grad J, x - y>` bounds
//! `J(x) - J*` from above.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{validate, Demand, DomainError, EdgeIndex, NodeId, RoadNetwork, Violation};
use crate::shortest_path::{distances_to, extract_path, PathError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub gap_tolerance: f64,
    pub line_search_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { max_iterations: 5000, gap_tolerance: 1e-4, line_search_tolerance: 1e-12 }
    }
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid network or demands: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("solver configuration must be positive")]
    BadConfig,
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Clone, Debug)]
pub struct CommodityFlowSolution {
    /// Demand ids, in the order of `per_commodity`.
    pub demand_ids: Vec<usize>,
    /// `per_commodity[m][e]`: flow of demand `m` on edge `e`.
    pub per_commodity: Vec<Vec<f64>>,
    pub aggregate: Vec<f64>,
    pub objective: f64,
    /// Absolute duality gap at the returned iterate.
    pub gap: f64,
    /// `gap / objective`.
    pub relative_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CommodityFlowSolution {
    pub fn commodity(&self, demand_id: usize) -> Option<&[f64]> {
        self.demand_ids.iter().position(|&d| d == demand_id).map(|m| self.per_commodity[m].as_slice())
    }
}

/// Total travel time `sum_e x_e * t_e(x_e)`.
pub fn objective(network: &RoadNetwork, aggregate: &[f64]) -> Result<f64, DomainError> {
    let mut j = 0.0;
    for (e, &x) in aggregate.iter().enumerate() {
        j += x * network.latency(e, x)?;
    }
    Ok(j)
}

pub fn marginal_costs(network: &RoadNetwork, aggregate: &[f64]) -> Vec<f64> {
    let bpr = network.bpr();
    network.edges().iter().zip(aggregate).map(|(edge, &x)| bpr.marginal_cost_unchecked(edge, x)).collect()
}

/// Routes every demand entirely onto its shortest path under `costs`.
/// Returns per-demand edge flows in demand order.
pub fn all_or_nothing(network: &RoadNetwork, demands: &[Demand], costs: &[f64]) -> Result<Vec<Vec<f64>>, PathError> {
    let mut by_target: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (m, d) in demands.iter().enumerate() {
        by_target.entry(d.destination).or_default().push(m);
    }
    let mut flows = vec![vec![0.0; network.edges().len()]; demands.len()];
    for (target, members) in by_target {
        let dist = distances_to(network, costs, target)?;
        for m in members {
            for e in extract_path(network, costs, &dist, demands[m].origin)? {
                flows[m][e] += demands[m].rate;
            }
        }
    }
    Ok(flows)
}

pub fn aggregate_of(per_commodity: &[Vec<f64>], edges: usize) -> Vec<f64> {
    let mut total = vec![0.0; edges];
    for flow in per_commodity {
        for (t, f) in total.iter_mut().zip(flow) {
            *t += f;
        }
    }
    total
}

/// Largest conservation residual of one commodity over all nodes: interior
/// nodes balance, the origin emits `rate`, the destination absorbs `rate`.
pub fn conservation_residual(network: &RoadNetwork, demand: &Demand, flow: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for node in network.nodes() {
        let out: f64 = network.outgoing(node.id).iter().map(|&e| flow[e]).sum();
        let inc: f64 = network.incoming(node.id).iter().map(|&e| flow[e]).sum();
        let expected = if node.id == demand.origin {
            demand.rate
        } else if node.id == demand.destination {
            -demand.rate
        } else {
            0.0
        };
        worst = worst.max((out - inc - expected).abs());
    }
    worst
}

/// Exact minimizer of `J(x + step * dir)` over `step` in [0, 1], by bisection on
/// the directional derivative.
fn line_search(network: &RoadNetwork, x: &[f64], dir: &[f64], tol: f64) -> f64 {
    let bpr = network.bpr();
    let slope = |step: f64| -> f64 {
        network
            .edges()
            .iter()
            .enumerate()
            .filter(|(e, _)| dir[*e] != 0.0)
            .map(|(e, edge)| bpr.marginal_cost_unchecked(edge, (x[e] + step * dir[e]).max(0.0)) * dir[e])
            .sum()
    };
    if slope(0.0) >= 0.0 {
        return 0.0;
    }
    if slope(1.0) <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves the system-optimal assignment starting from all-or-nothing on
/// free-flow costs.
pub fn solve_system_optimal(
    network: &RoadNetwork,
    demands: &[Demand],
    config: &SolverConfig,
) -> Result<CommodityFlowSolution, FlowError> {
    let free_flow: Vec<f64> = network.edges().iter().map(|e| e.free_flow_time).collect();
    solve_from_costs(network, demands, config, &free_flow)
}

/// Same as [`solve_system_optimal`] but initialized by all-or-nothing on
/// `initial_costs`, which gives a different feasible starting point.
pub fn solve_from_costs(
    network: &RoadNetwork,
    demands: &[Demand],
    config: &SolverConfig,
    initial_costs: &[f64],
) -> Result<CommodityFlowSolution, FlowError> {
    validate(network, demands).map_err(FlowError::Invalid)?;
    if !(config.max_iterations > 0 && config.gap_tolerance > 0.0 && config.line_search_tolerance > 0.0) {
        return Err(FlowError::BadConfig);
    }
    let n_edges = network.edges().len();
    let mut per_commodity = all_or_nothing(network, demands, initial_costs)?;
    let mut aggregate = aggregate_of(&per_commodity, n_edges);
    let mut iterations = 0;
    loop {
        let grad = marginal_costs(network, &aggregate);
        let target = all_or_nothing(network, demands, &grad)?;
        let target_total = aggregate_of(&target, n_edges);
        let gap: f64 = (0..n_edges).map(|e| grad[e] * (aggregate[e] - target_total[e])).sum();
        let gap = gap.max(0.0);
        let j = objective(network, &aggregate)?;
        let relative_gap = if j > 0.0 { gap / j } else { 0.0 };
        let converged = relative_gap <= config.gap_tolerance;
        if converged || iterations >= config.max_iterations {
            return Ok(CommodityFlowSolution {
                demand_ids: demands.iter().map(|d| d.id).collect(),
                per_commodity,
                aggregate,
                objective: j,
                gap,
                relative_gap,
                iterations,
                converged,
            });
        }
        let dir: Vec<f64> = (0..n_edges).map(|e| target_total[e] - aggregate[e]).collect();
        let step = line_search(network, &aggregate, &dir, config.line_search_tolerance);
        for (flow, y) in per_commodity.iter_mut().zip(&target) {
            for (f, &t) in flow.iter_mut().zip(y) {
                *f += step * (t - *f);
            }
        }
        aggregate = aggregate_of(&per_commodity, n_edges);
        iterations += 1;
    }
}

/// Writes `from\tto\tdemand\tflow` rows: one `total` row per edge followed by
/// the positive per-demand flows on it.
pub fn write_flow_table<W: Write + ?Sized>(
    out: &mut W,
    network: &RoadNetwork,
    solution: &CommodityFlowSolution,
) -> io::Result<()> {
    writeln!(out, "from\tto\tdemand\tflow")?;
    for (e, edge) in network.edges().iter().enumerate() {
        writeln!(out, "{}\t{}\ttotal\t{:.12}", edge.from, edge.to, solution.aggregate[e])?;
        for (m, flow) in solution.per_commodity.iter().enumerate() {
            if flow[e] > 0.0 {
                writeln!(out, "{}\t{}\t{}\t{:.12}", edge.from, edge.to, solution.demand_ids[m], flow[e])?;
            }
        }
    }
    Ok(())
}

/// Edge indices with positive flow for one commodity.
pub fn support(flow: &[f64], eps: f64) -> Vec<EdgeIndex> {
    flow.iter().enumerate().filter(|(_, &f)| f > eps).map(|(e, _)| e).collect()
}
