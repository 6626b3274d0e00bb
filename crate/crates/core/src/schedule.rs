//! Departure and intersection exit times for individual vehicles.
//!
//! Routes sharing a departure edge release vehicles on one uniform grid with
//! period `1 / x*` of that edge. The order on the grid follows the merged
//! per-route ideal timestamps `k / f`. Exit times at each intersection take the
//! later of the free estimate and the headway behind the previous vehicle that
//! left onto the same edge:
//!
//! `t_exit = max(t_entry + t_in(x*_in) + t_out(x*_out), t_exit_prev + 1 / x*_out)`

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{self, Write};

use thiserror::Error;

use crate::flow::CommodityFlowSolution;
use crate::network::{EdgeIndex, NodeId, NodeKind, RoadNetwork};
use crate::routes::{Route, RouteSet};

#[derive(Clone, Debug, PartialEq)]
pub struct Crossing {
    pub intersection: NodeId,
    pub entry_edge: EdgeIndex,
    pub exit_edge: EdgeIndex,
    pub entry_time: f64,
    pub exit_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleSchedule {
    pub vehicle: usize,
    pub demand: usize,
    pub route: usize,
    pub edges: Vec<EdgeIndex>,
    pub departure_time: f64,
    pub crossings: Vec<Crossing>,
    pub arrival_time: f64,
}

impl VehicleSchedule {
    pub fn departure_edge(&self) -> EdgeIndex {
        self.edges[0]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schedule {
    pub vehicles: Vec<VehicleSchedule>,
    /// `(demand, route)` pairs whose period exceeds the horizon; they release
    /// no vehicles.
    pub idle_routes: Vec<(usize, usize)>,
}

impl Schedule {
    pub fn spawned(&self, demand: usize) -> usize {
        self.vehicles.iter().filter(|v| v.demand == demand).count()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("route edge {0} has no optimal flow")]
    MissingFlow(EdgeIndex),
    #[error("route of demand {demand} links intersections {first} and {second} without a depot between them")]
    AdjacentIntersections { demand: usize, first: NodeId, second: NodeId },
}

#[derive(Clone, Copy, PartialEq)]
struct Ideal {
    time: f64,
    order: usize,
    k: usize,
}

impl Eq for Ideal {}

impl Ord for Ideal {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, route order)
        other.time.total_cmp(&self.time).then_with(|| other.order.cmp(&self.order))
    }
}

impl PartialOrd for Ideal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Merges the ideal timestamps `k / f` of `routes` (ordered by route position
/// on ties) and returns the route position of each of the first `count`
/// entries.
pub fn merged_order(flows: &[f64], count: usize) -> Vec<usize> {
    let mut heap: BinaryHeap<Ideal> =
        flows.iter().enumerate().map(|(order, _)| Ideal { time: 0.0, order, k: 0 }).collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let Some(top) = heap.pop() else { break };
        out.push(top.order);
        let k = top.k + 1;
        heap.push(Ideal { time: k as f64 / flows[top.order], order: top.order, k });
    }
    out
}

/// Number of departures on an edge with flow `x` over `[0, horizon]`.
fn slot_count(x: f64, horizon: f64) -> usize {
    (x * horizon + 1e-9).floor() as usize + 1
}

/// Generates departures for every route, then fills intersection exit times.
pub fn build_departure_schedule(
    network: &RoadNetwork,
    routes: &RouteSet,
    solution: &CommodityFlowSolution,
    horizon: f64,
) -> Result<Schedule, ScheduleError> {
    if !(horizon > 0.0) {
        return Err(ScheduleError::Horizon(horizon));
    }
    let mut by_edge: BTreeMap<EdgeIndex, Vec<&Route>> = BTreeMap::new();
    let mut idle_routes = Vec::new();
    for r in &routes.routes {
        if 1.0 / r.flow > horizon {
            idle_routes.push((r.demand, r.index));
            continue;
        }
        by_edge.entry(r.edges[0]).or_default().push(r);
    }
    // (time, edge, slot, route)
    let mut departures: Vec<(f64, EdgeIndex, usize, &Route)> = Vec::new();
    for (&edge, members) in &by_edge {
        let x = solution.aggregate[edge];
        if !(x > 0.0) {
            continue;
        }
        let flows: Vec<f64> = members.iter().map(|r| r.flow).collect();
        for (slot, pos) in merged_order(&flows, slot_count(x, horizon)).into_iter().enumerate() {
            departures.push((slot as f64 / x, edge, slot, members[pos]));
        }
    }
    departures.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut vehicles: Vec<VehicleSchedule> = departures
        .into_iter()
        .enumerate()
        .map(|(vehicle, (time, _, _, r))| VehicleSchedule {
            vehicle,
            demand: r.demand,
            route: r.index,
            edges: r.edges.clone(),
            departure_time: time,
            crossings: Vec::new(),
            arrival_time: f64::NAN,
        })
        .collect();
    propagate_exit_times(&mut vehicles, network, solution)?;
    Ok(Schedule { vehicles, idle_routes })
}

#[derive(Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    vehicle: usize,
    /// Position of the next edge in the vehicle's route.
    at: usize,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.vehicle.cmp(&self.vehicle))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Fills `crossings` and `arrival_time` of every schedule from its departure
/// time. Crossings are resolved in global order of entry time, ties by
/// vehicle id; the headway is tracked per exit edge.
pub fn propagate_exit_times(
    schedules: &mut [VehicleSchedule],
    network: &RoadNetwork,
    solution: &CommodityFlowSolution,
) -> Result<(), ScheduleError> {
    let x = &solution.aggregate;
    for s in schedules.iter() {
        if let Some(&e) = s.edges.iter().find(|&&e| !(x[e] > 0.0)) {
            return Err(ScheduleError::MissingFlow(e));
        }
    }
    let latency = |e: EdgeIndex| network.latency(e, x[e]).expect("optimal flow is nonnegative");
    let is_intersection = |n: NodeId| network.kind(n) == Some(NodeKind::Intersection);
    let mut last_exit: BTreeMap<EdgeIndex, f64> = BTreeMap::new();
    let mut heap: BinaryHeap<Event> = BinaryHeap::new();
    for (i, s) in schedules.iter_mut().enumerate() {
        s.crossings.clear();
        heap.push(Event { time: s.departure_time, vehicle: i, at: 0 });
    }
    while let Some(Event { time, vehicle, at }) = heap.pop() {
        let s = &mut schedules[vehicle];
        let edge_in = s.edges[at];
        let node = network.edge(edge_in).to;
        if at + 1 == s.edges.len() {
            s.arrival_time = time + latency(edge_in);
            continue;
        }
        if !is_intersection(node) {
            heap.push(Event { time: time + latency(edge_in), vehicle, at: at + 1 });
            continue;
        }
        let edge_out = s.edges[at + 1];
        let next = network.edge(edge_out).to;
        if is_intersection(next) && at + 2 < s.edges.len() {
            return Err(ScheduleError::AdjacentIntersections { demand: s.demand, first: node, second: next });
        }
        let free = time + latency(edge_in) + latency(edge_out);
        let exit = match last_exit.get(&edge_out) {
            Some(&prev) => free.max(prev + 1.0 / x[edge_out]),
            None => free,
        };
        last_exit.insert(edge_out, exit);
        s.crossings.push(Crossing { intersection: node, entry_edge: edge_in, exit_edge: edge_out, entry_time: time, exit_time: exit });
        if at + 2 == s.edges.len() {
            s.arrival_time = exit;
        } else {
            heap.push(Event { time: exit, vehicle, at: at + 2 });
        }
    }
    Ok(())
}

fn edge_label(network: &RoadNetwork, e: EdgeIndex) -> String {
    let edge = network.edge(e);
    format!("{}-{}", edge.from, edge.to)
}

/// `vehicle\tdemand\troute\tdeparture_edge\tdeparture_time` rows.
pub fn write_departure_table<W: Write + ?Sized>(out: &mut W, network: &RoadNetwork, schedule: &Schedule) -> io::Result<()> {
    writeln!(out, "vehicle\tdemand\troute\tdeparture_edge\tdeparture_time")?;
    for v in &schedule.vehicles {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.9}",
            v.vehicle,
            v.demand,
            v.route,
            edge_label(network, v.departure_edge()),
            v.departure_time
        )?;
    }
    Ok(())
}

/// `vehicle\tintersection\tentry_edge\texit_edge\tentry_time\texit_time` rows.
pub fn write_crossing_table<W: Write + ?Sized>(out: &mut W, network: &RoadNetwork, schedule: &Schedule) -> io::Result<()> {
    writeln!(out, "vehicle\tintersection\tentry_edge\texit_edge\tentry_time\texit_time")?;
    for v in &schedule.vehicles {
        for c in &v.crossings {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.9}\t{:.9}",
                v.vehicle,
                c.intersection,
                edge_label(network, c.entry_edge),
                edge_label(network, c.exit_edge),
                c.entry_time,
                c.exit_time
            )?;
        }
    }
    Ok(())
}
