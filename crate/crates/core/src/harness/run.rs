//! End-to-end pipeline with per-stage artifacts.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordination::plan::{write_segment_table, write_trajectory_table};
use crate::coordination::{
    build_geometry, GeometryConfig, IntersectionCoordinator, IntersectionGeometry, Leg, PathId, PlanError, PlanRequest,
    State,
};
use crate::flow::{self, CommodityFlowSolution};
use crate::network::{Demand, EdgeIndex, NodeId, RoadNetwork};
use crate::routes::{recover_routes, write_route_table, RouteSet};
use crate::schedule::{build_departure_schedule, write_crossing_table, write_departure_table, Schedule};

use super::audit::{audit, audit_schedule, AuditReport, PlannedCrossing, ScheduleAudit};
use super::grid::SEGMENT_LENGTH;
use super::scenario::{GeometryParams, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Validate,
    SolveFlow,
    RecoverRoutes,
    Schedule,
    Coordinate,
    Audit,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Validate => "validate",
            Stage::SolveFlow => "solve-flow",
            Stage::RecoverRoutes => "recover-routes",
            Stage::Schedule => "schedule",
            Stage::Coordinate => "coordinate",
            Stage::Audit => "audit",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

impl StageError {
    fn new(stage: Stage, message: impl fmt::Display) -> Self {
        StageError { stage, message: message.to_string() }
    }
}

/// Flow solution plus the all-or-nothing baseline on free-flow times.
#[derive(Clone, Debug)]
pub struct FlowStage {
    pub network: RoadNetwork,
    pub demands: Vec<Demand>,
    pub solution: CommodityFlowSolution,
    pub baseline: Vec<f64>,
    pub baseline_objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub objective: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Worst per-commodity node imbalance divided by the commodity's rate.
    pub max_relative_residual: f64,
    pub max_utilization: f64,
    pub baseline_objective: f64,
    pub baseline_max_utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingRecord {
    pub vehicle: usize,
    pub intersection: NodeId,
    pub path: String,
    pub v_bar: f64,
    pub exit_speed: f64,
    pub v_bar_feasible: bool,
    pub waypoints: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub vehicle: usize,
    pub intersection: NodeId,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub vehicle: usize,
    pub demand: usize,
    pub route: usize,
    pub departure_time: f64,
    pub arrival_time: f64,
    pub travel_time: f64,
    /// `1/2 * integral(u^2)` summed over planned crossings.
    pub energy: f64,
    pub completed: bool,
}

/// Everything produced by the coordination stage.
#[derive(Clone, Debug, Default)]
pub struct CoordinationStage {
    pub geometries: BTreeMap<NodeId, IntersectionGeometry>,
    pub crossings: Vec<PlannedCrossing>,
    pub records: Vec<CrossingRecord>,
    pub dropped: Vec<DropRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub flow: FlowSummary,
    pub route_counts: BTreeMap<usize, usize>,
    pub spawned: BTreeMap<usize, usize>,
    pub idle_routes: Vec<(usize, usize)>,
    pub vehicles_spawned: usize,
    pub vehicles_completed: usize,
    pub dropped: Vec<DropRecord>,
    pub schedule_audit: ScheduleAudit,
    pub audit: AuditReport,
    pub vehicles: Vec<VehicleSummary>,
    pub crossings: Vec<CrossingRecord>,
}

/// Full pipeline output.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub flow: FlowStage,
    pub routes: RouteSet,
    pub schedule: Schedule,
    pub coordination: CoordinationStage,
    pub report: RunReport,
    /// Wall-clock seconds per stage. Kept out of every artifact.
    pub timings: Vec<(Stage, f64)>,
}

pub fn validate_stage(scenario: &Scenario) -> Result<(), StageError> {
    scenario.validate().map_err(|e| StageError::new(Stage::Validate, e))
}

pub fn flow_stage(scenario: &Scenario) -> Result<FlowStage, StageError> {
    let err = |e: &dyn fmt::Display| StageError::new(Stage::SolveFlow, e);
    let network = scenario.network();
    let demands = scenario.demands().map_err(|e| err(&e))?;
    let solution = flow::solve_system_optimal(&network, &demands, &scenario.params.solver).map_err(|e| err(&e))?;
    let free: Vec<f64> = network.edges().iter().map(|e| e.free_flow_time).collect();
    let aon = flow::all_or_nothing(&network, &demands, &free).map_err(|e| err(&e))?;
    let baseline = flow::aggregate_of(&aon, network.edges().len());
    let baseline_objective = flow::objective(&network, &baseline).map_err(|e| err(&e))?;
    Ok(FlowStage { network, demands, solution, baseline, baseline_objective })
}

fn max_utilization(network: &RoadNetwork, flows: &[f64]) -> f64 {
    network.edges().iter().zip(flows).map(|(e, &x)| x / e.capacity).fold(0.0, f64::max)
}

impl FlowStage {
    pub fn summary(&self) -> FlowSummary {
        let s = &self.solution;
        let max_relative_residual = self
            .demands
            .iter()
            .filter_map(|d| s.commodity(d.id).map(|f| flow::conservation_residual(&self.network, d, f) / d.rate))
            .fold(0.0, f64::max);
        FlowSummary {
            objective: s.objective,
            gap: s.gap,
            relative_gap: s.relative_gap,
            iterations: s.iterations,
            converged: s.converged,
            max_relative_residual,
            max_utilization: max_utilization(&self.network, &s.aggregate),
            baseline_objective: self.baseline_objective,
            baseline_max_utilization: max_utilization(&self.network, &self.baseline),
        }
    }
}

pub fn route_stage(flow: &FlowStage) -> Result<RouteSet, StageError> {
    recover_routes(&flow.network, &flow.solution, &flow.demands).map_err(|e| StageError::new(Stage::RecoverRoutes, e))
}

pub fn schedule_stage(scenario: &Scenario, flow: &FlowStage, routes: &RouteSet) -> Result<Schedule, StageError> {
    build_departure_schedule(&flow.network, routes, &flow.solution, scenario.params.horizon)
        .map_err(|e| StageError::new(Stage::Schedule, e))
}

fn leg_of(network: &RoadNetwork, center: NodeId, other: NodeId) -> Option<Leg> {
    let (c, p) = (network.position(center)?, network.position(other)?);
    Some(Leg::from_direction(p[0] - c[0], p[1] - c[1]))
}

/// Geometry of one intersection, with leg lengths taken from its edges.
pub fn intersection_geometry(
    network: &RoadNetwork,
    node: NodeId,
    params: &GeometryParams,
) -> Result<IntersectionGeometry, String> {
    let mut lengths: [Option<f64>; 4] = [None; 4];
    let mut seen_in = BTreeSet::new();
    let mut seen_out = BTreeSet::new();
    let edges = network.incoming(node).iter().chain(network.outgoing(node)).copied().collect::<Vec<_>>();
    for e in edges {
        let edge = network.edge(e);
        let inbound = edge.to == node;
        let other = if inbound { edge.from } else { edge.to };
        let leg = leg_of(network, node, other).ok_or_else(|| format!("node {other} has no position"))?;
        let fresh = if inbound { seen_in.insert(leg) } else { seen_out.insert(leg) };
        if !fresh {
            return Err(format!("intersection {node} has two {} edges on leg {leg:?}", if inbound { "incoming" } else { "outgoing" }));
        }
        match lengths[leg.index()] {
            Some(l) if (l - edge.length).abs() > 1e-9 => {
                return Err(format!("leg {leg:?} of intersection {node} mixes edge lengths {l} and {}", edge.length))
            }
            _ => lengths[leg.index()] = Some(edge.length),
        }
    }
    let config = GeometryConfig {
        leg_lengths: lengths.map(|l| l.unwrap_or(SEGMENT_LENGTH)),
        lane_offset: params.lane_offset,
        right_turn_radius: params.right_turn_radius,
        left_turn_radius: params.left_turn_radius,
    };
    build_geometry(&config).map_err(|e| format!("intersection {node}: {e}"))
}

/// Plans every scheduled crossing in global entry order. A vehicle that
/// cannot be planned is dropped from that crossing onward.
pub fn coordination_stage(scenario: &Scenario, flow: &FlowStage, schedule: &Schedule) -> Result<CoordinationStage, StageError> {
    let err = |m: String| StageError::new(Stage::Coordinate, m);
    let network = &flow.network;
    let x = &flow.solution.aggregate;
    let speed_on = |e: EdgeIndex| -> Result<f64, StageError> {
        let t = network.latency(e, x[e]).map_err(|e| err(e.to_string()))?;
        Ok(network.edge(e).length / t)
    };
    let mut out = CoordinationStage::default();
    let mut coordinators: BTreeMap<NodeId, IntersectionCoordinator> = BTreeMap::new();
    let mut order: Vec<(f64, usize, usize)> = Vec::new();
    for (i, v) in schedule.vehicles.iter().enumerate() {
        for (k, c) in v.crossings.iter().enumerate() {
            order.push((c.entry_time, i, k));
        }
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut exit_speed: BTreeMap<usize, f64> = BTreeMap::new();
    let mut dropped: BTreeSet<usize> = BTreeSet::new();
    for (_, i, k) in order {
        let v = &schedule.vehicles[i];
        if dropped.contains(&v.vehicle) {
            continue;
        }
        let c = &v.crossings[k];
        let node = c.intersection;
        let coord = match coordinators.entry(node) {
            Entry::Occupied(slot) => slot.into_mut(),
            Entry::Vacant(slot) => {
                let g = intersection_geometry(network, node, &scenario.geometry).map_err(err)?;
                out.geometries.insert(node, g.clone());
                slot.insert(IntersectionCoordinator::new(g, scenario.params.safety, scenario.params.waypoint_speed))
            }
        };
        let (ein, eout) = (network.edge(c.entry_edge), network.edge(c.exit_edge));
        let legs = (leg_of(network, node, ein.from), leg_of(network, node, eout.to));
        let (Some(entry_leg), Some(exit_leg)) = legs else {
            return Err(err(format!("intersection {node} has neighbours without positions")));
        };
        if entry_leg == exit_leg {
            return Err(err(format!("vehicle {} makes a U-turn at intersection {node}", v.vehicle)));
        }
        let path = PathId::new(entry_leg, exit_leg);
        let length = coord.geometry().path(path).length;
        let entry_speed = match exit_speed.get(&v.vehicle) {
            Some(&s) => s,
            None => speed_on(c.entry_edge)?,
        };
        let at = v.edges.iter().position(|&e| e == c.exit_edge).expect("exit edge lies on the route");
        let v_bar = speed_on(v.edges.get(at + 1).copied().unwrap_or(c.exit_edge))?;
        let req = PlanRequest {
            vehicle: v.vehicle,
            path,
            entry: State::new(c.entry_time, 0.0, entry_speed),
            exit_time: c.exit_time,
            length,
        };
        match coord.plan(&req, v_bar) {
            Ok(rec) => {
                exit_speed.insert(v.vehicle, rec.exit_speed);
                let plan = coord.committed().last().expect("just committed").clone();
                out.records.push(CrossingRecord {
                    vehicle: v.vehicle,
                    intersection: node,
                    path: path.label(),
                    v_bar: rec.v_bar,
                    exit_speed: rec.exit_speed,
                    v_bar_feasible: rec.v_bar_feasible,
                    waypoints: rec.waypoints,
                });
                out.crossings.push(PlannedCrossing { intersection: node, assigned_exit_time: c.exit_time, plan });
            }
            Err(e @ (PlanError::Unschedulable { .. } | PlanError::NoFeasibleExitSpeed)) => {
                dropped.insert(v.vehicle);
                out.dropped.push(DropRecord { vehicle: v.vehicle, intersection: node, reason: e.to_string() });
            }
            Err(e) => return Err(err(format!("vehicle {}: {e}", v.vehicle))),
        }
    }
    Ok(out)
}

fn vehicle_summaries(schedule: &Schedule, coordination: &CoordinationStage) -> Vec<VehicleSummary> {
    let dropped: BTreeSet<usize> = coordination.dropped.iter().map(|d| d.vehicle).collect();
    let mut energy: BTreeMap<usize, f64> = BTreeMap::new();
    for c in &coordination.crossings {
        *energy.entry(c.plan.vehicle).or_default() += c.plan.energy();
    }
    schedule
        .vehicles
        .iter()
        .map(|v| VehicleSummary {
            vehicle: v.vehicle,
            demand: v.demand,
            route: v.route,
            departure_time: v.departure_time,
            arrival_time: v.arrival_time,
            travel_time: v.arrival_time - v.departure_time,
            energy: energy.get(&v.vehicle).copied().unwrap_or(0.0),
            completed: !dropped.contains(&v.vehicle),
        })
        .collect()
}

/// Writes each completed stage's tables as soon as the stage finishes, so a
/// failing stage still leaves the earlier artifacts behind.
pub struct ArtifactWriter {
    dir: Option<PathBuf>,
    prefix: String,
    pub written: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn new(dir: Option<&Path>, scenario: &Scenario) -> io::Result<Self> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(ArtifactWriter { dir: dir.map(Path::to_path_buf), prefix: scenario.name.clone(), written: Vec::new() })
    }

    pub fn path(&self, stage: &str, ext: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.{stage}.{ext}", self.prefix)))
    }

    pub fn emit(&mut self, stage: &str, ext: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), StageError> {
        let Some(path) = self.path(stage, ext) else { return Ok(()) };
        let write = || -> io::Result<()> {
            let mut w = BufWriter::new(File::create(&path)?);
            body(&mut w)?;
            w.flush()
        };
        write().map_err(|e| StageError::new(Stage::Output, format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }
}

/// Runs the pipeline through `last`, writing artifacts of every finished
/// stage into `dir` when given.
pub fn run_through(scenario: &Scenario, last: Stage, dir: Option<&Path>) -> Result<RunOutput, (StageError, Vec<PathBuf>)> {
    let mut writer = ArtifactWriter::new(dir, scenario).map_err(|e| (StageError::new(Stage::Output, e), Vec::new()))?;
    match pipeline(scenario, last, &mut writer) {
        Ok(out) => Ok(out),
        Err(e) => Err((e, writer.written)),
    }
}

pub fn run(scenario: &Scenario) -> Result<RunOutput, StageError> {
    run_through(scenario, Stage::Audit, None).map_err(|(e, _)| e)
}

fn pipeline(scenario: &Scenario, last: Stage, w: &mut ArtifactWriter) -> Result<RunOutput, StageError> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: Stage, timings: &mut Vec<(Stage, f64)>| {
        timings.push((stage, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    validate_stage(scenario)?;
    lap(Stage::Validate, &mut timings);

    let flow = flow_stage(scenario)?;
    lap(Stage::SolveFlow, &mut timings);
    w.emit("flows", "tsv", |o| flow::write_flow_table(o, &flow.network, &flow.solution))?;

    let mut routes = RouteSet::default();
    if last >= Stage::RecoverRoutes {
        routes = route_stage(&flow)?;
        lap(Stage::RecoverRoutes, &mut timings);
        w.emit("routes", "tsv", |o| write_route_table(o, &flow.network, &routes))?;
    }
    let mut schedule = Schedule::default();
    if last >= Stage::Schedule {
        schedule = schedule_stage(scenario, &flow, &routes)?;
        lap(Stage::Schedule, &mut timings);
        w.emit("departures", "tsv", |o| write_departure_table(o, &flow.network, &schedule))?;
        w.emit("crossings", "tsv", |o| write_crossing_table(o, &flow.network, &schedule))?;
    }
    let mut coordination = CoordinationStage::default();
    if last >= Stage::Coordinate {
        coordination = coordination_stage(scenario, &flow, &schedule)?;
        lap(Stage::Coordinate, &mut timings);
        let plans: Vec<(usize, &crate::coordination::TrajectoryPlan)> =
            coordination.crossings.iter().map(|c| (c.intersection as usize, &c.plan)).collect();
        let dt = scenario.params.export_dt;
        w.emit("trajectories", "tsv", |o| write_trajectory_table(o, &plans, dt))?;
        w.emit("segments", "tsv", |o| write_segment_table(o, &plans))?;
        w.emit("plans", "tsv", |o| write_plan_log(o, &coordination))?;
    }
    let mut audit_report = AuditReport::default();
    let mut schedule_report = ScheduleAudit::default();
    if last >= Stage::Audit {
        schedule_report = audit_schedule(&flow.network, &flow.solution.aggregate, &schedule);
        audit_report = audit(&coordination.crossings, &coordination.geometries, &scenario.params.safety, scenario.params.audit_dt);
        lap(Stage::Audit, &mut timings);
    }
    let spawned: BTreeMap<usize, usize> = flow.demands.iter().map(|d| (d.id, schedule.spawned(d.id))).collect();
    let dropped_count = coordination.dropped.len();
    let report = RunReport {
        scenario: scenario.name.clone(),
        seed: scenario.params.seed,
        flow: flow.summary(),
        route_counts: flow.demands.iter().map(|d| (d.id, routes.route_count(d.id))).collect(),
        spawned,
        idle_routes: schedule.idle_routes.clone(),
        vehicles_spawned: schedule.vehicles.len(),
        vehicles_completed: if last >= Stage::Coordinate { schedule.vehicles.len() - dropped_count } else { 0 },
        dropped: coordination.dropped.clone(),
        schedule_audit: schedule_report,
        audit: audit_report,
        vehicles: vehicle_summaries(&schedule, &coordination),
        crossings: coordination.records.clone(),
    };
    if last >= Stage::Audit {
        w.emit("summary", "json", |o| {
            serde_json::to_writer_pretty(&mut *o, &report).map_err(io::Error::other)?;
            writeln!(o)
        })?;
    }
    Ok(RunOutput { flow, routes, schedule, coordination, report, timings })
}

/// `vehicle intersection path v_bar exit_speed v_bar_feasible waypoints` rows,
/// followed by dropped vehicles.
pub fn write_plan_log(out: &mut dyn Write, c: &CoordinationStage) -> io::Result<()> {
    writeln!(out, "vehicle\tintersection\tpath\tv_bar\texit_speed\tv_bar_feasible\twaypoints")?;
    for r in &c.records {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.9}\t{:.9}\t{}\t{}",
            r.vehicle, r.intersection, r.path, r.v_bar, r.exit_speed, r.v_bar_feasible, r.waypoints
        )?;
    }
    for d in &c.dropped {
        writeln!(out, "{}\t{}\tdropped\t\t\t\t{}", d.vehicle, d.intersection, d.reason)?;
    }
    Ok(())
}
