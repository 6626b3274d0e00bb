//! Scenario files: a network with its demands and run parameters in one TOML
//! document.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordination::{Leg, SafetyParams, WaypointSpeedRule};
use crate::flow::SolverConfig;
use crate::network::{validate, Bpr, Demand, Edge, Node, NodeId, NodeKind, RoadNetwork};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub params: RunParams,
    #[serde(default)]
    pub geometry: GeometryParams,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demands: Vec<DemandSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_generation: Option<DemandGeneration>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    /// Seconds of departures to schedule.
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Sampling step of the safety audit, seconds.
    #[serde(default = "default_audit_dt")]
    pub audit_dt: f64,
    /// Sampling step of the exported trajectory table, seconds.
    #[serde(default = "default_export_dt")]
    pub export_dt: f64,
    #[serde(default)]
    pub waypoint_speed: WaypointSpeedRule,
    #[serde(default)]
    pub safety: SafetyParams,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub bpr: Bpr,
}

fn default_audit_dt() -> f64 {
    0.05
}

fn default_export_dt() -> f64 {
    0.5
}

/// Intersection shape shared by every intersection. Leg lengths come from the
/// adjacent edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryParams {
    pub lane_offset: f64,
    pub right_turn_radius: f64,
    pub left_turn_radius: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams { lane_offset: 2.0, right_turn_radius: 6.0, left_turn_radius: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: NodeId,
    pub to: NodeId,
    pub free_flow_time: f64,
    pub capacity: f64,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    pub id: usize,
    pub origin: NodeId,
    pub destination: NodeId,
    pub rate: f64,
}

/// Draws `count` distinct boundary origin-destination pairs with rates
/// uniform in `[min_rate, max_rate]`, seeded by `params.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandGeneration {
    pub count: usize,
    pub min_rate: f64,
    pub max_rate: f64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are all representable in TOML")
    }

    pub fn network(&self) -> RoadNetwork {
        let nodes = self.nodes.iter().map(|n| Node::new(n.id, n.kind, n.x, n.y)).collect();
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                from: e.from,
                to: e.to,
                free_flow_time: e.free_flow_time,
                capacity: e.capacity,
                length: e.length,
            })
            .collect();
        RoadNetwork::with_bpr(nodes, edges, self.params.bpr)
    }

    /// Listed demands, or the generated ones when a generator is configured.
    pub fn demands(&self) -> Result<Vec<Demand>, ScenarioError> {
        match &self.demand_generation {
            None => Ok(self
                .demands
                .iter()
                .map(|d| Demand { id: d.id, origin: d.origin, destination: d.destination, rate: d.rate })
                .collect()),
            Some(g) => generate_demands(&self.network(), g, self.params.seed),
        }
    }

    /// Every problem with the scenario, not just the first.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut out = Vec::new();
        let p = &self.params;
        if !(p.horizon > 0.0) {
            out.push(format!("horizon {} must be positive", p.horizon));
        }
        if !(p.audit_dt > 0.0) || !(p.export_dt > 0.0) {
            out.push("sampling steps must be positive".to_string());
        }
        if !p.safety.is_valid() {
            out.push("safety parameters violate delta > 0, tau >= 0, u_min < 0 < u_max, 0 < v_min < v_max".into());
        }
        let s = &p.solver;
        if !(s.max_iterations > 0 && s.gap_tolerance > 0.0 && s.line_search_tolerance > 0.0) {
            out.push("solver settings must be positive".to_string());
        }
        let g = &self.geometry;
        if !(g.lane_offset >= 0.0 && g.right_turn_radius > 0.0 && g.left_turn_radius > 0.0) {
            out.push("geometry radii must be positive and the lane offset nonnegative".to_string());
        }
        if !self.demands.is_empty() && self.demand_generation.is_some() {
            out.push("give either demands or demand_generation, not both".to_string());
        }
        let mut ids = BTreeSet::new();
        for d in &self.demands {
            if !ids.insert(d.id) {
                out.push(format!("duplicate demand id {}", d.id));
            }
        }
        match self.demands() {
            Ok(demands) if demands.is_empty() => out.push("no demands".to_string()),
            Ok(demands) => {
                if let Err(violations) = validate(&self.network(), &demands) {
                    out.extend(violations.iter().map(|v| v.to_string()));
                }
            }
            Err(ScenarioError::Invalid(v)) => out.extend(v),
            Err(e) => out.push(e.to_string()),
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(out))
        }
    }
}

/// Depots with outgoing but no incoming edges.
pub fn sources(network: &RoadNetwork) -> Vec<NodeId> {
    network
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Depot && network.incoming(n.id).is_empty() && !network.outgoing(n.id).is_empty())
        .map(|n| n.id)
        .collect()
}

/// Depots with incoming but no outgoing edges.
pub fn sinks(network: &RoadNetwork) -> Vec<NodeId> {
    network
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Depot && network.outgoing(n.id).is_empty() && !network.incoming(n.id).is_empty())
        .map(|n| n.id)
        .collect()
}

/// Intersection next to a boundary depot and the leg the depot sits on.
fn attachment(network: &RoadNetwork, depot: NodeId) -> Option<(NodeId, Leg)> {
    let e = network.outgoing(depot).first().or_else(|| network.incoming(depot).first()).copied()?;
    let edge = network.edge(e);
    let other = if edge.from == depot { edge.to } else { edge.from };
    let (p, q) = (network.position(depot)?, network.position(other)?);
    Some((other, Leg::from_direction(p[0] - q[0], p[1] - q[1])))
}

/// Pairs that would need a U-turn at the shared intersection are left out.
pub fn generate_demands(network: &RoadNetwork, g: &DemandGeneration, seed: u64) -> Result<Vec<Demand>, ScenarioError> {
    if !(g.min_rate > 0.0 && g.min_rate <= g.max_rate) {
        return Err(ScenarioError::Invalid(vec!["demand rates need 0 < min_rate <= max_rate".to_string()]));
    }
    let mut pairs = Vec::new();
    for o in sources(network) {
        for d in sinks(network) {
            let same_leg = matches!((attachment(network, o), attachment(network, d)), (Some(a), Some(b)) if a == b);
            if !same_leg && network.is_reachable(o, d) {
                pairs.push((o, d));
            }
        }
    }
    if pairs.len() < g.count {
        return Err(ScenarioError::Invalid(vec![format!(
            "only {} origin-destination pairs available for {} demands",
            pairs.len(),
            g.count
        )]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    Ok(pairs
        .into_iter()
        .take(g.count)
        .enumerate()
        .map(|(id, (origin, destination))| {
            let rate = if g.max_rate > g.min_rate { rng.random_range(g.min_rate..=g.max_rate) } else { g.min_rate };
            Demand { id, origin, destination, rate }
        })
        .collect())
}
