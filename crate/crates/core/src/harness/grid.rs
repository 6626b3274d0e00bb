//! Built-in scenarios: the 3x4 grid and a single busy intersection.

use crate::coordination::{SafetyParams, WaypointSpeedRule};
use crate::flow::SolverConfig;
use crate::network::{Bpr, NodeKind};

use super::scenario::{DemandGeneration, DemandSpec, EdgeSpec, GeometryParams, NodeSpec, RunParams, Scenario};

pub const SEGMENT_LENGTH: f64 = 200.0;
pub const FREE_FLOW_TIME: f64 = 16.0;
pub const CAPACITY: f64 = 0.25;

struct Builder {
    nodes: Vec<NodeSpec>,
    edges: Vec<EdgeSpec>,
    next_depot: u32,
    lane_offset: f64,
}

impl Builder {
    fn new(lane_offset: f64) -> Self {
        Builder { nodes: Vec::new(), edges: Vec::new(), next_depot: 100, lane_offset }
    }

    fn depot(&mut self, at: [f64; 2]) -> u32 {
        let id = self.next_depot;
        self.next_depot += 1;
        self.nodes.push(NodeSpec { id, kind: NodeKind::Depot, x: at[0], y: at[1] });
        id
    }

    fn edge(&mut self, from: u32, to: u32) {
        self.edges.push(EdgeSpec { from, to, free_flow_time: FREE_FLOW_TIME, capacity: CAPACITY, length: SEGMENT_LENGTH });
    }

    /// Point `dist` along `dir` from `at`, shifted to the right-hand lane of
    /// travel direction `heading`.
    fn lane_point(&self, at: [f64; 2], dir: [f64; 2], dist: f64, heading: [f64; 2]) -> [f64; 2] {
        let right = [heading[1], -heading[0]];
        [at[0] + dir[0] * dist + right[0] * self.lane_offset, at[1] + dir[1] * dist + right[1] * self.lane_offset]
    }

    /// Boundary source and sink on the leg `out` of intersection `id`.
    fn boundary(&mut self, id: u32, at: [f64; 2], out: [f64; 2]) -> (u32, u32) {
        let inward = [-out[0], -out[1]];
        let src = self.lane_point(at, out, SEGMENT_LENGTH, inward);
        let src = self.depot(src);
        self.edge(src, id);
        let dst = self.lane_point(at, out, SEGMENT_LENGTH, out);
        let dst = self.depot(dst);
        self.edge(id, dst);
        (src, dst)
    }

    /// Two one-way depots between neighbouring intersections.
    fn link(&mut self, a: u32, pa: [f64; 2], b: u32, pb: [f64; 2]) {
        let d = [(pb[0] - pa[0]) / (2.0 * SEGMENT_LENGTH), (pb[1] - pa[1]) / (2.0 * SEGMENT_LENGTH)];
        let back = [-d[0], -d[1]];
        let fwd = self.lane_point(pa, d, SEGMENT_LENGTH, d);
        let fwd = self.depot(fwd);
        self.edge(a, fwd);
        self.edge(fwd, b);
        let rev = self.lane_point(pb, back, SEGMENT_LENGTH, back);
        let rev = self.depot(rev);
        self.edge(b, rev);
        self.edge(rev, a);
    }
}

fn params(horizon: f64, seed: u64) -> RunParams {
    RunParams {
        horizon,
        seed,
        audit_dt: 0.05,
        export_dt: 0.5,
        waypoint_speed: WaypointSpeedRule::MinimumEnergy,
        safety: SafetyParams::default(),
        solver: SolverConfig::default(),
        bpr: Bpr::default(),
    }
}

/// Three rows of four intersections 400 m apart, a depot midway along every
/// directed link and a source/sink pair on every boundary leg: 12
/// intersections, 62 depots, 96 edges of 200 m. Thirty demands are drawn from
/// `seed`.
pub fn grid_scenario(seed: u64) -> Scenario {
    let (rows, cols) = (3u32, 4u32);
    let geometry = GeometryParams::default();
    let mut b = Builder::new(geometry.lane_offset);
    let pos = |r: u32, c: u32| [c as f64 * 2.0 * SEGMENT_LENGTH, r as f64 * 2.0 * SEGMENT_LENGTH];
    for r in 0..rows {
        for c in 0..cols {
            let p = pos(r, c);
            b.nodes.push(NodeSpec { id: r * cols + c, kind: NodeKind::Intersection, x: p[0], y: p[1] });
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            if c + 1 < cols {
                b.link(id, pos(r, c), id + 1, pos(r, c + 1));
            }
            if r + 1 < rows {
                b.link(id, pos(r, c), id + cols, pos(r + 1, c));
            }
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            let p = pos(r, c);
            if r == 0 {
                b.boundary(id, p, [0.0, -1.0]);
            }
            if r + 1 == rows {
                b.boundary(id, p, [0.0, 1.0]);
            }
            if c == 0 {
                b.boundary(id, p, [-1.0, 0.0]);
            }
            if c + 1 == cols {
                b.boundary(id, p, [1.0, 0.0]);
            }
        }
    }
    Scenario {
        name: "grid".to_string(),
        params: params(300.0, seed),
        geometry,
        nodes: b.nodes,
        edges: b.edges,
        demands: Vec::new(),
        demand_generation: Some(DemandGeneration { count: 30, min_rate: 0.01, max_rate: 0.05 }),
    }
}

/// One intersection with a source and a sink on each leg and a demand for
/// every one of the twelve movements, sized for 100 vehicles over 400 s.
pub fn single_intersection_scenario() -> Scenario {
    let geometry = GeometryParams::default();
    let mut b = Builder::new(geometry.lane_offset);
    b.nodes.push(NodeSpec { id: 0, kind: NodeKind::Intersection, x: 0.0, y: 0.0 });
    let legs = [[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]];
    let ends: Vec<(u32, u32)> = legs.iter().map(|&out| b.boundary(0, [0.0, 0.0], out)).collect();
    let mut demands = Vec::new();
    for (i, &(src, _)) in ends.iter().enumerate() {
        for (j, &(_, dst)) in ends.iter().enumerate() {
            if i != j {
                demands.push(DemandSpec { id: demands.len(), origin: src, destination: dst, rate: 0.02 });
            }
        }
    }
    Scenario {
        name: "single_intersection".to_string(),
        params: params(400.0, 0),
        geometry,
        nodes: b.nodes,
        edges: b.edges,
        demands,
        demand_generation: None,
    }
}
