//! Small cavflow operations exported to JavaScript. Each has a plain Rust
//! version for native tests and a `#[wasm_bindgen]` wrapper.
//!
//! Every export returns a flat `Float64Array`. The layouts are documented on
//! each function; invalid input raises a JavaScript error.

use cavflow::coordination::{select_exit_speed, unconstrained_trajectory, SafetyParams, State};
use cavflow::flow::{solve_system_optimal, SolverConfig};
use cavflow::network::{Bpr, Demand, Edge, Node, NodeKind, RoadNetwork};
use wasm_bindgen::prelude::*;

fn edge(from: u32, to: u32, free_flow_time: f64, capacity: f64) -> Edge {
    Edge { from, to, free_flow_time, capacity, length: 200.0 }
}

/// `(flow, latency, marginal cost)` triples for `samples` flows evenly spaced
/// on `[0, max_flow]`.
pub fn latency_curve(free_flow_time: f64, capacity: f64, max_flow: f64, samples: usize) -> Result<Vec<f64>, String> {
    if !(free_flow_time > 0.0 && capacity > 0.0 && max_flow > 0.0 && samples >= 2) {
        return Err("free-flow time, capacity and range must be positive, with at least two samples".into());
    }
    let e = edge(0, 1, free_flow_time, capacity);
    let bpr = Bpr::default();
    let mut out = Vec::with_capacity(3 * samples);
    for k in 0..samples {
        let x = max_flow * k as f64 / (samples - 1) as f64;
        out.push(x);
        out.push(bpr.latency(&e, x).map_err(|err| err.to_string())?);
        out.push(bpr.marginal_cost(&e, x).map_err(|err| err.to_string())?);
    }
    Ok(out)
}

/// Splits `demand` veh/s over two disjoint two-edge routes with the given
/// per-edge parameters. Returns `[flow_1, flow_2, objective, relative_gap,
/// iterations]`.
pub fn route_split(first: (f64, f64), second: (f64, f64), demand: f64) -> Result<Vec<f64>, String> {
    let nodes = vec![
        Node::new(0, NodeKind::Depot, 0.0, 0.0),
        Node::new(1, NodeKind::Intersection, 200.0, 200.0),
        Node::new(2, NodeKind::Intersection, 200.0, -200.0),
        Node::new(3, NodeKind::Depot, 400.0, 0.0),
    ];
    let edges = vec![edge(0, 1, first.0, first.1), edge(1, 3, first.0, first.1), edge(0, 2, second.0, second.1), edge(2, 3, second.0, second.1)];
    let net = RoadNetwork::new(nodes, edges);
    let d = Demand { id: 0, origin: 0, destination: 3, rate: demand };
    let config = SolverConfig { gap_tolerance: 1e-8, ..SolverConfig::default() };
    let sol = solve_system_optimal(&net, &[d], &config).map_err(|e| e.to_string())?;
    Ok(vec![sol.aggregate[0], sol.aggregate[2], sol.objective, sol.relative_gap, sol.iterations as f64])
}

/// Plans one vehicle over `length` meters entering at `entry_speed` and
/// leaving after `duration` seconds at the closest feasible speed to
/// `target_speed`, under the default limits. Returns `[exit_speed, energy,
/// t_0, s_0, v_0, u_0, t_1, ...]` with `samples` points.
pub fn crossing_plan(entry_speed: f64, length: f64, duration: f64, target_speed: f64, samples: usize) -> Result<Vec<f64>, String> {
    if !(length > 0.0 && duration > 0.0 && samples >= 2) {
        return Err("length and duration must be positive, with at least two samples".into());
    }
    let limits = SafetyParams::default();
    let exit_speed = select_exit_speed(target_speed, 0.0, duration, length, entry_speed, &limits).map_err(|e| e.to_string())?;
    let seg = unconstrained_trajectory(State::new(0.0, 0.0, entry_speed), State::new(duration, length, exit_speed))
        .map_err(|e| e.to_string())?;
    let mut out = vec![exit_speed, seg.energy()];
    for k in 0..samples {
        let t = duration * k as f64 / (samples - 1) as f64;
        out.extend([t, seg.position(t), seg.speed(t), seg.input(t)]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = latencyCurve)]
pub fn latency_curve_js(free_flow_time: f64, capacity: f64, max_flow: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    latency_curve(free_flow_time, capacity, max_flow, samples).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = routeSplit)]
pub fn route_split_js(t1: f64, c1: f64, t2: f64, c2: f64, demand: f64) -> Result<Vec<f64>, JsError> {
    route_split((t1, c1), (t2, c2), demand).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = crossingPlan)]
pub fn crossing_plan_js(entry_speed: f64, length: f64, duration: f64, target_speed: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    crossing_plan(entry_speed, length, duration, target_speed, samples).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_starts_at_free_flow() {
        let c = latency_curve(10.0, 0.5, 1.0, 5).unwrap();
        assert_eq!(c.len(), 15);
        assert_eq!(&c[..3], &[0.0, 10.0, 10.0]);
        assert!((c[13] - 10.0 * (1.0 + 0.15 * 16.0)).abs() < 1e-9);
        assert!(c[14] > c[13]);
        assert!(latency_curve(0.0, 0.5, 1.0, 5).is_err());
    }

    #[test]
    fn identical_routes_share_evenly() {
        let s = route_split((10.0, 0.5), (10.0, 0.5), 0.4).unwrap();
        assert!((s[0] - 0.2).abs() < 1e-6 && (s[1] - 0.2).abs() < 1e-6);
        assert!(s[3] <= 1e-8);
        assert!(route_split((10.0, 0.5), (10.0, 0.5), -1.0).is_err());
    }

    #[test]
    fn feasible_target_is_kept() {
        let p = crossing_plan(10.0, 200.0, 20.0, 10.0, 11).unwrap();
        assert_eq!(p[0], 10.0);
        assert!(p[1].abs() < 1e-12);
        assert_eq!(p.len(), 2 + 4 * 11);
        let last = &p[p.len() - 4..];
        assert!((last[0] - 20.0).abs() < 1e-12 && (last[1] - 200.0).abs() < 1e-9);
    }

    #[test]
    fn unreachable_target_is_projected() {
        let p = crossing_plan(10.0, 30.0, 3.0, 20.0, 7).unwrap();
        assert!(p[0] < 20.0);
        assert!(p[2..].chunks(4).all(|c| c[3] <= 3.0 + 1e-9 && c[3] >= -4.0 - 1e-9 && c[2] <= 20.0 + 1e-9));
    }
}
