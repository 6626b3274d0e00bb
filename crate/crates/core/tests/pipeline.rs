use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cavflow::coordination::{
    build_geometry, GeometryConfig, IntersectionCoordinator, Leg, PathId, PlanRequest, SafetyParams, State,
    WaypointSpeedRule,
};
use cavflow::harness::{audit, grid_scenario, run, run_through, single_intersection_scenario, PlannedCrossing, Scenario, Stage};

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

#[test]
fn bundled_scenarios_match_their_generators() {
    assert_eq!(Scenario::load(&bundled("grid.toml")).unwrap(), grid_scenario(2024));
    assert_eq!(Scenario::load(&bundled("single_intersection.toml")).unwrap(), single_intersection_scenario());
}

#[test]
fn grid_run_is_consistent_end_to_end() {
    let scenario = grid_scenario(2024);
    let out = run(&scenario).unwrap();
    let r = &out.report;
    assert!(r.flow.converged && r.flow.relative_gap <= 1e-4);
    assert!(r.flow.objective < r.flow.baseline_objective);
    assert!(r.schedule_audit.findings.is_empty());
    assert!(r.audit.findings.is_empty(), "{:?}", r.audit.findings);
    assert_eq!(r.vehicles_completed + r.dropped.len(), r.vehicles_spawned);

    let horizon = scenario.params.horizon;
    let mut per_edge: BTreeMap<usize, usize> = BTreeMap::new();
    for v in &out.schedule.vehicles {
        *per_edge.entry(v.departure_edge()).or_default() += 1;
    }
    for (&edge, &released) in &per_edge {
        let x = out.flow.solution.aggregate[edge];
        assert_eq!(released, (x * horizon + 1e-9).floor() as usize + 1, "edge {edge}");
    }
    for &(demand, index) in &out.schedule.idle_routes {
        assert!(!out.schedule.vehicles.iter().any(|v| v.demand == demand && v.route == index));
    }
    for d in &out.flow.demands {
        let routes = out.routes.route_count(d.id) as f64;
        let spawned = r.spawned[&d.id] as f64;
        assert!((spawned - d.rate * horizon).abs() <= routes + 1.0, "demand {}", d.id);
    }
    for v in &out.schedule.vehicles {
        let mut last = v.departure_time;
        for c in &v.crossings {
            assert!(c.entry_time >= last && c.exit_time > c.entry_time);
            last = c.exit_time;
        }
        assert!(v.arrival_time >= last);
    }
}

#[test]
fn single_intersection_plans_every_vehicle_at_its_target_speed() {
    let out = run(&single_intersection_scenario()).unwrap();
    assert_eq!(out.report.vehicles_spawned, 100);
    assert!(out.report.dropped.is_empty());
    assert!(out.report.audit.findings.is_empty());
    assert!(out.report.audit.max_exit_residual <= 1e-6);
    for c in &out.report.crossings {
        if c.v_bar_feasible {
            assert_eq!(c.exit_speed, c.v_bar);
        }
    }
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn repeated_runs_write_identical_artifacts() {
    let scenario = grid_scenario(2024);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_through(&scenario, Stage::Audit, Some(a.path())).unwrap();
    run_through(&scenario, Stage::Audit, Some(b.path())).unwrap();
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    assert_eq!(fa.len(), 8);
    assert_eq!(fa, fb);
}

#[test]
fn different_seeds_draw_different_demands() {
    assert_ne!(grid_scenario(1).demands().unwrap(), grid_scenario(2).demands().unwrap());
    assert_eq!(grid_scenario(3).demands().unwrap(), grid_scenario(3).demands().unwrap());
}

#[test]
fn three_vehicle_chain_keeps_rear_gap() {
    let geometry = build_geometry(&GeometryConfig::default()).unwrap();
    let params = SafetyParams::default();
    let path = PathId::new(Leg::West, Leg::East);
    let length = geometry.path(path).length;
    let mut coordinator = IntersectionCoordinator::new(geometry.clone(), params, WaypointSpeedRule::MinimumEnergy);
    let requests = [
        PlanRequest { vehicle: 0, path, entry: State::new(0.0, 0.0, 8.0), exit_time: 40.0, length },
        PlanRequest { vehicle: 1, path, entry: State::new(2.0, 0.0, 12.0), exit_time: 41.6, length },
        PlanRequest { vehicle: 2, path, entry: State::new(4.0, 0.0, 12.0), exit_time: 43.2, length },
    ];
    let waypoints: Vec<usize> = requests.iter().map(|req| coordinator.plan(req, 10.0).unwrap().waypoints).collect();
    assert_eq!(waypoints[0], 0);
    assert!(waypoints[1] >= 1, "the first follower would close to within the safe gap");
    let plans = coordinator.into_plans();
    for pair in plans.windows(2) {
        let (lead, follow) = (&pair[0], &pair[1]);
        let mut t = follow.entry_time();
        while t <= lead.exit_time().min(follow.exit_time()) {
            assert!(lead.position(t) - follow.position(t) >= params.delta - 1e-6, "gap at {t}");
            t += 0.001;
        }
        assert!((follow.position(follow.exit_time()) - length).abs() < 1e-6);
    }
    let crossings: Vec<PlannedCrossing> = plans
        .iter()
        .zip(&requests)
        .map(|(p, r)| PlannedCrossing { intersection: 0, assigned_exit_time: r.exit_time, plan: p.clone() })
        .collect();
    let report = audit(&crossings, &BTreeMap::from([(0, geometry)]), &params, 0.05);
    assert!(report.findings.is_empty(), "{:?}", report.findings);
    assert!(report.min_rear_gap.unwrap() >= params.delta - 1e-9);
}
