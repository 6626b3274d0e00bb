//! One pass/fail line per acceptance criterion. Exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use cavflow::coordination::{unconstrained_trajectory, State};
use cavflow::flow::{conservation_residual, solve_system_optimal, SolverConfig};
use cavflow::harness::run::{flow_stage, route_stage, schedule_stage};
use cavflow::harness::{audit_schedule, grid_scenario, run, run_through, single_intersection_scenario, Stage};
use cavflow::routes::recover_routes;
use common::{grid_search_split, od_demand, perturbed_energy, sampled_feasible, transcribed_energy, two_path_network, Transfer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn two_path_splits() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let instances = [((10.0, 0.5), (10.0, 0.5), 0.4, 1e-6), ((10.0, 0.5), (20.0, 0.5), 0.4, 1e-3), ((10.0, 0.5), (20.0, 0.5), 1.2, 1e-3)];
    for (first, second, alpha, tol) in instances {
        let oracle = grid_search_split(first, second, alpha, 1e-5);
        let start = Instant::now();
        let net = two_path_network(first, second);
        let sol = solve_system_optimal(&net, &[od_demand(alpha)], &SolverConfig::default()).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let err = (sol.aggregate[0] - oracle).abs();
        ok &= err <= tol && secs < 1.0;
        lines.push(format!("t0 {}/{} alpha {alpha}: split {:.6} oracle {oracle:.5} err {err:.1e} in {secs:.3}s", first.0, second.0, sol.aggregate[0]));
    }
    check(ok, lines.join("; "))
}

fn grid_conservation() -> Outcome {
    let scenario = grid_scenario(2024);
    let net = scenario.network();
    let demands = scenario.demands().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let sol = solve_system_optimal(&net, &demands, &scenario.params.solver).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = demands
        .iter()
        .enumerate()
        .map(|(m, d)| conservation_residual(&net, d, &sol.per_commodity[m]) / d.rate)
        .fold(0.0, f64::max);
    check(
        worst <= 1e-6 && sol.relative_gap <= 1e-4 && secs < 30.0 && net.edges().len() == 96 && demands.len() == 30,
        format!(
            "{} edges, {} demands: worst residual/alpha {worst:.1e}, relative gap {:.2e} after {} iterations, {secs:.2}s",
            net.edges().len(),
            demands.len(),
            sol.relative_gap,
            sol.iterations
        ),
    )
}

fn decomposition() -> Outcome {
    let scenario = grid_scenario(2024);
    let net = scenario.network();
    let demands = scenario.demands().map_err(|e| e.to_string())?;
    let sol = solve_system_optimal(&net, &demands, &scenario.params.solver).map_err(|e| e.to_string())?;
    let routes = recover_routes(&net, &sol, &demands).map_err(|e| e.to_string())?;
    let (mut edge_err, mut total_err, mut count_ok) = (0.0f64, 0.0f64, true);
    for (m, d) in demands.iter().enumerate() {
        let back = routes.edge_flows(d.id, net.edges().len());
        for (x, y) in back.iter().zip(&sol.per_commodity[m]) {
            edge_err = edge_err.max((x - y).abs());
        }
        let total: f64 = routes.for_demand(d.id).map(|r| r.flow).sum();
        total_err = total_err.max((total - d.rate).abs());
        let support = sol.per_commodity[m].iter().filter(|&&x| x > 0.0).count();
        count_ok &= routes.route_count(d.id) <= support;
    }
    check(
        edge_err <= 1e-6 && total_err <= 1e-6 && count_ok,
        format!("{} routes: edge error {edge_err:.1e}, rate error {total_err:.1e}, route counts within support: {count_ok}", routes.routes.len()),
    )
}

fn schedule_law() -> Outcome {
    let scenario = grid_scenario(2024);
    let flow = flow_stage(&scenario).map_err(|e| e.to_string())?;
    let routes = route_stage(&flow).map_err(|e| e.to_string())?;
    let schedule = schedule_stage(&scenario, &flow, &routes).map_err(|e| e.to_string())?;
    let report = audit_schedule(&flow.network, &flow.solution.aggregate, &schedule);
    check(
        report.findings.is_empty() && report.exit_pairs_checked > 0 && report.departure_edges_checked > 0,
        format!(
            "{} vehicles: {} exit pairs and {} departure edges audited, {} findings, min exit slack {:.1e}",
            schedule.vehicles.len(),
            report.exit_pairs_checked,
            report.departure_edges_checked,
            report.findings.len(),
            report.min_exit_slack.unwrap_or(f64::NAN)
        ),
    )
}

fn trajectory_optimality() -> Outcome {
    let limits = (1.0, 20.0, -4.0, 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let (mut worst_ratio, mut beaten, mut sets) = (0.0f64, 0usize, 0usize);
    while sets < 100 {
        let t0 = rng.random_range(0.0..200.0);
        let duration = rng.random_range(4.0..40.0);
        let v0 = rng.random_range(2.0..18.0);
        let vf = rng.random_range(2.0..18.0);
        let mean = rng.random_range(0.7..1.3) * 0.5 * (v0 + vf);
        let bc = Transfer { t0, tf: t0 + duration, s0: 0.0, v0, sf: mean * duration, vf };
        if !sampled_feasible(&bc, limits, 1e-3) {
            continue;
        }
        sets += 1;
        let seg = unconstrained_trajectory(State::new(bc.t0, 0.0, v0), State::new(bc.tf, bc.sf, vf)).map_err(|e| e.to_string())?;
        let energy = seg.energy();
        let oracle = transcribed_energy(&bc, 0.05);
        worst_ratio = worst_ratio.max((energy - oracle).abs() / oracle.max(1e-12));
        for _ in 0..200 {
            let k = rng.random_range(1..8);
            let amplitude = rng.random_range(0.05..3.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            if perturbed_energy(&bc, k, amplitude) < energy * (1.0 - 1e-9) {
                beaten += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_ratio <= 0.01 && beaten == 0 && secs < 60.0,
        format!("{sets} sets: worst relative deviation from transcription {worst_ratio:.2e}, {beaten} of 20000 perturbations lower, {secs:.2}s"),
    )
}

fn single_intersection_safety() -> Outcome {
    let scenario = single_intersection_scenario();
    let start = Instant::now();
    let out = run(&scenario).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let r = &out.report;
    let feasible = r.crossings.iter().filter(|c| c.v_bar_feasible).count();
    let exact = r.crossings.iter().filter(|c| c.v_bar_feasible && c.exit_speed == c.v_bar).count();
    check(
        r.vehicles_spawned == 100
            && r.dropped.is_empty()
            && r.audit.findings.is_empty()
            && r.audit.max_exit_residual <= 1e-6
            && feasible == exact
            && scenario.params.audit_dt == 0.05
            && secs < 30.0,
        format!(
            "{} vehicles, {} dropped, {} audit findings at dt {}, exit residual {:.1e} m, v_bar returned {exact}/{feasible} feasible, min headway {:.3}s, min rear gap {:.3}m, {secs:.2}s",
            r.vehicles_spawned,
            r.dropped.len(),
            r.audit.findings.len(),
            scenario.params.audit_dt,
            r.audit.max_exit_residual,
            r.audit.min_lateral_headway.unwrap_or(f64::NAN),
            r.audit.min_rear_gap.unwrap_or(f64::NAN)
        ),
    )
}

fn beats_all_or_nothing() -> Outcome {
    let scenario = grid_scenario(2024);
    let flow = flow_stage(&scenario).map_err(|e| e.to_string())?;
    let s = flow.summary();
    check(
        s.objective < s.baseline_objective,
        format!("J {:.3} vs all-or-nothing {:.3}; max utilization {:.3} vs {:.3}", s.objective, s.baseline_objective, s.max_utilization, s.baseline_max_utilization),
    )
}

fn read_all(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let bytes = fs::read(&path).map_err(|e| e.to_string())?;
        out.insert(path.file_name().unwrap_or_default().to_string_lossy().into_owned(), bytes);
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let scenario = grid_scenario(2024);
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_through(&scenario, Stage::Audit, Some(a.path())).map_err(|(e, _)| e.to_string())?;
    run_through(&scenario, Stage::Audit, Some(b.path())).map_err(|(e, _)| e.to_string())?;
    let (fa, fb) = (read_all(a.path())?, read_all(b.path())?);
    let bytes: usize = fa.values().map(Vec::len).sum();
    check(!fa.is_empty() && fa == fb, format!("{} artifacts, {bytes} bytes, identical: {}", fa.len(), fa == fb))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "two-path split vs grid search", two_path_splits),
        (2, "grid conservation and gap", grid_conservation),
        (3, "route decomposition", decomposition),
        (4, "schedule law audit", schedule_law),
        (5, "trajectory optimality", trajectory_optimality),
        (6, "single-intersection safety", single_intersection_safety),
        (7, "system optimum beats all-or-nothing", beats_all_or_nothing),
        (8, "deterministic artifacts", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, f) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} PASS ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL ({name}): {detail}");
            }
        }
    }
    println!("acceptance: {} of 8 criteria pass", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
