//! Independent checks of a finished run.
//!
//! Trajectories are re-sampled on a global time grid (plus their knot times)
//! and every constraint is re-derived from those samples. Nothing here calls
//! into the planner's own checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coordination::geometry::shared_prefix;
use crate::coordination::{IntersectionGeometry, SafetyParams, TrajectoryPlan};
use crate::network::{EdgeIndex, NodeId, RoadNetwork};
use crate::schedule::Schedule;

/// Slack allowed on sampled safety margins.
pub const SAFETY_TOL: f64 = 1e-6;
/// Largest accepted distance from the path end at the assigned exit time.
pub const EXIT_TOL: f64 = 1e-6;
/// Slack allowed on scheduled headways and periods.
pub const SCHEDULE_TOL: f64 = 1e-9;

/// One planned crossing as handed to the audit.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedCrossing {
    pub intersection: NodeId,
    pub assigned_exit_time: f64,
    pub plan: TrajectoryPlan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    RearEnd { intersection: NodeId, leader: usize, follower: usize, time: f64, gap: f64 },
    Lateral { intersection: NodeId, first: usize, second: usize, headway: f64 },
    ExitMiss { intersection: NodeId, vehicle: usize, residual: f64 },
    Limit { intersection: NodeId, vehicle: usize, time: f64, speed: f64, input: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub findings: Vec<Finding>,
    pub min_rear_gap: Option<f64>,
    pub min_lateral_headway: Option<f64>,
    pub max_exit_residual: f64,
    pub pairs_checked: usize,
}

/// Time-ordered samples of one trajectory.
struct Samples {
    t: Vec<f64>,
    s: Vec<f64>,
    v: Vec<f64>,
    u: Vec<f64>,
}

impl Samples {
    fn new(plan: &TrajectoryPlan, dt: f64) -> Self {
        let (t0, tf) = (plan.entry_time(), plan.exit_time());
        let mut t: Vec<f64> = ((t0 / dt).ceil() as i64..=(tf / dt).floor() as i64).map(|k| k as f64 * dt).collect();
        t.extend(plan.knot_times());
        t.retain(|&x| x >= t0 && x <= tf);
        t.sort_by(f64::total_cmp);
        t.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let s = t.iter().map(|&x| plan.position(x)).collect();
        let v = t.iter().map(|&x| plan.speed(x)).collect();
        let u = t.iter().map(|&x| plan.input(x)).collect();
        Samples { t, s, v, u }
    }

    fn start(&self) -> f64 {
        self.t[0]
    }

    fn end(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    /// Cubic Hermite interpolation of position on sample interval `i`.
    fn hermite(&self, i: usize, t: f64) -> f64 {
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let x = (t - t0) / h;
        let (h00, h10, h01, h11) = (
            2.0 * x.powi(3) - 3.0 * x * x + 1.0,
            x.powi(3) - 2.0 * x * x + x,
            -2.0 * x.powi(3) + 3.0 * x * x,
            x.powi(3) - x * x,
        );
        h00 * self.s[i] + h10 * h * self.v[i] + h01 * self.s[i + 1] + h11 * h * self.v[i + 1]
    }

    fn position(&self, t: f64) -> f64 {
        let i = self.t.partition_point(|&x| x <= t).clamp(1, self.t.len() - 1) - 1;
        if self.t.len() == 1 {
            return self.s[0];
        }
        self.hermite(i, t)
    }

    /// First time position `x` is reached.
    fn arrival(&self, x: f64) -> Option<f64> {
        let i = self.s.windows(2).position(|w| w[0] <= x && x <= w[1])?;
        let (mut lo, mut hi) = (self.t[i], self.t[i + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.hermite(i, mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// Re-checks limits, exit adherence, rear-end spacing on shared entry lanes
/// and headway at every conflict point.
pub fn audit(
    crossings: &[PlannedCrossing],
    geometries: &BTreeMap<NodeId, IntersectionGeometry>,
    params: &SafetyParams,
    dt: f64,
) -> AuditReport {
    let mut report = AuditReport::default();
    let mut by_node: BTreeMap<NodeId, Vec<(&PlannedCrossing, Samples)>> = BTreeMap::new();
    for c in crossings {
        by_node.entry(c.intersection).or_default().push((c, Samples::new(&c.plan, dt)));
    }
    for (&node, list) in by_node.iter_mut() {
        let Some(g) = geometries.get(&node) else { continue };
        list.sort_by(|a, b| a.0.plan.entry_time().total_cmp(&b.0.plan.entry_time()).then(a.0.plan.vehicle.cmp(&b.0.plan.vehicle)));
        for (c, smp) in list.iter() {
            check_single(node, c, smp, g, params, &mut report);
        }
        for i in 0..list.len() {
            for j in (i + 1)..list.len() {
                let (a, sa) = (&list[i].0.plan, &list[i].1);
                let (b, sb) = (&list[j].0.plan, &list[j].1);
                if b.entry_time() > a.exit_time() + params.tau {
                    break;
                }
                report.pairs_checked += 1;
                if a.path.entry == b.path.entry {
                    rear_end(node, a, sa, b, sb, g, params, dt, &mut report);
                }
                if a.path != b.path {
                    lateral(node, a, sa, b, sb, g, params, &mut report);
                }
            }
        }
    }
    report
}

fn check_single(
    node: NodeId,
    c: &PlannedCrossing,
    smp: &Samples,
    g: &IntersectionGeometry,
    p: &SafetyParams,
    report: &mut AuditReport,
) {
    let plan = &c.plan;
    let length = g.path(plan.path).length;
    let residual = (plan.position(c.assigned_exit_time) - length).abs();
    report.max_exit_residual = report.max_exit_residual.max(residual);
    if residual > EXIT_TOL || (plan.exit_time() - c.assigned_exit_time).abs() > 1e-9 {
        report.findings.push(Finding::ExitMiss { intersection: node, vehicle: plan.vehicle, residual });
    }
    for k in 0..smp.t.len() {
        let (v, u) = (smp.v[k], smp.u[k]);
        let bad = v < p.v_min - SAFETY_TOL || v > p.v_max + SAFETY_TOL || u < p.u_min - SAFETY_TOL || u > p.u_max + SAFETY_TOL;
        if bad {
            report.findings.push(Finding::Limit { intersection: node, vehicle: plan.vehicle, time: smp.t[k], speed: v, input: u });
            break;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn rear_end(
    node: NodeId,
    lead: &TrajectoryPlan,
    sl: &Samples,
    follow: &TrajectoryPlan,
    sf: &Samples,
    g: &IntersectionGeometry,
    p: &SafetyParams,
    dt: f64,
    report: &mut AuditReport,
) {
    let prefix = shared_prefix(g.path(lead.path), g.path(follow.path));
    let (lo, hi) = (sl.start().max(sf.start()), sl.end().min(sf.end()));
    if hi < lo {
        return;
    }
    let mut worst: Option<(f64, f64)> = None;
    let first = (lo / dt).ceil() as i64;
    let last = (hi / dt).floor() as i64;
    let mut times: Vec<f64> = (first..=last).map(|k| k as f64 * dt).collect();
    times.push(lo);
    times.push(hi);
    for t in times {
        let (a, b) = (sl.position(t), sf.position(t));
        if a > prefix || b > prefix {
            continue;
        }
        let gap = a - b;
        if worst.is_none_or(|w| gap < w.1) {
            worst = Some((t, gap));
        }
    }
    if let Some((time, gap)) = worst {
        report.min_rear_gap = Some(report.min_rear_gap.map_or(gap, |m: f64| m.min(gap)));
        if gap < p.delta - SAFETY_TOL {
            report.findings.push(Finding::RearEnd { intersection: node, leader: lead.vehicle, follower: follow.vehicle, time, gap });
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn lateral(
    node: NodeId,
    a: &TrajectoryPlan,
    sa: &Samples,
    b: &TrajectoryPlan,
    sb: &Samples,
    g: &IntersectionGeometry,
    p: &SafetyParams,
    report: &mut AuditReport,
) {
    for c in &g.conflicts {
        let (pa, pb) = if c.a == a.path && c.b == b.path {
            (c.s_a, c.s_b)
        } else if c.a == b.path && c.b == a.path {
            (c.s_b, c.s_a)
        } else {
            continue;
        };
        let (Some(ta), Some(tb)) = (sa.arrival(pa), sb.arrival(pb)) else { continue };
        let headway = (ta - tb).abs();
        report.min_lateral_headway = Some(report.min_lateral_headway.map_or(headway, |m: f64| m.min(headway)));
        if headway < p.tau - SAFETY_TOL {
            report.findings.push(Finding::Lateral { intersection: node, first: a.vehicle, second: b.vehicle, headway });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleFinding {
    /// Two consecutive exits onto `edge` closer than one period.
    ExitHeadway { edge: EdgeIndex, first: usize, second: usize, spacing: f64, period: f64 },
    /// A departure off the uniform grid `k / x` of its edge.
    Departure { edge: EdgeIndex, vehicle: usize, time: f64, expected: f64 },
    /// Exit earlier than free travel over both edges allows.
    TooFast { vehicle: usize, intersection: NodeId, exit_time: f64, earliest: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleAudit {
    pub findings: Vec<ScheduleFinding>,
    pub exit_pairs_checked: usize,
    pub departure_edges_checked: usize,
    /// Smallest `spacing - period` over all consecutive exit pairs.
    pub min_exit_slack: Option<f64>,
}

/// Re-derives the exit headway law and the uniform departure period from the
/// crossing and departure tables.
pub fn audit_schedule(network: &RoadNetwork, flows: &[f64], schedule: &Schedule) -> ScheduleAudit {
    let mut out = ScheduleAudit::default();
    let mut exits: BTreeMap<EdgeIndex, Vec<(f64, usize)>> = BTreeMap::new();
    let mut departures: BTreeMap<EdgeIndex, Vec<(f64, usize)>> = BTreeMap::new();
    for v in &schedule.vehicles {
        departures.entry(v.departure_edge()).or_default().push((v.departure_time, v.vehicle));
        for c in &v.crossings {
            exits.entry(c.exit_edge).or_default().push((c.exit_time, v.vehicle));
            let lat = |e: EdgeIndex| network.latency(e, flows[e]).unwrap_or(f64::NAN);
            let earliest = c.entry_time + lat(c.entry_edge) + lat(c.exit_edge);
            if c.exit_time < earliest - SCHEDULE_TOL {
                out.findings.push(ScheduleFinding::TooFast {
                    vehicle: v.vehicle,
                    intersection: c.intersection,
                    exit_time: c.exit_time,
                    earliest,
                });
            }
        }
    }
    for (edge, mut list) in exits {
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let period = 1.0 / flows[edge];
        for w in list.windows(2) {
            out.exit_pairs_checked += 1;
            let spacing = w[1].0 - w[0].0;
            let slack = spacing - period;
            out.min_exit_slack = Some(out.min_exit_slack.map_or(slack, |m: f64| m.min(slack)));
            if slack < -SCHEDULE_TOL {
                out.findings.push(ScheduleFinding::ExitHeadway { edge, first: w[0].1, second: w[1].1, spacing, period });
            }
        }
    }
    for (edge, mut list) in departures {
        out.departure_edges_checked += 1;
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let x = flows[edge];
        for (k, &(time, vehicle)) in list.iter().enumerate() {
            let expected = k as f64 / x;
            if (time - expected).abs() > SCHEDULE_TOL {
                out.findings.push(ScheduleFinding::Departure { edge, vehicle, time, expected });
            }
        }
    }
    out
}
