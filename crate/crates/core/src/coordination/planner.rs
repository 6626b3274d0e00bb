//! First-in-first-out trajectory planning at one intersection.
//!
//! Each vehicle first picks the exit speed closest to the recommended one,
//! then tries a single cubic. Lateral headway violations are repaired with a
//! waypoint on the boundary of the violated headway, rear-end violations with
//! a waypoint that trails the vehicle ahead. Committed plans never change.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cubic::{unconstrained_trajectory, CubicError, SafetyParams, State};
use super::geometry::{IntersectionGeometry, PathId};
use super::plan::TrajectoryPlan;

const LIMIT_TOL: f64 = 1e-9;
const HEADWAY_TOL: f64 = 1e-9;
const GAP_TOL: f64 = 1e-9;

/// How the speed at a free waypoint is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaypointSpeedRule {
    /// Least summed energy of the pieces, over the speeds that keep every piece
    /// within limits.
    #[default]
    MinimumEnergy,
    /// Mean of entry and exit speed.
    AverageEntryExit,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Cubic(#[from] CubicError),
    #[error("no feasible exit speed")]
    NoFeasibleExitSpeed,
    #[error("unschedulable at assigned exit time {exit_time}")]
    Unschedulable { exit_time: f64 },
    #[error("conflict position {position} outside the plan of vehicle {vehicle}")]
    ConflictOutsidePlan { vehicle: usize, position: f64 },
    #[error("vehicle {vehicle} enters before already committed traffic")]
    OutOfOrder { vehicle: usize },
}

/// What a vehicle must do: enter at `entry` (position zero) and leave at
/// `exit_time` after `length` meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanRequest {
    pub vehicle: usize,
    pub path: PathId,
    pub entry: State,
    pub exit_time: f64,
    pub length: f64,
}

impl PlanRequest {
    fn exit(&self, speed: f64) -> State {
        State::new(self.exit_time, self.length, speed)
    }
}

/// Everything a plan is checked against.
#[derive(Clone, Copy, Debug)]
pub struct PlanContext<'a> {
    pub geometry: &'a IntersectionGeometry,
    pub committed: &'a [TrajectoryPlan],
    pub params: &'a SafetyParams,
    pub rule: WaypointSpeedRule,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LateralViolation {
    pub conflict: usize,
    pub other_vehicle: usize,
    /// Conflict position on the planned vehicle's path.
    pub position: f64,
    pub own_time: f64,
    pub other_time: f64,
}

impl LateralViolation {
    pub fn gap(&self) -> f64 {
        (self.own_time - self.other_time).abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RearEndViolation {
    pub other_vehicle: usize,
    pub time: f64,
    pub gap: f64,
}

/// Per-vehicle outcome of exit-speed selection and waypoint insertion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub vehicle: usize,
    pub v_bar: f64,
    pub exit_speed: f64,
    /// Whether the single cubic ending at `v_bar` respects the limits.
    pub v_bar_feasible: bool,
    pub waypoints: usize,
}

/// Minimizer of a convex function on `[lo, hi]` by ternary search.
fn convex_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    for _ in 0..200 {
        if hi - lo < 1e-12 {
            break;
        }
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Boundary of the sublevel set `{f <= 0}` between a feasible and an
/// infeasible point; the returned point is feasible.
fn feasible_boundary(f: impl Fn(f64) -> f64, mut feasible: f64, mut infeasible: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (feasible + infeasible);
        if mid == feasible || mid == infeasible {
            break;
        }
        if f(mid) <= LIMIT_TOL {
            feasible = mid;
        } else {
            infeasible = mid;
        }
    }
    feasible
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo < 1e-10 {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Exit speed closest to `v_bar` whose single cubic respects the speed and
/// input limits. Returns `v_bar` itself whenever that cubic is feasible.
pub fn select_exit_speed(
    v_bar: f64,
    t0: f64,
    tf: f64,
    sf: f64,
    v0: f64,
    limits: &SafetyParams,
) -> Result<f64, PlanError> {
    let start = State::new(t0, 0.0, v0);
    unconstrained_trajectory(start, State::new(tf, sf, v0))?;
    let excess = |vf: f64| {
        unconstrained_trajectory(start, State::new(tf, sf, vf)).map_or(f64::INFINITY, |c| c.limit_excess(limits))
    };
    let target = v_bar.clamp(limits.v_min, limits.v_max);
    if excess(target) <= LIMIT_TOL {
        return Ok(target);
    }
    let (best, lowest) = convex_min(excess, limits.v_min, limits.v_max);
    if lowest > LIMIT_TOL {
        return Err(PlanError::NoFeasibleExitSpeed);
    }
    Ok(feasible_boundary(excess, best, target))
}

/// Pieces a plan through `waypoints`, choosing the speed at index `free` by
/// `rule`. `None` when the knots are out of order or no speed keeps every
/// piece within limits.
fn plan_with_free_speed(
    ctx: &PlanContext,
    req: &PlanRequest,
    exit_speed: f64,
    mut waypoints: Vec<State>,
    free: Option<usize>,
) -> Option<TrajectoryPlan> {
    let exit = req.exit(exit_speed);
    let mut prev = req.entry;
    for w in &waypoints {
        if !(w.time > prev.time && w.position > prev.position) {
            return None;
        }
        prev = *w;
    }
    if !(exit.time > prev.time && exit.position > prev.position) {
        return None;
    }
    let build = |ws: &[State]| TrajectoryPlan::through(req.vehicle, req.path, req.entry, ws, exit).ok();
    let Some(k) = free else {
        return build(&waypoints).filter(|p| p.within_limits(ctx.params));
    };
    let p = ctx.params;
    let with_speed = |v: f64| {
        let mut ws = waypoints.clone();
        ws[k].speed = v;
        build(&ws)
    };
    let speed = match ctx.rule {
        WaypointSpeedRule::AverageEntryExit => 0.5 * (req.entry.speed + exit_speed),
        WaypointSpeedRule::MinimumEnergy => {
            let excess = |v: f64| with_speed(v).map_or(f64::INFINITY, |pl| pl.limit_excess(p));
            let (best, lowest) = convex_min(excess, p.v_min, p.v_max);
            if lowest > LIMIT_TOL {
                return None;
            }
            let lo = if excess(p.v_min) <= LIMIT_TOL { p.v_min } else { feasible_boundary(excess, best, p.v_min) };
            let hi = if excess(p.v_max) <= LIMIT_TOL { p.v_max } else { feasible_boundary(excess, best, p.v_max) };
            if hi - lo < 1e-9 {
                0.5 * (lo + hi)
            } else {
                golden_min(|v| with_speed(v).map_or(f64::INFINITY, |pl| pl.energy()), lo, hi)
            }
        }
    };
    waypoints[k].speed = speed;
    build(&waypoints).filter(|pl| pl.within_limits(p))
}

/// Committed plans whose conflict arrivals could fall within `tau` of `plan`.
fn overlapping<'a>(ctx: &'a PlanContext, plan: &'a TrajectoryPlan) -> impl Iterator<Item = &'a TrajectoryPlan> {
    let (lo, hi) = (plan.entry_time() - ctx.params.tau, plan.exit_time() + ctx.params.tau);
    ctx.committed
        .iter()
        .filter(move |q| q.vehicle != plan.vehicle && q.exit_time() >= lo && q.entry_time() <= hi)
}

/// Conflict points where `plan` and a committed plan arrive less than `tau`
/// apart, ordered by conflict position on `plan`'s path.
pub fn lateral_conflicts(
    plan: &TrajectoryPlan,
    committed: &[TrajectoryPlan],
    geometry: &IntersectionGeometry,
    params: &SafetyParams,
) -> Result<Vec<LateralViolation>, PlanError> {
    let ctx = PlanContext { geometry, committed, params, rule: WaypointSpeedRule::default() };
    let views = geometry.conflicts_on(plan.path);
    let mut out = Vec::new();
    for view in &views {
        for q in overlapping(&ctx, plan).filter(|q| q.path == view.other) {
            let own_time = plan
                .arrival_time(view.own)
                .ok_or(PlanError::ConflictOutsidePlan { vehicle: plan.vehicle, position: view.own })?;
            let other_time = q
                .arrival_time(view.other_position)
                .ok_or(PlanError::ConflictOutsidePlan { vehicle: q.vehicle, position: view.other_position })?;
            if (own_time - other_time).abs() < params.tau - HEADWAY_TOL {
                out.push(LateralViolation {
                    conflict: view.index,
                    other_vehicle: q.vehicle,
                    position: view.own,
                    own_time,
                    other_time,
                });
            }
        }
    }
    Ok(out)
}

/// Exact minimum of `lead(t) - follow(t)` over `[lo, hi]`.
pub fn min_gap(lead: &TrajectoryPlan, follow: &TrajectoryPlan, lo: f64, hi: f64) -> (f64, f64) {
    let mut cuts: Vec<f64> = vec![lo, hi];
    cuts.extend(lead.knot_times().into_iter().chain(follow.knot_times()).filter(|&t| t > lo && t < hi));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut best = (lo, f64::INFINITY);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let (sl, sf) = (lead.segment_at(mid), follow.segment_at(mid));
        let gap = |t: f64| sl.position(t) - sf.position(t);
        let mut candidates = vec![a, b];
        // the gap's derivative is a quadratic in r = t - a
        let h = b - a;
        let d = |t: f64| sl.speed(t) - sf.speed(t);
        let (d0, d1, d2) = (d(a), d(mid), d(b));
        let qa = 2.0 * (d2 - 2.0 * d1 + d0) / (h * h);
        let qb = (4.0 * d1 - 3.0 * d0 - d2) / h;
        if qa.abs() > 1e-14 {
            let disc = qb * qb - 4.0 * qa * d0;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                candidates.push(a + (-qb + sq) / (2.0 * qa));
                candidates.push(a + (-qb - sq) / (2.0 * qa));
            }
        } else if qb.abs() > 1e-14 {
            candidates.push(a - d0 / qb);
        }
        for t in candidates.into_iter().filter(|&t| t >= a && t <= b) {
            let g = gap(t);
            if g < best.1 {
                best = (t, g);
            }
        }
    }
    best
}

/// Pairs on a shared entry lane whose spacing drops below `delta` while both
/// vehicles are still on that lane. One entry per offending leader.
pub fn rear_end_violations(
    plan: &TrajectoryPlan,
    committed: &[TrajectoryPlan],
    geometry: &IntersectionGeometry,
    params: &SafetyParams,
) -> Vec<RearEndViolation> {
    let mut out = Vec::new();
    for q in committed.iter().filter(|q| q.vehicle != plan.vehicle) {
        if q.path.entry != plan.path.entry {
            continue;
        }
        let prefix = geometry.shared_prefix(plan.path, q.path);
        let (lead, follow) = if q.entry_time() <= plan.entry_time() { (q, plan) } else { (plan, q) };
        let leave = |p: &TrajectoryPlan| p.arrival_time(prefix.min(p.length())).unwrap_or(p.exit_time());
        let lo = follow.entry_time();
        let hi = leave(lead).min(leave(follow));
        if hi <= lo {
            continue;
        }
        let (time, gap) = min_gap(lead, follow, lo, hi);
        if gap < params.delta - GAP_TOL {
            out.push(RearEndViolation { other_vehicle: q.vehicle, time, gap });
        }
    }
    out
}

/// Pass-after then pass-before boundary, per violation in position order.
/// The speed is left free (NaN).
fn lateral_candidates(violations: &[LateralViolation], tau: f64) -> Vec<State> {
    let mut out: Vec<State> = Vec::new();
    for v in violations {
        for t in [v.other_time + tau, v.other_time - tau] {
            let w = State::new(t, v.position, f64::NAN);
            if !out.iter().any(|o| o.time == w.time && o.position == w.position) {
                out.push(w);
            }
        }
    }
    out
}

/// The violation caused by the vehicle directly ahead, which entered last.
fn closest_leader<'v>(ctx: &PlanContext, violations: &'v [RearEndViolation]) -> Option<&'v RearEndViolation> {
    let entry = |v: &RearEndViolation| {
        ctx.committed.iter().find(|q| q.vehicle == v.other_vehicle).map_or(f64::NEG_INFINITY, |q| q.entry_time())
    };
    violations.iter().max_by(|a, b| entry(a).total_cmp(&entry(b)))
}

/// Step of the scan along the leader's trajectory, seconds.
const TRAIL_SCAN_STEP: f64 = 1.0;

/// States `delta` behind the leader at the leader's speed: at the leader's own
/// waypoints, at the worst spacing, when the leader leaves the shared lane,
/// then along a backwards scan of the shared stretch.
fn rear_candidates(ctx: &PlanContext, req: &PlanRequest, violation: &RearEndViolation) -> Vec<State> {
    let Some(lead) = ctx.committed.iter().find(|q| q.vehicle == violation.other_vehicle) else {
        return Vec::new();
    };
    let delta = ctx.params.delta;
    let prefix = ctx.geometry.shared_prefix(req.path, lead.path).min(lead.length());
    let trail = |t: f64| State::new(t, lead.position(t) - delta, lead.speed(t));
    let mut out: Vec<State> = lead
        .waypoints
        .iter()
        .filter(|w| w.position - delta <= prefix)
        .map(|w| State::new(w.time, w.position - delta, w.speed))
        .collect();
    out.push(trail(violation.time));
    let leave = lead.arrival_time(prefix).unwrap_or(lead.exit_time());
    out.push(trail(leave));
    let lo = req.entry.time.max(lead.entry_time());
    let mut t = leave - TRAIL_SCAN_STEP;
    while t > lo {
        out.push(trail(t));
        t -= TRAIL_SCAN_STEP;
    }
    out.retain(|w| w.position > 0.0 && w.position < req.length && w.time > req.entry.time && w.time < req.exit_time);
    let mut unique: Vec<State> = Vec::with_capacity(out.len());
    for w in out {
        if !unique.iter().any(|u| (u.time - w.time).abs() < 1e-9) {
            unique.push(w);
        }
    }
    // the same points again with the speed left to the waypoint rule
    let relaxed: Vec<State> = unique.iter().map(|w| State { speed: f64::NAN, ..*w }).collect();
    unique.extend(relaxed);
    unique
}

/// Plans evaluated per vehicle before giving up.
const SEARCH_BUDGET: usize = 400;
/// Waypoints that may be added on top of the first one.
const SEARCH_DEPTH: usize = 3;

/// Bounded depth-first waypoint repair. At most one waypoint has a free
/// speed; waypoints added later at a headway boundary reuse the current
/// plan's speed there.
struct Repair<'c, 'a> {
    ctx: &'c PlanContext<'a>,
    req: &'c PlanRequest,
    exit_speed: f64,
    budget: usize,
}

impl Repair<'_, '_> {
    fn build(&mut self, waypoints: &[State]) -> Option<TrajectoryPlan> {
        if self.budget == 0 {
            return None;
        }
        self.budget -= 1;
        let mut ws = waypoints.to_vec();
        ws.sort_by(|a, b| a.time.total_cmp(&b.time));
        let free = ws.iter().position(|w| w.speed.is_nan());
        plan_with_free_speed(self.ctx, self.req, self.exit_speed, ws, free)
    }

    fn search(&mut self, waypoints: Vec<State>, depth: usize) -> Result<Option<TrajectoryPlan>, PlanError> {
        let ctx = self.ctx;
        let Some(plan) = self.build(&waypoints) else { return Ok(None) };
        let lateral = lateral_conflicts(&plan, ctx.committed, ctx.geometry, ctx.params)?;
        let rear = rear_end_violations(&plan, ctx.committed, ctx.geometry, ctx.params);
        if lateral.is_empty() && rear.is_empty() {
            return Ok(Some(plan));
        }
        if depth == 0 {
            return Ok(None);
        }
        let has_free = waypoints.iter().any(|w| w.speed.is_nan());
        let next = match closest_leader(ctx, &rear) {
            Some(v) => {
                let mut c = rear_candidates(ctx, self.req, v);
                if has_free {
                    c.retain(|w| !w.speed.is_nan());
                }
                c
            }
            None => {
                let (lo, hi) = (ctx.params.v_min, ctx.params.v_max);
                lateral_candidates(&lateral, ctx.params.tau)
                    .into_iter()
                    .map(|c| if has_free { State { speed: plan.speed(c.time).clamp(lo, hi), ..c } } else { c })
                    .collect()
            }
        };
        for c in next {
            if waypoints.iter().any(|w| (w.time - c.time).abs() < 1e-6) {
                continue;
            }
            let mut ws = waypoints.clone();
            ws.push(c);
            if let Some(p) = self.search(ws, depth - 1)? {
                return Ok(Some(p));
            }
        }
        Ok(None)
    }

    /// First candidate that works on its own, in the given order; otherwise
    /// the first one that can be completed with further waypoints.
    fn first_of(&mut self, candidates: &[State]) -> Result<TrajectoryPlan, PlanError> {
        let req = self.req;
        let usable: Vec<State> =
            candidates.iter().copied().filter(|c| c.time > req.entry.time && c.time < req.exit_time).collect();
        for depth in [0, SEARCH_DEPTH] {
            for c in &usable {
                if let Some(p) = self.search(vec![*c], depth)? {
                    return Ok(p);
                }
            }
        }
        Err(PlanError::Unschedulable { exit_time: req.exit_time })
    }
}

/// Repairs lateral violations of the single cubic with a waypoint on a
/// headway boundary, trying pass-after before pass-before at each violated
/// conflict in order of position.
pub fn insert_lateral_waypoint(
    ctx: &PlanContext,
    req: &PlanRequest,
    exit_speed: f64,
    violations: &[LateralViolation],
) -> Result<TrajectoryPlan, PlanError> {
    let mut repair = Repair { ctx, req, exit_speed, budget: SEARCH_BUDGET };
    repair.first_of(&lateral_candidates(violations, ctx.params.tau))
}

/// Repairs a rear-end violation with a waypoint `delta` behind the leader,
/// at the leader's speed.
pub fn insert_rear_end_waypoint(
    ctx: &PlanContext,
    req: &PlanRequest,
    exit_speed: f64,
    violation: &RearEndViolation,
) -> Result<TrajectoryPlan, PlanError> {
    let mut repair = Repair { ctx, req, exit_speed, budget: SEARCH_BUDGET };
    repair.first_of(&rear_candidates(ctx, req, violation))
}

/// Full per-vehicle pipeline: exit speed, single cubic, then waypoint repair.
pub fn plan_vehicle(ctx: &PlanContext, req: &PlanRequest, v_bar: f64) -> Result<(TrajectoryPlan, PlanRecord), PlanError> {
    let p = ctx.params;
    let (t0, tf, v0) = (req.entry.time, req.exit_time, req.entry.speed);
    let v_bar_feasible = (p.v_min..=p.v_max).contains(&v_bar)
        && unconstrained_trajectory(req.entry, req.exit(v_bar))?.within_limits(p);
    let exit_speed = select_exit_speed(v_bar, t0, tf, req.length, v0, p)?;
    let single = TrajectoryPlan::through(req.vehicle, req.path, req.entry, &[], req.exit(exit_speed))?;
    let lateral = lateral_conflicts(&single, ctx.committed, ctx.geometry, p)?;
    let rear = rear_end_violations(&single, ctx.committed, ctx.geometry, p);
    let plan = if !lateral.is_empty() {
        insert_lateral_waypoint(ctx, req, exit_speed, &lateral)?
    } else if let Some(v) = closest_leader(ctx, &rear) {
        insert_rear_end_waypoint(ctx, req, exit_speed, v)?
    } else {
        single
    };
    let record =
        PlanRecord { vehicle: req.vehicle, v_bar, exit_speed, v_bar_feasible, waypoints: plan.waypoints.len() };
    Ok((plan, record))
}

/// Plans vehicles one at a time in entry order and keeps the committed set.
#[derive(Clone, Debug)]
pub struct IntersectionCoordinator {
    geometry: IntersectionGeometry,
    params: SafetyParams,
    rule: WaypointSpeedRule,
    committed: Vec<TrajectoryPlan>,
}

impl IntersectionCoordinator {
    pub fn new(geometry: IntersectionGeometry, params: SafetyParams, rule: WaypointSpeedRule) -> Self {
        IntersectionCoordinator { geometry, params, rule, committed: Vec::new() }
    }

    pub fn geometry(&self) -> &IntersectionGeometry {
        &self.geometry
    }

    pub fn committed(&self) -> &[TrajectoryPlan] {
        &self.committed
    }

    /// Plans and commits one vehicle; failures leave the committed set as is.
    pub fn plan(&mut self, req: &PlanRequest, v_bar: f64) -> Result<PlanRecord, PlanError> {
        if self.committed.last().is_some_and(|q| q.entry_time() > req.entry.time) {
            return Err(PlanError::OutOfOrder { vehicle: req.vehicle });
        }
        let ctx = PlanContext { geometry: &self.geometry, committed: &self.committed, params: &self.params, rule: self.rule };
        let (plan, record) = plan_vehicle(&ctx, req, v_bar)?;
        self.committed.push(plan);
        Ok(record)
    }

    pub fn into_plans(self) -> Vec<TrajectoryPlan> {
        self.committed
    }
}
