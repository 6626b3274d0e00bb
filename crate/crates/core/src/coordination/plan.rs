//! Piecewise-cubic trajectory plans and their tabular exports.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::cubic::{unconstrained_trajectory, CubicError, CubicSegment, SafetyParams, State};
use super::geometry::PathId;

/// A vehicle's committed motion along one intersection path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub vehicle: usize,
    pub path: PathId,
    /// Contiguous in time, with matching position and speed at every knot.
    pub segments: Vec<CubicSegment>,
    pub waypoints: Vec<State>,
    pub entry_speed: f64,
    pub exit_speed: f64,
}

impl TrajectoryPlan {
    /// Pieces cubics through `waypoints`, which must be strictly increasing in
    /// time.
    pub fn through(
        vehicle: usize,
        path: PathId,
        entry: State,
        waypoints: &[State],
        exit: State,
    ) -> Result<Self, CubicError> {
        let mut knots = Vec::with_capacity(waypoints.len() + 2);
        knots.push(entry);
        knots.extend_from_slice(waypoints);
        knots.push(exit);
        let segments = knots
            .windows(2)
            .map(|w| unconstrained_trajectory(w[0], w[1]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TrajectoryPlan {
            vehicle,
            path,
            segments,
            waypoints: waypoints.to_vec(),
            entry_speed: entry.speed,
            exit_speed: exit.speed,
        })
    }

    pub fn entry_time(&self) -> f64 {
        self.segments[0].t_start
    }

    pub fn exit_time(&self) -> f64 {
        self.segments[self.segments.len() - 1].t_end
    }

    pub fn length(&self) -> f64 {
        let last = &self.segments[self.segments.len() - 1];
        last.position(last.t_end)
    }

    /// Segment covering `t`, with times clamped to the plan interval.
    pub fn segment_at(&self, t: f64) -> &CubicSegment {
        let k = self.segments.partition_point(|s| s.t_end < t);
        &self.segments[k.min(self.segments.len() - 1)]
    }

    pub fn position(&self, t: f64) -> f64 {
        self.segment_at(t).position(t)
    }

    pub fn speed(&self, t: f64) -> f64 {
        self.segment_at(t).speed(t)
    }

    pub fn input(&self, t: f64) -> f64 {
        self.segment_at(t).input(t)
    }

    pub fn covers(&self, t: f64) -> bool {
        t >= self.entry_time() && t <= self.exit_time()
    }

    /// First time the vehicle reaches arc position `s`.
    pub fn arrival_time(&self, s: f64) -> Option<f64> {
        self.segments.iter().find_map(|seg| seg.time_at(s))
    }

    pub fn energy(&self) -> f64 {
        self.segments.iter().map(CubicSegment::energy).sum()
    }

    pub fn limit_excess(&self, p: &SafetyParams) -> f64 {
        self.segments.iter().map(|s| s.limit_excess(p)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn within_limits(&self, p: &SafetyParams) -> bool {
        self.segments.iter().all(|s| s.within_limits(p))
    }

    /// Segment boundaries, including both ends.
    pub fn knot_times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.segments.iter().map(|s| s.t_start).collect();
        out.push(self.exit_time());
        out
    }

    /// Sample times `t0 + k*dt` up to and including the exit time.
    pub fn sample_times(&self, dt: f64) -> Vec<f64> {
        let (t0, tf) = (self.entry_time(), self.exit_time());
        let n = ((tf - t0) / dt).floor() as usize;
        let mut out: Vec<f64> = (0..=n).map(|k| t0 + k as f64 * dt).filter(|&t| t < tf - 1e-12).collect();
        out.push(tf);
        out
    }
}

/// Row-per-sample table: `vehicle path time position speed input`.
pub fn write_trajectory_table<W: Write + ?Sized>(out: &mut W, plans: &[(usize, &TrajectoryPlan)], dt: f64) -> io::Result<()> {
    writeln!(out, "vehicle\tintersection\tpath\ttime\tposition\tspeed\tinput")?;
    for (intersection, plan) in plans {
        for t in plan.sample_times(dt) {
            writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                plan.vehicle,
                intersection,
                plan.path,
                t,
                plan.position(t),
                plan.speed(t),
                plan.input(t)
            )?;
        }
    }
    Ok(())
}

/// Row-per-segment table of local-time coefficients.
pub fn write_segment_table<W: Write + ?Sized>(out: &mut W, plans: &[(usize, &TrajectoryPlan)]) -> io::Result<()> {
    writeln!(out, "vehicle\tintersection\tpath\tsegment\tt_start\tt_end\ta\tb\tc\td")?;
    for (intersection, plan) in plans {
        for (k, s) in plan.segments.iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.9}\t{:.9}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}",
                plan.vehicle, intersection, plan.path, k, s.t_start, s.t_end, s.a, s.b, s.c, s.d
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordination::geometry::Leg;

    fn id() -> PathId {
        PathId::new(Leg::West, Leg::East)
    }

    #[test]
    fn pieced_plan_is_continuous() {
        let w = State::new(42.0, 180.0, 9.0);
        let p = TrajectoryPlan::through(0, id(), State::new(20.0, 0.0, 10.0), &[w], State::new(60.0, 400.0, 12.0))
            .unwrap();
        assert_eq!(p.segments.len(), 2);
        let (a, b) = (p.segments[0], p.segments[1]);
        assert!((a.position(42.0) - b.position(42.0)).abs() < 1e-9);
        assert!((a.speed(42.0) - b.speed(42.0)).abs() < 1e-9);
        assert!((p.arrival_time(180.0).unwrap() - 42.0).abs() < 1e-9);
        assert!((p.length() - 400.0).abs() < 1e-9);
        assert_eq!(p.knot_times(), vec![20.0, 42.0, 60.0]);
    }

    #[test]
    fn sampling_includes_exit() {
        let p = TrajectoryPlan::through(0, id(), State::new(0.0, 0.0, 10.0), &[], State::new(1.02, 10.2, 10.0)).unwrap();
        let ts = p.sample_times(0.25);
        assert_eq!(ts.len(), 6);
        assert_eq!(*ts.last().unwrap(), 1.02);
        let mut buf = Vec::new();
        write_trajectory_table(&mut buf, &[(7, &p)], 0.25).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.lines().nth(1).unwrap().starts_with("0\t7\tWE\t0.000000\t0.000000\t10.000000"));
    }
}
