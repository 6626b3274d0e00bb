//! Unconstrained minimum-energy motion between two boundary states.
//!
//! With double-integrator dynamics and cost `1/2 * integral(u^2)`, the optimal
//! position is a cubic in time, so the input is affine and the speed quadratic.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed and input bounds plus the two safety margins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyParams {
    /// Minimum rear-end gap, meters.
    pub delta: f64,
    /// Minimum time headway at a conflict point, seconds.
    pub tau: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        SafetyParams { delta: 6.0, tau: 1.5, u_min: -4.0, u_max: 3.0, v_min: 1.0, v_max: 20.0 }
    }
}

impl SafetyParams {
    pub fn is_valid(&self) -> bool {
        self.delta > 0.0
            && self.tau >= 0.0
            && self.u_min < 0.0
            && 0.0 < self.u_max
            && 0.0 < self.v_min
            && self.v_min < self.v_max
    }
}

/// Arc position and speed at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub time: f64,
    pub position: f64,
    pub speed: f64,
}

impl State {
    pub fn new(time: f64, position: f64, speed: f64) -> Self {
        State { time, position, speed }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CubicError {
    #[error("final time {end} must exceed initial time {start}")]
    EmptyInterval { start: f64, end: f64 },
}

/// `s(t) = a*r^3 + b*r^2 + c*r + d` with local time `r = t - t_start`, valid on
/// `[t_start, t_end]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicSegment {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl CubicSegment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn position(&self, t: f64) -> f64 {
        let r = t - self.t_start;
        ((self.a * r + self.b) * r + self.c) * r + self.d
    }

    pub fn speed(&self, t: f64) -> f64 {
        let r = t - self.t_start;
        (3.0 * self.a * r + 2.0 * self.b) * r + self.c
    }

    pub fn input(&self, t: f64) -> f64 {
        let r = t - self.t_start;
        6.0 * self.a * r + 2.0 * self.b
    }

    pub fn start(&self) -> State {
        State::new(self.t_start, self.d, self.c)
    }

    pub fn end(&self) -> State {
        State::new(self.t_end, self.position(self.t_end), self.speed(self.t_end))
    }

    /// `1/2 * integral(u^2)` over the segment, in closed form.
    pub fn energy(&self) -> f64 {
        let t = self.duration();
        6.0 * self.a * self.a * t.powi(3) + 6.0 * self.a * self.b * t * t + 2.0 * self.b * self.b * t
    }

    /// Speed extremes: the endpoints, plus the vertex when it is interior.
    pub fn speed_range(&self) -> (f64, f64) {
        let t = self.duration();
        let v0 = self.c;
        let v1 = self.speed(self.t_end);
        let (mut lo, mut hi) = (v0.min(v1), v0.max(v1));
        if self.a != 0.0 {
            let r = -self.b / (3.0 * self.a);
            if r > 0.0 && r < t {
                let v = self.speed(self.t_start + r);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// Input extremes; the input is affine so they sit at the endpoints.
    pub fn input_range(&self) -> (f64, f64) {
        let u0 = self.input(self.t_start);
        let u1 = self.input(self.t_end);
        (u0.min(u1), u0.max(u1))
    }

    /// Largest limit excess over the segment; nonpositive means feasible.
    pub fn limit_excess(&self, p: &SafetyParams) -> f64 {
        let (vlo, vhi) = self.speed_range();
        let (ulo, uhi) = self.input_range();
        (vhi - p.v_max).max(p.v_min - vlo).max(uhi - p.u_max).max(p.u_min - ulo)
    }

    pub fn within_limits(&self, p: &SafetyParams) -> bool {
        self.limit_excess(p) <= 1e-9
    }

    /// Time at which the position reaches `s`, assuming the position increases
    /// over the segment. `None` when `s` is outside the covered range.
    pub fn time_at(&self, s: f64) -> Option<f64> {
        let (s0, s1) = (self.d, self.position(self.t_end));
        if s < s0 - 1e-12 || s > s1 + 1e-12 {
            return None;
        }
        let (mut lo, mut hi) = (self.t_start, self.t_end);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.position(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// The cubic matching position and speed at both ends.
pub fn unconstrained_trajectory(start: State, end: State) -> Result<CubicSegment, CubicError> {
    let t = end.time - start.time;
    if !(t > 0.0) {
        return Err(CubicError::EmptyInterval { start: start.time, end: end.time });
    }
    // unknowns (a, b, c, d) in local time
    #[rustfmt::skip]
    let m = Matrix4::new(
        0.0,           0.0,     0.0, 1.0,
        0.0,           0.0,     1.0, 0.0,
        t * t * t,     t * t,   t,   1.0,
        3.0 * t * t,   2.0 * t, 1.0, 0.0,
    );
    let rhs = Vector4::new(start.position, start.speed, end.position, end.speed);
    let x = m.lu().solve(&rhs).ok_or(CubicError::EmptyInterval { start: start.time, end: end.time })?;
    Ok(CubicSegment { a: x[0], b: x[1], c: x[2], d: x[3], t_start: start.time, t_end: end.time })
}
