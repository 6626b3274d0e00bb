//! Single-lane, four-leg intersection: twelve entry-to-exit paths built from
//! straight lanes and circular turn arcs, and the conflict points between them.
//!
//! Traffic keeps right. The center of the intersection is the origin, legs
//! point along the axes, and each lane is offset `lane_offset` meters to the
//! right of its direction of travel.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Leg {
    North,
    East,
    South,
    West,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::North, Leg::East, Leg::South, Leg::West];

    /// Unit vector from the center out along the leg.
    pub fn outward(self) -> Point {
        match self {
            Leg::North => [0.0, 1.0],
            Leg::East => [1.0, 0.0],
            Leg::South => [0.0, -1.0],
            Leg::West => [-1.0, 0.0],
        }
    }

    /// Leg whose axis is closest to the direction `(dx, dy)` seen from the center.
    pub fn from_direction(dx: f64, dy: f64) -> Leg {
        if dx.abs() >= dy.abs() {
            if dx >= 0.0 {
                Leg::East
            } else {
                Leg::West
            }
        } else if dy >= 0.0 {
            Leg::North
        } else {
            Leg::South
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Leg::North => 'N',
            Leg::East => 'E',
            Leg::South => 'S',
            Leg::West => 'W',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Movement {
    Straight,
    Right,
    Left,
}

/// Directed path through the intersection, from an entry leg to an exit leg.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathId {
    pub entry: Leg,
    pub exit: Leg,
}

impl PathId {
    pub fn new(entry: Leg, exit: Leg) -> Self {
        PathId { entry, exit }
    }

    /// `None` for U-turns, which have no path.
    pub fn movement(self) -> Option<Movement> {
        let h = neg(self.entry.outward());
        let out = self.exit.outward();
        if self.entry == self.exit {
            None
        } else if approx_eq(out, h) {
            Some(Movement::Straight)
        } else if approx_eq(out, right_of(h)) {
            Some(Movement::Right)
        } else {
            Some(Movement::Left)
        }
    }

    pub fn label(self) -> String {
        format!("{}{}", self.entry.letter(), self.exit.letter())
    }
}

impl std::fmt::Display for PathId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

fn neg(p: Point) -> Point {
    [-p[0], -p[1]]
}

fn add(p: Point, q: Point) -> Point {
    [p[0] + q[0], p[1] + q[1]]
}

fn sub(p: Point, q: Point) -> Point {
    [p[0] - q[0], p[1] - q[1]]
}

fn scale(p: Point, k: f64) -> Point {
    [p[0] * k, p[1] * k]
}

fn dot(p: Point, q: Point) -> f64 {
    p[0] * q[0] + p[1] * q[1]
}

fn cross(p: Point, q: Point) -> f64 {
    p[0] * q[1] - p[1] * q[0]
}

fn norm(p: Point) -> f64 {
    dot(p, p).sqrt()
}

fn right_of(h: Point) -> Point {
    [h[1], -h[0]]
}

fn approx_eq(p: Point, q: Point) -> bool {
    norm(sub(p, q)) < 1e-9
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Line { start: Point, end: Point },
    /// Counter-clockwise for positive `sweep`.
    Arc { center: Point, radius: f64, start_angle: f64, sweep: f64 },
}

impl Primitive {
    pub fn length(&self) -> f64 {
        match *self {
            Primitive::Line { start, end } => norm(sub(end, start)),
            Primitive::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    pub fn point_at(&self, s: f64) -> Point {
        match *self {
            Primitive::Line { start, end } => {
                let len = norm(sub(end, start));
                add(start, scale(sub(end, start), s / len))
            }
            Primitive::Arc { center, radius, start_angle, sweep } => {
                let ang = start_angle + sweep.signum() * s / radius;
                add(center, [radius * ang.cos(), radius * ang.sin()])
            }
        }
    }

    /// Arc length from the primitive's start to the point `p`, which must lie on
    /// the primitive's carrier line or circle. `None` when outside the piece.
    fn locate(&self, p: Point, tol: f64) -> Option<f64> {
        match *self {
            Primitive::Line { start, end } => {
                let len = norm(sub(end, start));
                let s = dot(sub(p, start), sub(end, start)) / len;
                (s >= -tol && s <= len + tol).then(|| s.clamp(0.0, len))
            }
            Primitive::Arc { center, radius, start_angle, sweep } => {
                let d = sub(p, center);
                let ang = d[1].atan2(d[0]);
                let mut phi = (ang - start_angle) * sweep.signum();
                phi = phi.rem_euclid(TAU);
                let len = radius * sweep.abs();
                let s = phi * radius;
                if s <= len + tol {
                    Some(s.min(len))
                } else if (TAU * radius - s) <= tol {
                    Some(0.0)
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionPath {
    pub id: PathId,
    pub primitives: Vec<Primitive>,
    offsets: Vec<f64>,
    pub length: f64,
}

impl IntersectionPath {
    fn new(id: PathId, primitives: Vec<Primitive>) -> Self {
        let mut offsets = Vec::with_capacity(primitives.len());
        let mut acc = 0.0;
        for p in &primitives {
            offsets.push(acc);
            acc += p.length();
        }
        IntersectionPath { id, primitives, offsets, length: acc }
    }

    pub fn point_at(&self, s: f64) -> Point {
        let s = s.clamp(0.0, self.length);
        let k = self.offsets.iter().rposition(|&o| o <= s).unwrap_or(0);
        self.primitives[k].point_at(s - self.offsets[k])
    }

    fn first_line_length(&self) -> f64 {
        self.primitives[0].length()
    }

    fn last_line_length(&self) -> f64 {
        self.primitives[self.primitives.len() - 1].length()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConflictKind {
    /// Transversal crossing of two paths.
    Crossing,
    /// Start of a shared exit lane.
    Merge,
}

/// A location shared by paths `a` and `b`, at arc position `s_a` on `a` and
/// `s_b` on `b`. Stored once per pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConflictPoint {
    pub a: PathId,
    pub s_a: f64,
    pub b: PathId,
    pub s_b: f64,
    pub kind: ConflictKind,
}

/// A conflict point seen from one of its two paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConflictView {
    pub index: usize,
    pub own: f64,
    pub other: PathId,
    pub other_position: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Distance from the center to the end of each leg, in [`Leg::ALL`] order.
    pub leg_lengths: [f64; 4],
    pub lane_offset: f64,
    pub right_turn_radius: f64,
    pub left_turn_radius: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig { leg_lengths: [200.0; 4], lane_offset: 2.0, right_turn_radius: 6.0, left_turn_radius: 10.0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("geometry parameters must be positive")]
    NonPositive,
    #[error("turn radius does not fit path {0}")]
    RadiusTooLarge(PathId),
    #[error("paths {0} and {1} touch without crossing")]
    Degenerate(PathId, PathId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionGeometry {
    pub config: GeometryConfig,
    /// Twelve paths, ordered by (entry, exit).
    pub paths: Vec<IntersectionPath>,
    pub conflicts: Vec<ConflictPoint>,
}

/// Builds the path of one movement through the intersection.
pub fn build_path(config: &GeometryConfig, id: PathId) -> Result<IntersectionPath, GeometryError> {
    let movement = id.movement().ok_or(GeometryError::RadiusTooLarge(id))?;
    let w = config.lane_offset;
    let h = neg(id.entry.outward());
    let out = id.exit.outward();
    let entry = add(scale(id.entry.outward(), config.leg_lengths[id.entry.index()]), scale(right_of(h), w));
    let exit = add(scale(out, config.leg_lengths[id.exit.index()]), scale(right_of(out), w));
    if movement == Movement::Straight {
        return Ok(IntersectionPath::new(id, vec![Primitive::Line { start: entry, end: exit }]));
    }
    // corner where the inbound and outbound lane lines meet
    let t = cross(sub(exit, entry), out) / cross(h, out);
    let corner = add(entry, scale(h, t));
    let (radius, turn_sign) = match movement {
        Movement::Right => (config.right_turn_radius, -1.0),
        _ => (config.left_turn_radius, 1.0),
    };
    if norm(sub(corner, entry)) <= radius || norm(sub(exit, corner)) <= radius {
        return Err(GeometryError::RadiusTooLarge(id));
    }
    let t1 = sub(corner, scale(h, radius));
    let t2 = add(corner, scale(out, radius));
    let center = add(t1, scale(right_of(h), -turn_sign * radius));
    let start_angle = (t1[1] - center[1]).atan2(t1[0] - center[0]);
    Ok(IntersectionPath::new(
        id,
        vec![
            Primitive::Line { start: entry, end: t1 },
            Primitive::Arc { center, radius, start_angle, sweep: turn_sign * FRAC_PI_2 },
            Primitive::Line { start: t2, end: exit },
        ],
    ))
}

const TOUCH_TOL: f64 = 1e-9;
/// Crossings closer than this to a diverge or merge point belong to it.
const JOIN_RADIUS: f64 = 0.01;

enum Carrier {
    /// Transversal intersections of the carrier lines or circles.
    Cross(Vec<Point>),
    /// Tangent points or ends of a collinear overlap.
    Touch(Vec<Point>),
}

fn carrier_points(p: &Primitive, q: &Primitive) -> Carrier {
    match (*p, *q) {
        (Primitive::Line { start: a0, end: a1 }, Primitive::Line { start: b0, end: b1 }) => {
            let da = sub(a1, a0);
            let db = sub(b1, b0);
            let den = cross(da, db);
            if den.abs() < 1e-12 * norm(da) * norm(db) {
                if cross(da, sub(b0, a0)).abs() > 1e-9 * norm(da) {
                    return Carrier::Cross(vec![]);
                }
                let len = norm(da);
                let u = |x: Point| dot(sub(x, a0), da) / len;
                let (lo, hi) = (u(b0).min(u(b1)).max(0.0), u(b0).max(u(b1)).min(len));
                if hi < lo - TOUCH_TOL {
                    return Carrier::Cross(vec![]);
                }
                let at = |k: f64| add(a0, scale(da, k / len));
                return Carrier::Touch(vec![at(lo), at(0.5 * (lo + hi)), at(hi)]);
            }
            let t = cross(sub(b0, a0), db) / den;
            Carrier::Cross(vec![add(a0, scale(da, t))])
        }
        (Primitive::Line { start, end }, Primitive::Arc { center, radius, .. })
        | (Primitive::Arc { center, radius, .. }, Primitive::Line { start, end }) => {
            let d = sub(end, start);
            let dir = scale(d, 1.0 / norm(d));
            let foot = add(start, scale(dir, dot(sub(center, start), dir)));
            let dist = norm(sub(center, foot));
            if (dist - radius).abs() <= 1e-9 * radius {
                return Carrier::Touch(vec![foot]);
            }
            if dist > radius {
                return Carrier::Cross(vec![]);
            }
            let half = (radius * radius - dist * dist).sqrt();
            Carrier::Cross(vec![sub(foot, scale(dir, half)), add(foot, scale(dir, half))])
        }
        (Primitive::Arc { center: c1, radius: r1, .. }, Primitive::Arc { center: c2, radius: r2, .. }) => {
            let d = sub(c2, c1);
            let dist = norm(d);
            if dist < 1e-12 {
                if (r1 - r2).abs() < 1e-9 {
                    let ends = [p.point_at(0.0), p.point_at(p.length()), q.point_at(0.0), q.point_at(q.length())];
                    return Carrier::Touch(ends.to_vec());
                }
                return Carrier::Cross(vec![]);
            }
            let unit = scale(d, 1.0 / dist);
            if (dist - (r1 + r2)).abs() < 1e-9 || (dist - (r1 - r2).abs()).abs() < 1e-9 {
                let side = if r1 < r2 && dist < r2 { -1.0 } else { 1.0 };
                return Carrier::Touch(vec![add(c1, scale(unit, side * r1))]);
            }
            if dist > r1 + r2 || dist < (r1 - r2).abs() {
                return Carrier::Cross(vec![]);
            }
            let a = (r1 * r1 - r2 * r2 + dist * dist) / (2.0 * dist);
            let h = (r1 * r1 - a * a).max(0.0).sqrt();
            let mid = add(c1, scale(unit, a));
            let perp = [-unit[1], unit[0]];
            Carrier::Cross(vec![add(mid, scale(perp, h)), sub(mid, scale(perp, h))])
        }
    }
}

/// Position of `pt` on the primitive when it lies on it.
fn on_primitive(p: &Primitive, pt: Point) -> Option<f64> {
    let s = p.locate(pt, 1e-9)?;
    (norm(sub(p.point_at(s), pt)) < 1e-6).then_some(s)
}

/// Shared lane length at the start of two paths (zero for different entries).
pub fn shared_prefix(a: &IntersectionPath, b: &IntersectionPath) -> f64 {
    if a.id == b.id {
        a.length
    } else if a.id.entry == b.id.entry {
        a.first_line_length().min(b.first_line_length())
    } else {
        0.0
    }
}

/// Shared lane length at the end of two paths (zero for different exits).
pub fn shared_suffix(a: &IntersectionPath, b: &IntersectionPath) -> f64 {
    if a.id == b.id {
        a.length
    } else if a.id.exit == b.id.exit {
        a.last_line_length().min(b.last_line_length())
    } else {
        0.0
    }
}

/// Conflict points between two distinct paths.
pub fn conflicts_between(a: &IntersectionPath, b: &IntersectionPath) -> Result<Vec<ConflictPoint>, GeometryError> {
    let prefix = shared_prefix(a, b);
    let suffix = shared_suffix(a, b);
    let merge = (suffix > 0.0).then_some((a.length - suffix, b.length - suffix));
    let near_join = |sa: f64, sb: f64| {
        let at_diverge = prefix > 0.0 && (sa - prefix).abs() < JOIN_RADIUS && (sb - prefix).abs() < JOIN_RADIUS;
        let at_merge = merge.is_some_and(|(ma, mb)| (sa - ma).abs() < JOIN_RADIUS && (sb - mb).abs() < JOIN_RADIUS);
        at_diverge || at_merge
    };
    let inside_shared = |sa: f64, sb: f64| {
        (sa < prefix && sb < prefix) || merge.is_some_and(|(ma, mb)| sa > ma && sb > mb)
    };
    let mut out: Vec<ConflictPoint> = Vec::new();
    for (i, p) in a.primitives.iter().enumerate() {
        for (j, q) in b.primitives.iter().enumerate() {
            match carrier_points(p, q) {
                Carrier::Cross(points) => {
                    for pt in points {
                        let (Some(la), Some(lb)) = (on_primitive(p, pt), on_primitive(q, pt)) else {
                            continue;
                        };
                        let (sa, sb) = (a.offsets[i] + la, b.offsets[j] + lb);
                        if near_join(sa, sb) || inside_shared(sa, sb) {
                            continue;
                        }
                        if out.iter().any(|c| (c.s_a - sa).abs() < 1e-6 && (c.s_b - sb).abs() < 1e-6) {
                            continue;
                        }
                        out.push(ConflictPoint { a: a.id, s_a: sa, b: b.id, s_b: sb, kind: ConflictKind::Crossing });
                    }
                }
                Carrier::Touch(points) => {
                    // touching is tolerated only along the shared lanes or at their ends
                    for pt in points {
                        let (Some(la), Some(lb)) = (on_primitive(p, pt), on_primitive(q, pt)) else {
                            continue;
                        };
                        let (sa, sb) = (a.offsets[i] + la, b.offsets[j] + lb);
                        let in_prefix = prefix > 0.0 && sa <= prefix + JOIN_RADIUS && sb <= prefix + JOIN_RADIUS;
                        let in_suffix =
                            merge.is_some_and(|(ma, mb)| sa >= ma - JOIN_RADIUS && sb >= mb - JOIN_RADIUS);
                        if !(in_prefix || in_suffix) {
                            return Err(GeometryError::Degenerate(a.id, b.id));
                        }
                    }
                }
            }
        }
    }
    if let Some((ma, mb)) = merge {
        out.push(ConflictPoint { a: a.id, s_a: ma, b: b.id, s_b: mb, kind: ConflictKind::Merge });
    }
    out.sort_by(|x, y| x.s_a.total_cmp(&y.s_a));
    Ok(out)
}

/// Builds the twelve paths and all pairwise conflict points.
pub fn build_geometry(config: &GeometryConfig) -> Result<IntersectionGeometry, GeometryError> {
    let positive = config.leg_lengths.iter().all(|&l| l > 0.0)
        && config.lane_offset >= 0.0
        && config.right_turn_radius > 0.0
        && config.left_turn_radius > 0.0;
    if !positive {
        return Err(GeometryError::NonPositive);
    }
    let mut paths = Vec::with_capacity(12);
    for entry in Leg::ALL {
        for exit in Leg::ALL {
            if entry != exit {
                paths.push(build_path(config, PathId::new(entry, exit))?);
            }
        }
    }
    let mut conflicts = Vec::new();
    for i in 0..paths.len() {
        for j in (i + 1)..paths.len() {
            conflicts.extend(conflicts_between(&paths[i], &paths[j])?);
        }
    }
    Ok(IntersectionGeometry { config: *config, paths, conflicts })
}

impl IntersectionGeometry {
    pub fn path(&self, id: PathId) -> &IntersectionPath {
        self.paths.iter().find(|p| p.id == id).expect("every non-U-turn path exists")
    }

    /// Conflict points on `id`, seen from `id`.
    pub fn conflicts_on(&self, id: PathId) -> Vec<ConflictView> {
        let mut out = Vec::new();
        for (index, c) in self.conflicts.iter().enumerate() {
            if c.a == id {
                out.push(ConflictView { index, own: c.s_a, other: c.b, other_position: c.s_b });
            } else if c.b == id {
                out.push(ConflictView { index, own: c.s_b, other: c.a, other_position: c.s_a });
            }
        }
        out.sort_by(|x, y| x.own.total_cmp(&y.own).then(x.index.cmp(&y.index)));
        out
    }

    pub fn shared_prefix(&self, a: PathId, b: PathId) -> f64 {
        shared_prefix(self.path(a), self.path(b))
    }
}
