//! Reference computations that share no solver code with the library. Most
//! are brute-force searches over sampled candidates.

#![allow(dead_code)]

use std::collections::HashMap;

use cavflow::coordination::IntersectionPath;
use cavflow::network::{Demand, Edge, Node, NodeKind, RoadNetwork};
use nalgebra::{DMatrix, DVector};

pub fn bpr(t0: f64, cap: f64, x: f64) -> f64 {
    t0 * (1.0 + 0.15 * (x / cap).powi(4))
}

/// Two disjoint two-edge routes from node 0 to node 3. Edges 0 and 1 form the
/// first route, edges 2 and 3 the second.
pub fn two_path_network(first: (f64, f64), second: (f64, f64)) -> RoadNetwork {
    let nodes = vec![
        Node::new(0, NodeKind::Depot, 0.0, 0.0),
        Node::new(1, NodeKind::Intersection, 100.0, 100.0),
        Node::new(2, NodeKind::Intersection, 100.0, -100.0),
        Node::new(3, NodeKind::Depot, 200.0, 0.0),
    ];
    let edge = |from, to, (t0, cap): (f64, f64)| Edge { from, to, free_flow_time: t0, capacity: cap, length: 150.0 };
    RoadNetwork::new(nodes, vec![edge(0, 1, first), edge(1, 3, first), edge(0, 2, second), edge(2, 3, second)])
}

pub fn od_demand(rate: f64) -> Demand {
    Demand { id: 0, origin: 0, destination: 3, rate }
}

/// Flow on the first route minimizing total travel time, found by scanning
/// `f` over `[0, alpha]` at resolution `step`.
pub fn grid_search_split(first: (f64, f64), second: (f64, f64), alpha: f64, step: f64) -> f64 {
    let total = |f: f64| {
        let g = alpha - f;
        2.0 * f * bpr(first.0, first.1, f) + 2.0 * g * bpr(second.0, second.1, g)
    };
    let n = (alpha / step).round() as usize;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=n {
        let f = (k as f64 * step).min(alpha);
        let j = total(f);
        if j < best.0 {
            best = (j, f);
        }
    }
    best.1
}

/// Minimizes `1/2 u' H u` subject to `A u = b` for a positive diagonal `H`
/// through the reduced KKT system `(A H^-1 A') lambda = b`.
pub fn equality_qp(h: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let h_inv = h.map(|x| 1.0 / x);
    let a_scaled = a * DMatrix::from_diagonal(&h_inv);
    let reduced = &a_scaled * a.transpose();
    let lambda = reduced.lu().solve(b).expect("constraint rows are independent");
    a_scaled.transpose() * lambda
}

/// Boundary conditions of a fixed-time transfer.
#[derive(Clone, Copy, Debug)]
pub struct Transfer {
    pub t0: f64,
    pub tf: f64,
    pub s0: f64,
    pub v0: f64,
    pub sf: f64,
    pub vf: f64,
}

/// Minimum energy of a double integrator with piecewise-constant input on a
/// grid of step `dt` (the final step may be shorter).
pub fn transcribed_energy(bc: &Transfer, dt: f64) -> f64 {
    let horizon = bc.tf - bc.t0;
    let mut steps = Vec::new();
    let mut t = 0.0;
    while t < horizon - 1e-12 {
        let h = dt.min(horizon - t);
        steps.push((t, h));
        t += h;
    }
    let n = steps.len();
    let mut a = DMatrix::zeros(2, n);
    for (k, &(start, h)) in steps.iter().enumerate() {
        let remaining = horizon - start - h;
        a[(0, k)] = h * h / 2.0 + h * remaining;
        a[(1, k)] = h;
    }
    let b = DVector::from_vec(vec![bc.sf - bc.s0 - bc.v0 * horizon, bc.vf - bc.v0]);
    let h = DVector::from_iterator(n, steps.iter().map(|s| s.1));
    let u = equality_qp(&h, &a, &b);
    0.5 * (0..n).map(|k| u[k] * u[k] * h[k]).sum::<f64>()
}

/// The Hermite cubic through the transfer boundary conditions, with its first
/// two derivatives.
pub fn hermite(bc: &Transfer, t: f64) -> (f64, f64, f64) {
    let h = bc.tf - bc.t0;
    let r = (t - bc.t0) / h;
    let (m0, m1) = (bc.v0 * h, bc.vf * h);
    let h00 = 2.0 * r.powi(3) - 3.0 * r * r + 1.0;
    let h10 = r.powi(3) - 2.0 * r * r + r;
    let h01 = -2.0 * r.powi(3) + 3.0 * r * r;
    let h11 = r.powi(3) - r * r;
    let d00 = 6.0 * r * r - 6.0 * r;
    let d10 = 3.0 * r * r - 4.0 * r + 1.0;
    let d01 = -6.0 * r * r + 6.0 * r;
    let d11 = 3.0 * r * r - 2.0 * r;
    let dd00 = 12.0 * r - 6.0;
    let dd10 = 6.0 * r - 4.0;
    let dd01 = -12.0 * r + 6.0;
    let dd11 = 6.0 * r - 2.0;
    let s = h00 * bc.s0 + h10 * m0 + h01 * bc.sf + h11 * m1;
    let v = (d00 * bc.s0 + d10 * m0 + d01 * bc.sf + d11 * m1) / h;
    let u = (dd00 * bc.s0 + dd10 * m0 + dd01 * bc.sf + dd11 * m1) / (h * h);
    (s, v, u)
}

/// Whether the cubic stays within the limits at every sample of step `dt`.
pub fn sampled_feasible(bc: &Transfer, limits: (f64, f64, f64, f64), dt: f64) -> bool {
    let (v_min, v_max, u_min, u_max) = limits;
    let n = ((bc.tf - bc.t0) / dt).ceil() as usize;
    (0..=n).all(|k| {
        let t = (bc.t0 + k as f64 * dt).min(bc.tf);
        let (_, v, u) = hermite(bc, t);
        v >= v_min - 1e-9 && v <= v_max + 1e-9 && u >= u_min - 1e-9 && u <= u_max + 1e-9
    })
}

/// Composite Simpson rule on `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Shape `w(r) sin(k pi r)` with `w = r^2 (1 - r)^2`, which vanishes with its
/// first derivative at both ends. Returns the value and second derivative in
/// `r`.
pub fn bump(k: u32, r: f64) -> (f64, f64) {
    let om = k as f64 * std::f64::consts::PI;
    let w = r * r * (1.0 - r) * (1.0 - r);
    let dw = 2.0 * r * (1.0 - r) * (1.0 - 2.0 * r);
    let ddw = 2.0 * (1.0 - 6.0 * r + 6.0 * r * r);
    let (sn, cs) = (om * r).sin_cos();
    (w * sn, ddw * sn + 2.0 * dw * om * cs - w * om * om * sn)
}

/// Energy of the cubic plus `amplitude * bump(k)`, by quadrature.
pub fn perturbed_energy(bc: &Transfer, k: u32, amplitude: f64) -> f64 {
    let h = bc.tf - bc.t0;
    simpson(
        |t| {
            let (_, _, u) = hermite(bc, t);
            let (_, dd) = bump(k, (t - bc.t0) / h);
            let u = u + amplitude * dd / (h * h);
            0.5 * u * u
        },
        bc.t0,
        bc.tf,
        4000,
    )
}

/// Closest exit speed to `v_bar` whose cubic passes the sampled limit check,
/// or `None`. A scan at step `10 * step` locates the candidate and a second
/// scan at `step` around it refines it.
pub fn scan_exit_speed(bc: &Transfer, v_bar: f64, limits: (f64, f64, f64, f64), step: f64) -> Option<f64> {
    let closest = |lo: f64, hi: f64, h: f64, dt: f64| {
        let n = ((hi - lo) / h).round() as usize;
        (0..=n)
            .map(|k| lo + k as f64 * h)
            .filter(|&v| sampled_feasible(&Transfer { vf: v, ..*bc }, limits, dt))
            .min_by(|a, b| (a - v_bar).abs().total_cmp(&(b - v_bar).abs()))
    };
    let coarse = closest(limits.0, limits.1, 10.0 * step, 1e-2)?;
    let lo = (coarse - 20.0 * step).max(limits.0);
    let hi = (coarse + 20.0 * step).min(limits.1);
    closest(lo, hi, step, 1e-3)
}

/// A path sampled as a polyline with `spacing` between vertices.
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub spacing: f64,
}

impl Polyline {
    pub fn sample(path: &IntersectionPath, spacing: f64) -> Self {
        let n = (path.length / spacing).ceil() as usize;
        let points = (0..=n).map(|k| path.point_at((k as f64 * spacing).min(path.length))).collect();
        Polyline { points, spacing }
    }

    fn arc_position(&self, segment: usize, t: f64) -> f64 {
        (segment as f64 + t) * self.spacing
    }
}

fn cell_of(p: [f64; 2], size: f64) -> (i64, i64) {
    ((p[0] / size).floor() as i64, (p[1] / size).floor() as i64)
}

fn segment_cells(p: [f64; 2], q: [f64; 2], size: f64) -> impl Iterator<Item = (i64, i64)> {
    let (a, b) = (cell_of(p, size), cell_of(q, size));
    let (x0, x1) = (a.0.min(b.0), a.0.max(b.0));
    let (y0, y1) = (a.1.min(b.1), a.1.max(b.1));
    (x0..=x1).flat_map(move |x| (y0..=y1).map(move |y| (x, y)))
}

/// Where two polylines meet, as `(s_a, s_b)` arc positions. Collinear overlaps
/// are reported separately as the total overlapping length on `a`.
pub struct Contacts {
    pub points: Vec<(f64, f64)>,
    pub overlap: f64,
}

pub fn polyline_contacts(a: &Polyline, b: &Polyline) -> Contacts {
    const CELL: f64 = 0.25;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for j in 0..b.points.len() - 1 {
        for c in segment_cells(b.points[j], b.points[j + 1], CELL) {
            grid.entry(c).or_default().push(j);
        }
    }
    let mut points = Vec::new();
    let mut overlap = 0.0;
    let mut seen = Vec::new();
    for i in 0..a.points.len() - 1 {
        let (p, p2) = (a.points[i], a.points[i + 1]);
        let r = [p2[0] - p[0], p2[1] - p[1]];
        seen.clear();
        for c in segment_cells(p, p2, CELL) {
            if let Some(list) = grid.get(&c) {
                seen.extend_from_slice(list);
            }
        }
        seen.sort_unstable();
        seen.dedup();
        let mut collinear = false;
        for &j in &seen {
            let (q, q2) = (b.points[j], b.points[j + 1]);
            let s = [q2[0] - q[0], q2[1] - q[1]];
            let qp = [q[0] - p[0], q[1] - p[1]];
            let denom = r[0] * s[1] - r[1] * s[0];
            let scale = (r[0].hypot(r[1])) * (s[0].hypot(s[1]));
            if denom.abs() <= 1e-9 * scale {
                let off = (qp[0] * r[1] - qp[1] * r[0]).abs() / r[0].hypot(r[1]);
                let len2 = r[0] * r[0] + r[1] * r[1];
                let t0 = (qp[0] * r[0] + qp[1] * r[1]) / len2;
                let t1 = t0 + (s[0] * r[0] + s[1] * r[1]) / len2;
                let shared = t0.max(t1).min(1.0) - t0.min(t1).max(0.0);
                if off < 1e-7 && shared > 1e-6 {
                    collinear = true;
                }
                continue;
            }
            let t = (qp[0] * s[1] - qp[1] * s[0]) / denom;
            let u = (qp[0] * r[1] - qp[1] * r[0]) / denom;
            if (-1e-9..=1.0 + 1e-9).contains(&t) && (-1e-9..=1.0 + 1e-9).contains(&u) {
                points.push((a.arc_position(i, t), b.arc_position(j, u)));
            }
        }
        if collinear {
            overlap += a.spacing;
        }
    }
    Contacts { points, overlap }
}

/// Groups contact points closer than `radius` on `a` and returns one
/// representative per group.
pub fn cluster(mut points: Vec<(f64, f64)>, radius: f64) -> Vec<(f64, f64)> {
    points.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for p in points {
        match out.last() {
            Some(last) if p.0 - last.0 < radius => {}
            _ => out.push(p),
        }
    }
    out
}
