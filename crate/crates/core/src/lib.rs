//! Flow-based routing and intersection coordination for connected automated
//! vehicles.
//!
//! The pipeline runs top-down:
//!
//! 1. [`flow`] solves the system-optimal multi-commodity assignment on a
//!    [`network::RoadNetwork`] with BPR latencies.
//! 2. [`routes`] decomposes each demand's edge flow into explicit routes, and
//!    [`schedule`] turns routes into per-vehicle departure and
//!    intersection exit times.
//! 3. [`coordination`] plans minimum-energy, collision-free trajectories for
//!    every intersection crossing.
//! 4. [`harness`] wires the stages together and audits the result.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod network;
pub mod shortest_path;
pub mod flow;
pub mod routes;
pub mod schedule;
pub mod coordination;
pub mod harness;
