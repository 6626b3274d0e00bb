//! Intersection coordination: minimum-energy trajectories through a
//! single-lane four-leg intersection, planned one vehicle at a time.

pub mod cubic;
pub mod geometry;
pub mod plan;
pub mod planner;

pub use cubic::{unconstrained_trajectory, CubicError, CubicSegment, SafetyParams, State};
pub use geometry::{
    build_geometry, ConflictKind, ConflictPoint, GeometryConfig, GeometryError, IntersectionGeometry, IntersectionPath, Leg, PathId,
};
pub use plan::TrajectoryPlan;
pub use planner::{
    insert_lateral_waypoint, insert_rear_end_waypoint, lateral_conflicts, plan_vehicle, rear_end_violations,
    select_exit_speed, IntersectionCoordinator, PlanContext, PlanError, PlanRecord, PlanRequest, WaypointSpeedRule,
};
