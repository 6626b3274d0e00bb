//! End-to-end pipeline over scenario files, with an independent audit.

pub mod audit;
pub mod grid;
pub mod run;
pub mod scenario;

pub use audit::{audit, audit_schedule, AuditReport, Finding, PlannedCrossing, ScheduleAudit};
pub use grid::{grid_scenario, single_intersection_scenario};
pub use run::{run, run_through, RunOutput, RunReport, Stage, StageError};
pub use scenario::{Scenario, ScenarioError};
