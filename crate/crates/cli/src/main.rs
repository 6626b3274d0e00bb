//! `cavflow`: runs the pipeline on a scenario file up to a chosen stage.
//!
//! Exit codes: 0 on success, 1 when the command line or scenario is invalid,
//! 2 when a pipeline stage fails. Standard output carries one JSON line;
//! errors and stage timings go to standard error as JSON lines.

use std::path::PathBuf;
use std::process::ExitCode;

use cavflow::harness::{run_through, RunOutput, Scenario, ScenarioError, Stage};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "cavflow", version, about = "System-optimal routing and intersection coordination for automated vehicles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check the scenario.
    Validate(Common),
    /// Solve the system-optimal flow and print its duality-gap certificate.
    SolveFlow(Common),
    /// Decompose the flow into routes.
    RecoverRoutes(Common),
    /// Build the departure and intersection-exit schedule.
    Schedule(Common),
    /// Plan every intersection crossing.
    Coordinate(Common),
    /// Run every stage and write all artifacts.
    Run(Common),
    /// Run every stage and fail when the independent audit has findings.
    Audit(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Directory for artifacts; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scheduling horizon, seconds.
    #[arg(long, allow_negative_numbers = true)]
    horizon: Option<f64>,
    /// Override the relative duality-gap tolerance.
    #[arg(long, allow_negative_numbers = true)]
    gap_tolerance: Option<f64>,
    /// Override the Frank-Wolfe iteration cap.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Override the demand-generation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the audit sampling step, seconds.
    #[arg(long, allow_negative_numbers = true)]
    audit_dt: Option<f64>,
    /// Override the trajectory export step, seconds.
    #[arg(long, allow_negative_numbers = true)]
    export_dt: Option<f64>,
}

impl Common {
    fn apply(&self, s: &mut Scenario) {
        let p = &mut s.params;
        if let Some(v) = self.horizon {
            p.horizon = v;
        }
        if let Some(v) = self.gap_tolerance {
            p.solver.gap_tolerance = v;
        }
        if let Some(v) = self.max_iterations {
            p.solver.max_iterations = v;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
        if let Some(v) = self.audit_dt {
            p.audit_dt = v;
        }
        if let Some(v) = self.export_dt {
            p.export_dt = v;
        }
    }
}

enum Failure {
    Invalid(Vec<String>),
    Stage(Stage, String),
}

fn error_line(kind: &str, stage: Stage, message: &str) {
    eprintln!("{}", json!({ "error": kind, "stage": stage.to_string(), "message": message }));
}

impl Failure {
    fn report(&self) -> ExitCode {
        match self {
            Failure::Invalid(messages) => {
                for m in messages {
                    error_line("validation", Stage::Validate, m);
                }
                ExitCode::from(1)
            }
            Failure::Stage(stage, message) => {
                error_line("stage", *stage, message);
                ExitCode::from(2)
            }
        }
    }
}

fn load(c: &Common) -> Result<Scenario, Failure> {
    let mut scenario = Scenario::load(&c.scenario).map_err(|e| Failure::Invalid(vec![e.to_string()]))?;
    c.apply(&mut scenario);
    scenario.validate().map_err(|e| match e {
        ScenarioError::Invalid(messages) => Failure::Invalid(messages),
        other => Failure::Invalid(vec![other.to_string()]),
    })?;
    Ok(scenario)
}

fn execute(scenario: &Scenario, last: Stage, c: &Common) -> Result<RunOutput, Failure> {
    let out = run_through(scenario, last, c.out.as_deref()).map_err(|(e, _)| match e.stage {
        Stage::Validate => Failure::Invalid(vec![e.message]),
        stage => Failure::Stage(stage, e.message),
    })?;
    for (stage, seconds) in &out.timings {
        eprintln!("{}", json!({ "timing": stage.to_string(), "seconds": seconds }));
    }
    Ok(out)
}

fn flow_certificate(out: &RunOutput) -> Value {
    let f = out.flow.summary();
    json!({
        "objective": f.objective,
        "gap": f.gap,
        "lower_bound": f.objective - f.gap,
        "relative_gap": f.relative_gap,
        "iterations": f.iterations,
        "converged": f.converged,
    })
}

fn summary(command: &str, scenario: &Scenario, last: Stage, out: &RunOutput) -> Value {
    let r = &out.report;
    let mut v = json!({
        "command": command,
        "scenario": scenario.name,
        "seed": scenario.params.seed,
        "flow": flow_certificate(out),
    });
    if last >= Stage::RecoverRoutes {
        v["routes"] = json!(out.routes.routes.len());
    }
    if last >= Stage::Schedule {
        v["vehicles_spawned"] = json!(r.vehicles_spawned);
        v["idle_routes"] = json!(r.idle_routes.len());
    }
    if last >= Stage::Coordinate {
        v["vehicles_completed"] = json!(r.vehicles_completed);
        v["dropped"] = json!(r.dropped.len());
    }
    if last >= Stage::Audit {
        v["schedule_findings"] = json!(r.schedule_audit.findings.len());
        v["safety_findings"] = json!(r.audit.findings.len());
        v["min_rear_gap"] = json!(r.audit.min_rear_gap);
        v["min_lateral_headway"] = json!(r.audit.min_lateral_headway);
        v["max_exit_residual"] = json!(r.audit.max_exit_residual);
    }
    v
}

fn dispatch(command: Command) -> Result<(), Failure> {
    let (name, last, c) = match &command {
        Command::Validate(c) => ("validate", Stage::Validate, c),
        Command::SolveFlow(c) => ("solve-flow", Stage::SolveFlow, c),
        Command::RecoverRoutes(c) => ("recover-routes", Stage::RecoverRoutes, c),
        Command::Schedule(c) => ("schedule", Stage::Schedule, c),
        Command::Coordinate(c) => ("coordinate", Stage::Coordinate, c),
        Command::Run(c) => ("run", Stage::Audit, c),
        Command::Audit(c) => ("audit", Stage::Audit, c),
    };
    let scenario = load(c)?;
    if last == Stage::Validate {
        let demands = scenario.demands().map_err(|e| Failure::Invalid(vec![e.to_string()]))?;
        println!(
            "{}",
            json!({
                "command": name,
                "scenario": scenario.name,
                "status": "ok",
                "nodes": scenario.nodes.len(),
                "edges": scenario.edges.len(),
                "demands": demands.len(),
            })
        );
        return Ok(());
    }
    let out = execute(&scenario, last, c)?;
    println!("{}", summary(name, &scenario, last, &out));
    if matches!(command, Command::Audit(_)) {
        let r = &out.report;
        let findings = r.audit.findings.len() + r.schedule_audit.findings.len();
        if findings > 0 {
            return Err(Failure::Stage(Stage::Audit, format!("{findings} audit findings")));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": first }));
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
