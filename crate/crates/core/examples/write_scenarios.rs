//! Regenerates the bundled scenario files under `scenarios/`.
//!
//! Usage: `cargo run -p cavflow --example write_scenarios [output-dir]`

use std::path::PathBuf;

use cavflow::harness::scenario::Scenario;
use cavflow::harness::{grid_scenario, single_intersection_scenario};

/// Seed of the bundled grid demands.
const GRID_SEED: u64 = 2024;

const HEADER: &str = "\
# Units: positions, lengths, lane offset and radii in meters; times in
# seconds; capacities and demand rates in vehicles per second; speeds in m/s;
# inputs (accelerations) in m/s^2. Link parameters and safety limits are
# synthetic values.
";

fn write(dir: &std::path::Path, s: &Scenario) -> std::io::Result<()> {
    let path = dir.join(format!("{}.toml", s.name));
    std::fs::write(&path, format!("{HEADER}\n{}", s.to_toml()))?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> std::io::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("scenarios"));
    std::fs::create_dir_all(&dir)?;
    write(&dir, &grid_scenario(GRID_SEED))?;
    write(&dir, &single_intersection_scenario())?;
    Ok(())
}
