//! Terminal distance to the assigned destinations as the terminal weight grows.
//!
//! `cargo run --release --example reachability`

use collective_choice::centralized::reachability_probe;
use collective_choice::scenario::{AgentsFile, Scenario};

fn main() -> collective_choice::error::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    let s = Scenario::load(format!("{dir}/scalar_pair.json"))?;
    let agents = AgentsFile::load(format!("{dir}/scalar_pair_agents.json"))?.resolve(&s)?;
    let report = reachability_probe(&s, &agents, 0.05, &[1e1, 1e2, 1e3, 1e4])?;
    for row in &report.rows {
        println!("M = {:>7}: {:?}, distance {:.3e}", row.terminal_weight, row.assignment, row.assigned_distance);
    }
    println!("first weight within 0.05: {:?}", report.first_within);
    Ok(())
}
