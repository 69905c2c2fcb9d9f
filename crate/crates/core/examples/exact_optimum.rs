//! Exact social optimum of two scalar agents by enumerating all four
//! destination assignments.
//!
//! `cargo run --release --example exact_optimum`

use collective_choice::centralized::exact_social_optimum;
use collective_choice::scenario::{AgentsFile, Scenario};

fn main() -> collective_choice::error::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    let s = Scenario::load(format!("{dir}/scalar_pair.json"))?;
    let agents = AgentsFile::load(format!("{dir}/scalar_pair_agents.json"))?.resolve(&s)?;
    let solution = exact_social_optimum(&s, &agents)?;
    for (d, cost) in &solution.table {
        println!("{d:?}: {cost:.6}");
    }
    println!("optimum {:?} with J* = {:.6}", solution.assignment(), solution.cost());

    let simulated = solution.optimum.simulated_cost(&solution.system)?;
    println!("closed-loop simulation of the optimum: {simulated:.6}");
    Ok(())
}
