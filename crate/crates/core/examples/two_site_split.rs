//! Mean-field split of 400 agents between two sites with no social coupling.
//!
//! `cargo run --release --example two_site_split`

use collective_choice::meanfield::find_fixed_point;
use collective_choice::population::{sample_population, simulate_decentralized};
use collective_choice::scenario::{CouplingMode, Scenario};

fn main() -> collective_choice::error::Result<()> {
    let scenario = Scenario::two_site_example(0.0, CouplingMode::Cooperative, 2000);
    let mf = find_fixed_point(&scenario)?;
    println!("limit fractions: {:?} ({} iteration)", mf.fractions(), mf.iterations);

    let sample = sample_population(&scenario, 400, scenario.seed)?;
    let run = simulate_decentralized(&sample, &mf, &scenario.grid)?;
    println!("400 agents:      {:?}", run.fractions());
    println!("per-agent social cost {:.2}", run.per_agent_cost());
    Ok(())
}
