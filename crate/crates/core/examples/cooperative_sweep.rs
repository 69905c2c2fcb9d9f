//! Cooperative vs noncooperative agents as the coupling strength grows.
//!
//! `cargo run --release --example cooperative_sweep`

use collective_choice::meanfield::{asymptotic_social_cost, find_fixed_point};
use collective_choice::population::{sample_population, simulate_decentralized};
use collective_choice::scenario::{CouplingMode, Scenario};

fn main() -> collective_choice::error::Result<()> {
    println!("{:>4} {:>8} {:>8} {:>12} {:>12}", "q", "mode", "to p2", "N=400 cost", "limit cost");
    for q in [0.0, 10.0, 20.0, 30.0, 40.0] {
        for mode in [CouplingMode::Cooperative, CouplingMode::Noncooperative] {
            let s = Scenario::two_site_example(q, mode, 2000);
            let mf = find_fixed_point(&s)?;
            let run = simulate_decentralized(&sample_population(&s, 400, s.seed)?, &mf, &s.grid)?;
            println!(
                "{q:>4} {:>8} {:>8.4} {:>12.1} {:>12.1}",
                mode.label(),
                mf.fractions()[1],
                run.per_agent_cost(),
                asymptotic_social_cost(&mf)
            );
        }
    }
    Ok(())
}
