//! Limiting per-agent social cost: closed form against a Monte Carlo
//! population evaluated on the limiting mean path.
//!
//! `cargo run --release --example asymptotic_cost`

use collective_choice::meanfield::{asymptotic_social_cost, expected_branch_cost, find_fixed_point};
use collective_choice::population::monte_carlo_social_cost;
use collective_choice::scenario::{CouplingMode, Scenario};

fn main() -> collective_choice::error::Result<()> {
    for q in [0.0, 20.0, 40.0] {
        let s = Scenario::two_site_example(q, CouplingMode::Cooperative, 2000);
        let mf = find_fixed_point(&s)?;
        let formula = asymptotic_social_cost(&mf);
        let mc = monte_carlo_social_cost(&mf, 10_000, 1)?;
        println!(
            "q = {q:>4}: E[branch cost] {:.2}, formula {formula:.2}, Monte Carlo {mc:.2} ({:+.3}%)",
            expected_branch_cost(&mf),
            100.0 * (mc - formula) / formula
        );
    }
    Ok(())
}
