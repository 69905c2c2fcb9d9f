//! How far the decentralized strategies are from the exact optimum for
//! populations small enough to enumerate.
//!
//! `cargo run --release --example finite_population_gap`

use collective_choice::population::convergence_experiment;
use collective_choice::scenario::Scenario;

fn main() -> collective_choice::error::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/scalar_pair.json");
    let s = Scenario::load(path)?;
    let table = convergence_experiment(&s, &[1, 2, 3, 4, 5, 6, 7, 8], 0)?;
    println!("{:>2} {:>12} {:>14} {:>10}", "N", "exact J*/N", "decentralized", "gap");
    for row in &table.rows {
        println!("{:>2} {:>12.6} {:>14.6} {:>10.2e}", row.n, row.exact, row.decentralized, row.gap);
    }
    Ok(())
}
