//! Distance between the empirical mean path of N agents and the limiting
//! mean path, for growing N.
//!
//! `cargo run --release --example mean_path_convergence`

use collective_choice::meanfield::find_fixed_point;
use collective_choice::population::{mean_path_residual, sample_population, simulate_decentralized};
use collective_choice::scenario::{CouplingMode, Scenario};

fn main() -> collective_choice::error::Result<()> {
    let s = Scenario::two_site_example(40.0, CouplingMode::Cooperative, 2000);
    let mf = find_fixed_point(&s)?;
    for n in [100, 400, 1600, 6400] {
        let mut residual = 0.0;
        for seed in 0..5 {
            let run = simulate_decentralized(&sample_population(&s, n, seed)?, &mf, &s.grid)?;
            residual += mean_path_residual(&run, &mf)? / 5.0;
        }
        println!("N = {n:>5}: mean squared path error {residual:.4e}");
    }
    Ok(())
}
