//! Riccati bundles of a single agent: the cost of committing to each
//! destination, checked against simulating the closed loop.
//!
//! `cargo run --release --example branch_costs`

use collective_choice::riccati::RiccatiBundle;
use collective_choice::scenario::{CouplingMode, Scenario};
use nalgebra::DVector;

fn main() -> collective_choice::error::Result<()> {
    let s = Scenario::two_site_example(0.0, CouplingMode::Cooperative, 2000);
    let x0 = DVector::from_vec(vec![-5.0, 10.0]);
    for (j, p) in s.destinations.iter().enumerate() {
        let b = RiccatiBundle::solve(&s.atoms[0], j, p, &s.coupling, None, &s.grid)?;
        let end = b.closed_loop_trajectory(&x0)?.last().clone();
        println!(
            "destination {j}: branch cost {:.4}, simulated {:.4}, ends at ({:.3}, {:.3})",
            b.branch_cost(&x0),
            b.simulated_cost(&x0)?,
            end[0],
            end[1]
        );
    }
    Ok(())
}
