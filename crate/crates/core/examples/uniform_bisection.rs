//! Split of a uniform population found by bisection on the fraction map,
//! compared with plain Picard iteration on the mean path.
//!
//! `cargo run --release --example uniform_bisection`

use collective_choice::meanfield::find_fixed_point;
use collective_choice::scenario::{CouplingMode, Scenario};
use collective_choice::uniform::UniformSolver;

fn main() -> collective_choice::error::Result<()> {
    let s = Scenario::two_site_example(40.0, CouplingMode::Cooperative, 2000);
    let solver = UniformSolver::new(&s)?;
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let f = solver.fraction_map(&[lambda, 1.0 - lambda])?;
        println!("F({lambda:.2}) = {:.5}", f[0]);
    }
    let sol = solver.solve_lambda_bisection(1e-10)?;
    println!("bisection: lambda = {:.6} after {} steps", sol.lambda[0], sol.steps);

    let mf = find_fixed_point(&s)?;
    println!("picard:    lambda = {:.6} after {} iterations", mf.fractions()[0], mf.iterations);
    println!("mean path gap {:.2e}", sol.xbar.sup_distance(&mf.xbar));
    Ok(())
}
