//! Existence diagnostics for a scenario file (defaults to the shipped
//! two-site scenario).
//!
//! `cargo run --release --example assumptions -- path/to/scenario.json`

use collective_choice::meanfield::check_assumptions;
use collective_choice::scenario::Scenario;

fn main() -> collective_choice::error::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/two_site.json").into());
    for q in [0.0, 1.0, 40.0] {
        let s = Scenario::load(&path)?;
        let s = s.with_coupling(s.coupling.with_q(q));
        let report = check_assumptions(&s)?;
        println!(
            "q = {q:>4}: k1 {:.3e}  k2 {:.3e}  k3 {:.3e}  bound {:.3} ({})  eig(L) {:?}",
            report.k1,
            report.k2,
            report.k3,
            report.bound,
            if report.bound_holds { "holds" } else { "fails" },
            report.l_eigenvalues
        );
    }
    Ok(())
}
