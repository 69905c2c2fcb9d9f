//! Loading, validating and writing scenario files.
//!
//! `cargo run --example scenario_files`

use collective_choice::scenario::Scenario;

fn main() -> collective_choice::error::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/two_site.json");
    let s = Scenario::load(path)?;
    println!(
        "n = {}, m = {}, l = {}, T = {}, K = {}, q = {}",
        s.state_dim(),
        s.input_dim(),
        s.destination_count(),
        s.grid.horizon(),
        s.grid.steps(),
        s.coupling.q
    );
    let again = Scenario::from_json(&s.to_json())?;
    println!("round trip identical: {}", again == s);

    let broken = s.to_json().replace("\"r\": 10.0", "\"r\": -1.0");
    match Scenario::from_json(&broken) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
