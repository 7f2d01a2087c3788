//! Runs a scenario from text without touching the file system and prints
//! the report records.

use nonholo::scenario::{execute, parse_scenario};

const SCENARIO: &str = "
[scenario]
name = veselova-quick
seed = 1

[model]
id = veselova-3d
inertia = 1, 2, 3
c = 1

[initial]
gamma = 0.3, 0.4, 0.866
omega = 0.5, -0.8, 0.7

[integrator]
t_end = 5
record_every = 100

[output]
observables = moving_energy, energy

[diagnostics]
drift = moving_energy, energy
conditions = true
";

fn main() -> nonholo::Result<()> {
    let scenario = parse_scenario(SCENARIO)?;
    println!("columns: {}", scenario.csv_header().join(", "));
    let summary = execute(&scenario, None)?;
    println!("{}", summary.report_text());
    Ok(())
}
