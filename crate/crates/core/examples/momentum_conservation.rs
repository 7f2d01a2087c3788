//! Momenta of right-invariant fields on the Veselova chart: conserved for
//! generators orthogonal to the constraint axis, not for a generic one.

use nalgebra::{Matrix3, Vector3};
use nonholo::diagnostics::{momentum_conservation_test, Probe};
use nonholo::liegroup::hat;
use nonholo::models::{lr_project, ChartSystem, LrParams, LrState};

fn main() -> nonholo::Result<()> {
    let params = LrParams::veselova(&Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0)), 1.0)?;
    let chart = ChartSystem::veselova(&params)?;
    let start = LrState {
        gammas: vec![hat(&Vector3::new(0.3, 0.4, 0.866).normalize())],
        omega: hat(&Vector3::new(0.5, -0.8, 0.7)),
    };
    let state = chart.from_model_state(&lr_project(&params, &start)?.to_flat(), 0.0)?;
    let probe = Probe {
        state,
        horizon: 10.0,
        h: 1e-3,
    };
    for xi in [Vector3::x(), Vector3::y(), Vector3::new(0.3, 0.5, 1.0)] {
        let y = chart.right_invariant_field(xi)?;
        let d = momentum_conservation_test(chart.system(), &y, &probe)?;
        println!(
            "xi = ({:+.1}, {:+.1}, {:+.1}): J drift {:.3e}",
            xi.x, xi.y, xi.z, d.max_abs_drift
        );
    }
    Ok(())
}
