//! Veselova body with the affine constraint `omega . e3 = c`: the energy
//! drifts while the moving energy is conserved.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use nonholo::diagnostics::drift_report;
use nonholo::integrator::{integrate, IntegrateOptions};
use nonholo::liegroup::hat;
use nonholo::models::{lr_project, LrParams, LrState, Model};

fn main() -> nonholo::Result<()> {
    let tensor = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0));
    for c in [0.0, 1.0] {
        let params = LrParams::veselova(&tensor, c)?;
        let start = LrState {
            gammas: vec![hat(&Vector3::new(0.3, 0.4, 0.866).normalize())],
            omega: hat(&Vector3::new(0.5, -0.8, 0.7)),
        };
        let start = lr_project(&params, &start)?;
        let model = Arc::new(Model::Veselova3d(params));
        let observables = ["energy".to_string(), "moving_energy".to_string()];
        let problem = model.flow_problem(true, &observables)?;
        let traj = integrate(
            &problem,
            &start.to_flat(),
            0.0,
            50.0,
            &IntegrateOptions::rk4(1e-3).record_every(100),
        )?;
        let e = drift_report(&traj, "energy")?;
        let m = drift_report(&traj, "moving_energy")?;
        println!(
            "c = {c}: energy drift {:.3e}, moving-energy drift {:.3e}",
            e.relative_drift, m.relative_drift
        );
    }
    Ok(())
}
