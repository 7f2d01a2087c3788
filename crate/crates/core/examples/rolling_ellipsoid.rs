//! Heavy ellipsoid rolling on a plane rotating with angular velocity
//! kappa. Prints the drifts of the energy and of the moving energy, and
//! the manifold residuals at the end of the run.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use nonholo::diagnostics::drift_report;
use nonholo::integrator::{integrate, IntegrateOptions};
use nonholo::models::{Model, RollingBodyParams, RollingBodyState, Shape};

fn main() -> nonholo::Result<()> {
    let params = RollingBodyParams::new(
        1.0,
        1.0,
        Matrix3::from_diagonal(&Vector3::new(0.4, 0.5, 0.6)),
        1.0,
        Shape::Ellipsoid {
            semi_axes: Vector3::new(1.0, 0.8, 0.6),
        },
    )?;
    let s0 = RollingBodyState::from_omega(
        &params,
        Vector3::new(0.2, 0.3, 0.932),
        &Vector3::new(0.4, -0.3, 0.5),
        Vector3::new(0.5, -0.2, 0.0),
    );
    let model = Arc::new(Model::RollingBody(params));
    let names: Vec<String> = ["energy", "moving_energy", "x_norm"].iter().map(|s| s.to_string()).collect();
    let traj = integrate(
        &model.flow_problem(true, &names)?,
        &s0.to_flat(),
        0.0,
        20.0,
        &IntegrateOptions::rk4(1e-3).record_every(100),
    )?;
    for name in ["energy", "moving_energy"] {
        let d = drift_report(&traj, name)?;
        println!(
            "{name:>14}: initial {:+.8}, relative drift {:.3e}",
            d.initial, d.relative_drift
        );
    }
    let x = traj.observable("x_norm")?;
    println!(
        "|X| ranges over [{:.4}, {:.4}]",
        x.iter().cloned().fold(f64::INFINITY, f64::min),
        x.iter().cloned().fold(0.0, f64::max)
    );
    for (name, v) in model.invariant_residuals(traj.last_state().unwrap())? {
        println!("residual {name}: {v:.3e}");
    }
    Ok(())
}
