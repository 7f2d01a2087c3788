//! Measures the convergence order of the fixed-step RK4 integrator from
//! the moving-energy drift of the rolling ellipsoid.

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
    let problem = model.flow_problem(true, &["moving_energy".to_string()])?;
    let mut previous: Option<f64> = None;
    for h in [1e-2, 5e-3, 2.5e-3, 1.25e-3] {
        let traj = integrate(&problem, &s0.to_flat(), 0.0, 10.0, &IntegrateOptions::rk4(h))?;
        let drift = drift_report(&traj, "moving_energy")?.max_abs_drift;
        match previous {
            Some(p) => println!("h = {h:.2e}: drift {drift:.3e}, observed order {:.2}", (p / drift).log2()),
            None => println!("h = {h:.2e}: drift {drift:.3e}"),
        }
        previous = Some(drift);
    }
    Ok(())
}
