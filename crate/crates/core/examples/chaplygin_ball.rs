//! Chaplygin ball on a rotating plane in the reduced variables (K, X,
//! gamma): the modified energy and K . gamma are conserved.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use nonholo::diagnostics::drift_report;
use nonholo::integrator::{integrate, IntegrateOptions};
use nonholo::models::{ChaplyginBallParams, Model, RollingBodyState};

fn main() -> nonholo::Result<()> {
    let ball = ChaplyginBallParams::new(1.0, 1.0, Matrix3::from_diagonal(&Vector3::new(1.0, 1.3, 1.7)), 1.0)?;
    let s0 = RollingBodyState::from_omega(
        &ball.as_rolling_body(),
        Vector3::new(0.1, 0.5, 0.86),
        &Vector3::new(0.6, -0.4, 0.3),
        Vector3::new(0.3, 0.1, 0.0),
    );
    let model = Arc::new(Model::Chaplygin3d(ball));
    let names: Vec<String> = ["tilde_energy", "energy", "k_dot_gamma"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let traj = integrate(
        &model.flow_problem(true, &names)?,
        &s0.to_flat(),
        0.0,
        50.0,
        &IntegrateOptions::rk4(1e-3).record_every(100),
    )?;
    for name in &names {
        let d = drift_report(&traj, name)?;
        println!("{name:>13}: initial {:+.8}, max drift {:.3e}", d.initial, d.max_abs_drift);
    }
    Ok(())
}
