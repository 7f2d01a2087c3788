//! A homogeneous ball on a fixed plane: the rolling constraint exerts no
//! reaction and the angular velocity stays constant.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use nonholo::diagnostics::{rng, sample_fiber_state};
use nonholo::integrator::{integrate, IntegrateOptions};
use nonholo::models::{omega_from_k_3d, ChartModel, ChartSystem, Model, RollingBodyParams, RollingBodyState, Shape};

fn main() -> nonholo::Result<()> {
    let params = RollingBodyParams::new(1.0, 9.81, Matrix3::identity() * 0.4, 0.0, Shape::Sphere { radius: 1.0 })?;

    let chart = ChartSystem::new(ChartModel::RollingBody(params.clone()))?;
    let sys = chart.system();
    let mut r = rng(1, 0);
    let q = nalgebra::DVector::from_vec(vec![0.3, -0.2, 0.5, 1.1, 2.0]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let st = sample_fiber_state(sys, &q, &mut r, 5.0)?;
        worst = worst.max(sys.reaction_force(&st)?.norm());
    }
    println!("largest |R| over 100 sampled velocities: {worst:.3e}");

    let model = Arc::new(Model::RollingBody(params.clone()));
    let s0 = RollingBodyState::from_omega(
        &params,
        Vector3::new(0.2, 0.1, 1.0),
        &Vector3::new(1.0, -0.5, 0.3),
        Vector3::zeros(),
    );
    let traj = integrate(
        &model.flow_problem(true, &[])?,
        &s0.to_flat(),
        0.0,
        10.0,
        &IntegrateOptions::rk4(1e-3).record_every(2500),
    )?;
    for (t, y) in traj.times.iter().zip(&traj.states) {
        let s = RollingBodyState::from_flat(y)?;
        let w = omega_from_k_3d(&params, &s.gamma, &s.k)?;
        println!("t = {t:5.2}  Omega = ({:+.12}, {:+.12}, {:+.12})", w.x, w.y, w.z);
    }
    Ok(())
}
