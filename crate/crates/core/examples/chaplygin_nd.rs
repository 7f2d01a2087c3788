//! Four-dimensional Chaplygin sphere on a rotating hyperplane. Integrates
//! the full and the reduced systems side by side and compares them.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nonholo::diagnostics::drift_report;
use nonholo::integrator::{integrate, IntegrateOptions};
use nonholo::liegroup::{exp_map, so_dim, SoAlgebra};
use nonholo::models::{chapnd_reduce_flat, eta_on_plane, ChapNdFullState, ChaplyginNdParams, InertiaOperator, Model};

fn main() -> nonholo::Result<()> {
    let n = 4;
    let j = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.7, 0.9, 1.1]));
    let params = ChaplyginNdParams::new(1.0, 1.0, InertiaOperator::from_body_matrix(&j)?, eta_on_plane(n, 0.3, 1, 2)?)?;

    let attitude: Vec<f64> = (0..so_dim(n)).map(|i| 0.3 * (i as f64 + 0.5).sin()).collect();
    let omega: Vec<f64> = (0..so_dim(n)).map(|i| 0.6 * (0.7 * i as f64).cos()).collect();
    let full = ChapNdFullState::from_omega(
        &params,
        DVector::from_vec(vec![0.3, 0.1, -0.1, 0.0]),
        exp_map(&SoAlgebra::from_coords(n, &attitude)?)?,
        &SoAlgebra::from_coords(n, &omega)?,
    );

    let names = vec!["moving_energy".to_string(), "energy".to_string()];
    let opts = IntegrateOptions::rk4(1e-3).record_every(500);
    let full_model = Arc::new(Model::ChaplyginNd(params.clone()));
    let reduced_model = Arc::new(Model::ChaplyginNdReduced(params.clone()));
    let ft = integrate(&full_model.flow_problem(true, &names)?, &full.to_flat(), 0.0, 10.0, &opts)?;
    let rt = integrate(
        &reduced_model.flow_problem(true, &names)?,
        &full.reduce(&params).to_flat(),
        0.0,
        10.0,
        &opts,
    )?;

    for (t, (yf, yr)) in ft.times.iter().zip(ft.states.iter().zip(&rt.states)) {
        let gap = (chapnd_reduce_flat(&params, yf)? - yr).amax();
        println!("t = {t:5.2}  |reduce(full) - reduced| = {gap:.3e}");
    }
    for (label, traj) in [("full", &ft), ("reduced", &rt)] {
        let m = drift_report(traj, "moving_energy")?;
        let e = drift_report(traj, "energy")?;
        println!(
            "{label:>8}: moving-energy drift {:.3e}, energy drift {:.3e}",
            m.relative_drift, e.relative_drift
        );
    }
    Ok(())
}
