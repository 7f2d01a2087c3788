//! An LR system on SO(5) with two affine constraints built from wedge
//! products of basis vectors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nonholo::diagnostics::drift_report;
use nonholo::integrator::{integrate, IntegrateOptions};
use nonholo::liegroup::{so_dim, wedge, SoAlgebra};
use nonholo::models::{lr_project, InertiaOperator, LrParams, LrState, Model};

fn main() -> nonholo::Result<()> {
    let n = 5;
    let e = |k: usize| DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 });
    let a = vec![wedge(&e(0), &e(1))?, wedge(&e(2), &e(3))?];
    let zeta = &(&a[0] * 0.4) + &(&a[1] * -0.2);
    let j = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.3, 1.7, 2.0, 2.4]));
    let params = LrParams::new(InertiaOperator::from_body_matrix(&j)?, a, zeta)?;

    let omega: Vec<f64> = (0..so_dim(n)).map(|i| 0.5 * (1.3 * i as f64).sin()).collect();
    let start = lr_project(&params, &LrState::at_identity(&params, SoAlgebra::from_coords(n, &omega)?)?)?;
    let model = Arc::new(Model::LrSon(params));
    let names: Vec<String> = ["moving_energy", "energy", "constraint_residual"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let traj = integrate(
        &model.flow_problem(true, &names)?,
        &start.to_flat(),
        0.0,
        20.0,
        &IntegrateOptions::rk4(1e-3).record_every(100),
    )?;
    for name in &names[..2] {
        println!("{name:>14}: relative drift {:.3e}", drift_report(&traj, name)?.relative_drift);
    }
    let worst = traj.observable("constraint_residual")?.iter().cloned().fold(0.0, f64::max);
    println!("largest constraint residual: {worst:.3e}");
    Ok(())
}
