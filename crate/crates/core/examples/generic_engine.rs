//! A particle on the plane under gravity with the affine constraint
//! `qdot1 + qdot2 + 1 = 0`, assembled from callbacks. Prints the reaction
//! force, integrates, and compares the energy with two moving energies:
//! that of the minimal-norm shift `Z0 = (-1/2, -1/2)` (not conserved) and
//! that of `Y = (-1, 0)`, which differs from `Z0` by a constraint
//! direction and leaves the potential invariant (conserved).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nonholo::diagnostics::drift_report;
use nonholo::dynamics::{MechanicalSystem, State, VectorFieldOnQ};
use nonholo::integrator::{integrate, IntegrateOptions};

fn main() -> nonholo::Result<()> {
    let sys = Arc::new(
        MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .potential(|q| q[1])
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 1.0]))
            .shift(|_| DVector::from_element(1, 1.0))
            .build()?,
    );

    let state = sys.project_velocity(&State::from_slices(&[0.0, 0.0], &[0.2, 0.1]))?;
    let (reaction, accel) = sys.reaction_and_accelerations(&state)?;
    println!("start qdot = {:?}", state.qdot.as_slice());
    println!("reaction R = {:?}", reaction.as_slice());
    println!("qddot      = {:?}", accel.as_slice());

    let z0 = VectorFieldOnQ::constant(sys.constraint_geometry(&state.q, &state.qdot)?.z0);
    let y = VectorFieldOnQ::constant(DVector::from_vec(vec![-1.0, 0.0]));
    let (s1, s2, s3) = (Arc::clone(&sys), Arc::clone(&sys), Arc::clone(&sys));
    let problem = sys
        .flow_problem(true)
        .with_observable("energy", move |v| s1.energy(&State::from_flat(v, 0.0)))
        .with_observable("moving_energy_z0", move |v| s2.moving_energy(&State::from_flat(v, 0.0), &z0))
        .with_observable("moving_energy_y", move |v| s3.moving_energy(&State::from_flat(v, 0.0), &y));
    let traj = integrate(
        &problem,
        &state.to_flat(),
        0.0,
        10.0,
        &IntegrateOptions::rk4(1e-3).record_every(100),
    )?;

    for name in ["energy", "moving_energy_z0", "moving_energy_y"] {
        let d = drift_report(&traj, name)?;
        println!("{name:>16}: initial {:+.6}, max drift {:.3e}", d.initial, d.max_abs_drift);
    }
    Ok(())
}
