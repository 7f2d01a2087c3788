//! Evaluates the three conditions of the moving-energy criterion: (i) the
//! shifted generator annihilates the reactions, (ii) its lifted derivative
//! of L vanishes on the constraint manifold, (iii) the moving energy is
//! conserved. Any two imply the third.

use nalgebra::{DVector, Matrix3, Vector3};
use nonholo::diagnostics::{thm1_classifier, ClassifierOptions, ConditionReport};
use nonholo::dynamics::VectorFieldOnQ;
use nonholo::models::{ChartModel, ChartSystem, RollingBodyParams, RollingBodyState, Shape};

fn show(label: &str, r: &ConditionReport) {
    println!(
        "{label:<28} (i) {:<5} {:9.2e}  (ii) {:<5} {:9.2e}  (iii) {:<5} {:9.2e}  consistent {}",
        r.passes_i(),
        r.reaction_pairing,
        r.passes_ii(),
        r.lifted_derivative,
        r.passes_iii(),
        r.moving_energy_drift.relative_drift,
        r.implication_consistent()
    );
}

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
    let chart = ChartSystem::new(ChartModel::RollingBody(params.clone()))?;
    let start = RollingBodyState::from_omega(
        &params,
        Vector3::new(0.2, 0.3, 0.93),
        &Vector3::new(0.4, -0.3, 0.5),
        Vector3::zeros(),
    );
    let probe = chart.from_model_state(&start.to_flat(), 0.0)?;
    let qs = vec![probe.q.clone(), DVector::from_vec(vec![0.5, -0.3, 1.0, 1.2, 0.4])];
    let opts = ClassifierOptions {
        probe_state: Some(probe),
        probe_horizon: 3.0,
        seed: 42,
        ..Default::default()
    };

    let sys = chart.system();
    show(
        "rotation generator Y_kappa",
        &thm1_classifier(sys, &chart.generator(), &qs, &opts)?,
    );
    show("zero field", &thm1_classifier(sys, &VectorFieldOnQ::zero(5), &qs, &opts)?);
    let arbitrary = VectorFieldOnQ::new(|q| DVector::from_vec(vec![q[1].sin(), q[0], 0.3, 0.0, 0.1]));
    show("arbitrary field", &thm1_classifier(sys, &arbitrary, &qs, &opts)?);
    Ok(())
}
