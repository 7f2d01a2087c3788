//! Two different generators with the same moving energy: adding a field
//! that is A-orthogonal to the constraint distribution and to the shift
//! does not change the moving energy on the constraint manifold.

use nalgebra::{DVector, Matrix3, Vector3};
use nonholo::diagnostics::{add_orthogonal_complement, generator_equivalence_test, rng};
use nonholo::dynamics::VectorFieldOnQ;
use nonholo::models::{ChaplyginBallParams, ChartModel, ChartSystem};

fn main() -> nonholo::Result<()> {
    let ball = ChaplyginBallParams::new(1.0, 1.0, Matrix3::from_diagonal(&Vector3::new(1.0, 1.3, 1.7)), 1.0)?;
    let chart = ChartSystem::new(ChartModel::Chaplygin3d(ball))?;
    let sys = chart.system();
    let y1 = chart.generator();
    let v = VectorFieldOnQ::new(|q| DVector::from_vec(vec![q[2].cos(), 1.0, q[0], q[3].sin(), 0.7]));
    let y2 = add_orthogonal_complement(sys, &y1, &v);

    let qs = vec![
        DVector::from_vec(vec![0.1, 0.2, 0.3, 1.0, 2.0]),
        DVector::from_vec(vec![-1.0, 0.5, 2.0, 0.7, -1.0]),
    ];
    for q in &qs {
        println!(
            "q = {:?}\n  Y1 = {:?}\n  Y2 = {:?}",
            q.as_slice(),
            y1.eval(q).as_slice(),
            y2.eval(q).as_slice()
        );
    }
    let report = generator_equivalence_test(sys, &y1, &y2, &qs, 64, 10.0, &mut rng(3, 0))?;
    println!(
        "moving-energy gap {:.3e}, orthogonality residual {:.3e}, gyroscopic term present: {}",
        report.moving_energy_gap, report.orthogonality_residual, report.gyro_present
    );
    Ok(())
}
