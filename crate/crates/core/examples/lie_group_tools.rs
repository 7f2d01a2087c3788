//! so(n) coordinates, the exponential map, the adjoint action, the hat map
//! and re-orthonormalization of a drifted rotation.

use nalgebra::{DMatrix, Vector3};
use nonholo::liegroup::{adjoint, exp_map, hat, killing_pair, reorthonormalize, rodrigues, so_dim, unhat, wedge, SoAlgebra};

fn main() -> nonholo::Result<()> {
    let n = 4;
    let xi = SoAlgebra::from_coords(n, &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6])?;
    let eta = SoAlgebra::from_coords(n, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0])?;
    println!("dim so({n}) = {}", so_dim(n));
    println!("<xi, eta> = {:.6}", killing_pair(&xi, &eta));

    let g = exp_map(&xi)?;
    println!(
        "|g^T g - I| = {:.3e}, det g = {:.12}",
        g.orthogonality_residual(),
        g.matrix().determinant()
    );
    let moved = (adjoint(&g, &xi), adjoint(&g, &eta));
    println!("<Ad xi, Ad eta> = {:.6}", killing_pair(&moved.0, &moved.1));

    let a = Vector3::new(0.3, -1.0, 2.0);
    let b = Vector3::new(1.0, 0.5, -0.2);
    println!(
        "unhat([hat a, hat b]) = {:?}, a x b = {:?}",
        unhat(&hat(&a).bracket(&hat(&b)))?.as_slice(),
        a.cross(&b).as_slice()
    );
    let w = wedge(
        &nalgebra::DVector::from_column_slice(a.as_slice()),
        &nalgebra::DVector::from_column_slice(b.as_slice()),
    )?;
    println!(
        "wedge(a, b) = hat(b x a): {}",
        (w.matrix() - hat(&b.cross(&a)).matrix()).amax() < 1e-15
    );

    let r = rodrigues(&a);
    let drifted = DMatrix::from_fn(3, 3, |i, j| r[(i, j)] + 1e-6 * ((i * 3 + j) as f64).sin());
    let fixed = reorthonormalize(&drifted)?;
    println!(
        "drift before {:.3e}, after {:.3e}",
        (drifted.transpose() * &drifted - DMatrix::identity(3, 3)).amax(),
        fixed.orthogonality_residual()
    );
    Ok(())
}
