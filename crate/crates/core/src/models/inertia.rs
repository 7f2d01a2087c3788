use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::liegroup::{hat, so3_coords_to_vec3, so_dim, son_basis, vec3_to_so3_coords, SoAlgebra};

/// Symmetric positive definite inertia operator `so(n) -> so(n)`, held as
/// its matrix in the Killing-orthonormal coordinates of [`son_basis`].
#[derive(Debug, Clone)]
pub struct InertiaOperator {
    n: usize,
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl InertiaOperator {
    /// Arbitrary SPD operator given in so(n) coordinates.
    pub fn from_coord_matrix(n: usize, m: DMatrix<f64>) -> Result<Self> {
        let d = so_dim(n);
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: m.nrows(),
            });
        }
        if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
            return Err(Error::invalid("inertia", "operator must be symmetric"));
        }
        let m = (&m + m.transpose()) * 0.5;
        let chol = Cholesky::new(m.clone()).ok_or_else(|| Error::invalid("inertia", "operator must be positive definite"))?;
        Ok(InertiaOperator { n, matrix: m, chol })
    }

    /// The rigid-body operator `Omega -> J Omega + Omega J` for a symmetric
    /// positive definite mass matrix `J`.
    pub fn from_body_matrix(j: &DMatrix<f64>) -> Result<Self> {
        if !j.is_square() {
            return Err(Error::invalid("inertia", "J must be square"));
        }
        if Cholesky::new(j.clone()).is_none() || (j - j.transpose()).amax() > 1e-12 * j.amax().max(1.0) {
            return Err(Error::invalid("inertia", "J must be symmetric positive definite"));
        }
        let n = j.nrows();
        let basis = son_basis(n);
        let cols: Vec<DVector<f64>> = basis
            .iter()
            .map(|e| SoAlgebra::from_matrix(&(j * e.matrix() + e.matrix() * j)).coords())
            .collect();
        InertiaOperator::from_coord_matrix(n, DMatrix::from_columns(&cols))
    }

    pub fn isotropic(n: usize, lambda: f64) -> Result<Self> {
        let d = so_dim(n);
        InertiaOperator::from_coord_matrix(n, DMatrix::identity(d, d) * lambda)
    }

    /// The operator corresponding to a 3x3 inertia tensor acting on angular
    /// velocity vectors through the hat map.
    pub fn from_tensor3(t: &Matrix3<f64>) -> Result<Self> {
        let cols: Vec<DVector<f64>> = (0..3)
            .map(|i| {
                let e = SoAlgebra::from_coords(3, &unit(3, i)).expect("so(3) coords");
                let v = so3_coords_to_vec3(&e.coords());
                vec3_to_so3_coords(&(t * v))
            })
            .collect();
        InertiaOperator::from_coord_matrix(3, DMatrix::from_columns(&cols))
    }

    /// 3x3 tensor form of an so(3) operator, `hat(T w) = I(hat(w))`.
    pub fn tensor3(&self) -> Result<Matrix3<f64>> {
        if self.n != 3 {
            return Err(Error::Dimension {
                expected: 3,
                got: self.n,
            });
        }
        let mut t = Matrix3::zeros();
        for i in 0..3 {
            let e = Vector3::ith(i, 1.0);
            let img = self.apply(&hat(&e));
            t.set_column(i, &so3_coords_to_vec3(&img.coords()));
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coord_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, omega: &SoAlgebra) -> SoAlgebra {
        let c = &self.matrix * omega.coords();
        SoAlgebra::from_coords(self.n, c.as_slice()).expect("dimension checked at construction")
    }

    pub fn solve(&self, m: &SoAlgebra) -> SoAlgebra {
        let c = self.chol.solve(&m.coords());
        SoAlgebra::from_coords(self.n, c.as_slice()).expect("dimension checked at construction")
    }
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    (0..d).map(|k| if k == i { 1.0 } else { 0.0 }).collect()
}
