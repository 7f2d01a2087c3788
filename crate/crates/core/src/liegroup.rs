//! Matrix Lie group utilities for SO(n) and its algebra so(n).
//!
//! Elements of so(n) are stored as dense skew-symmetric matrices. The
//! coordinate vector of an element is taken in the basis
//! `{ wedge(e_i, e_j) : i < j }` enumerated lexicographically
//! `(0,1), (0,2), ..., (0,n-1), (1,2), ...`, so coordinate `(i,j)` is the
//! matrix entry `xi[(i, j)]`. That basis is orthonormal for the Killing
//! pairing, hence the Euclidean dot product of coordinate vectors equals
//! [`killing_pair`].

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

/// An element of so(n), stored as a skew-symmetric `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SoAlgebra {
    m: DMatrix<f64>,
}

/// An element of SO(n).
#[derive(Debug, Clone, PartialEq)]
pub struct SoElement {
    m: DMatrix<f64>,
}

/// Dimension of so(n).
pub fn so_dim(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Position of the pair `(i, j)`, `i < j`, in the coordinate ordering.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl SoAlgebra {
    /// Skew-symmetric part `(m - m^T) / 2` of a square matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        assert!(m.is_square(), "so(n) element must be square");
        SoAlgebra {
            m: (m - m.transpose()) * 0.5,
        }
    }

    pub fn zeros(n: usize) -> Self {
        SoAlgebra { m: DMatrix::zeros(n, n) }
    }

    pub fn from_coords(n: usize, coords: &[f64]) -> Result<Self> {
        if coords.len() != so_dim(n) {
            return Err(Error::Dimension {
                expected: so_dim(n),
                got: coords.len(),
            });
        }
        let mut m = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                m[(i, j)] = coords[idx];
                m[(j, i)] = -coords[idx];
                idx += 1;
            }
        }
        Ok(SoAlgebra { m })
    }

    pub fn coords(&self) -> DVector<f64> {
        let n = self.dim();
        let mut c = DVector::zeros(so_dim(n));
        let mut idx = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                c[idx] = self.m[(i, j)];
                idx += 1;
            }
        }
        c
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// Matrix commutator `[self, other] = self*other - other*self`.
    pub fn bracket(&self, other: &SoAlgebra) -> SoAlgebra {
        SoAlgebra::from_matrix(&(&self.m * &other.m - &other.m * &self.m))
    }

    pub fn norm(&self) -> f64 {
        killing_pair(self, self).sqrt()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.m * v
    }
}

impl Add for &SoAlgebra {
    type Output = SoAlgebra;
    fn add(self, rhs: &SoAlgebra) -> SoAlgebra {
        SoAlgebra { m: &self.m + &rhs.m }
    }
}

impl Sub for &SoAlgebra {
    type Output = SoAlgebra;
    fn sub(self, rhs: &SoAlgebra) -> SoAlgebra {
        SoAlgebra { m: &self.m - &rhs.m }
    }
}

impl Mul<f64> for &SoAlgebra {
    type Output = SoAlgebra;
    fn mul(self, rhs: f64) -> SoAlgebra {
        SoAlgebra { m: &self.m * rhs }
    }
}

impl Neg for &SoAlgebra {
    type Output = SoAlgebra;
    fn neg(self) -> SoAlgebra {
        SoAlgebra { m: -&self.m }
    }
}

impl SoElement {
    pub fn identity(n: usize) -> Self {
        SoElement {
            m: DMatrix::identity(n, n),
        }
    }

    /// Wraps a matrix that is already known to be special orthogonal.
    /// Use [`reorthonormalize`] when that is not guaranteed.
    pub fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        SoElement { m }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn inverse(&self) -> SoElement {
        SoElement { m: self.m.transpose() }
    }

    pub fn compose(&self, other: &SoElement) -> SoElement {
        SoElement { m: &self.m * &other.m }
    }

    /// `max |g^T g - Id|` entrywise.
    pub fn orthogonality_residual(&self) -> f64 {
        let n = self.dim();
        (self.m.transpose() * &self.m - DMatrix::<f64>::identity(n, n)).amax()
    }
}

/// The hat map `R^3 -> so(3)`, `hat(a) b = a x b`.
pub fn hat(a: &Vector3<f64>) -> SoAlgebra {
    SoAlgebra {
        m: DMatrix::from_column_slice(3, 3, hat3(a).as_slice()),
    }
}

/// Inverse of [`hat`].
pub fn unhat(xi: &SoAlgebra) -> Result<Vector3<f64>> {
    if xi.dim() != 3 {
        return Err(Error::Dimension {
            expected: 3,
            got: xi.dim(),
        });
    }
    let m = &xi.m;
    Ok(Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]))
}

/// Fixed-size hat map, for the three-dimensional models.
pub fn hat3(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// `a ^ b = a b^T - b a^T`.
pub fn wedge(a: &DVector<f64>, b: &DVector<f64>) -> Result<SoAlgebra> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(SoAlgebra {
        m: a * b.transpose() - b * a.transpose(),
    })
}

/// Killing pairing `-1/2 Trace(xi1 xi2)`.
pub fn killing_pair(xi1: &SoAlgebra, xi2: &SoAlgebra) -> f64 {
    // -1/2 tr(A B) = 1/2 sum_ij A_ij B_ij for skew A, B.
    0.5 * xi1.m.component_mul(&xi2.m).sum()
}

/// `Ad_g xi = g xi g^{-1}`.
pub fn adjoint(g: &SoElement, xi: &SoAlgebra) -> SoAlgebra {
    SoAlgebra::from_matrix(&(&g.m * &xi.m * g.m.transpose()))
}

/// Killing-orthonormal basis `{wedge(e_i, e_j)}_{i<j}` in coordinate order.
pub fn son_basis(n: usize) -> Vec<SoAlgebra> {
    let mut basis = Vec::with_capacity(so_dim(n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut m = DMatrix::zeros(n, n);
            m[(i, j)] = 1.0;
            m[(j, i)] = -1.0;
            basis.push(SoAlgebra { m });
        }
    }
    basis
}

/// Group exponential. Rodrigues' formula for n = 3, scaling and squaring
/// of the Taylor series otherwise; the result is reorthonormalized.
pub fn exp_map(xi: &SoAlgebra) -> Result<SoElement> {
    let n = xi.dim();
    if n == 3 {
        let w = unhat(xi)?;
        let m = rodrigues(&w);
        return reorthonormalize(&DMatrix::from_column_slice(3, 3, m.as_slice()));
    }
    let norm = xi.m.norm();
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let a = &xi.m / 2f64.powi(squarings as i32);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=18 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    reorthonormalize(&sum)
}

/// Rodrigues' rotation formula `exp(hat(w))`.
pub fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat3(w);
    let (a, b) = if theta < 1e-4 {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Nearest special orthogonal matrix (orthogonal polar factor), computed
/// by the Newton iteration `X <- (X + X^{-T}) / 2`.
pub fn reorthonormalize(m: &DMatrix<f64>) -> Result<SoElement> {
    if !m.is_square() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let det = m.determinant();
    if !det.is_finite() || det <= 0.0 {
        return Err(Error::Orientation { det });
    }
    let mut x = m.clone();
    for _ in 0..60 {
        let inv_t = x.clone().try_inverse().ok_or(Error::Orientation { det })?.transpose();
        let next = (&x + inv_t) * 0.5;
        let change = (&next - &x).amax();
        x = next;
        if change < 1e-15 {
            break;
        }
    }
    if x.determinant() < 0.0 {
        return Err(Error::Orientation { det: x.determinant() });
    }
    Ok(SoElement { m: x })
}

/// Rotation by `theta` about the third axis.
pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Converts a 3-vector in the hat identification to so(3) coordinates.
pub fn vec3_to_so3_coords(v: &Vector3<f64>) -> DVector<f64> {
    hat(v).coords()
}

/// Inverse of [`vec3_to_so3_coords`].
pub fn so3_coords_to_vec3(c: &DVector<f64>) -> Vector3<f64> {
    // coords are (xi01, xi02, xi12) = (-v3, v2, -v1)
    Vector3::new(-c[2], c[1], -c[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_skew(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> SoAlgebra {
        let c: Vec<f64> = (0..so_dim(n)).map(|_| rng.gen_range(-scale..scale)).collect();
        SoAlgebra::from_coords(n, &c).unwrap()
    }

    fn random_rotation(n: usize, rng: &mut ChaCha8Rng) -> SoElement {
        exp_map(&random_skew(n, rng, 2.0)).unwrap()
    }

    #[test]
    fn hat_is_cross_product() {
        let e1 = Vector3::x();
        let e3 = Vector3::z();
        let r = hat(&e3).matrix() * DVector::from_column_slice(e1.as_slice());
        assert_eq!(r.as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn hat_unhat_and_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = Vector3::new(rng.gen(), rng.gen(), rng.gen()) * 3.0;
            let h = hat(&a);
            assert!((unhat(&h).unwrap() - a).norm() < 1e-15);
            let tr = (h.matrix() * h.matrix()).trace();
            assert!((-0.5 * tr - a.norm_squared()).abs() < 1e-12);
            assert!((killing_pair(&h, &h) - a.norm_squared()).abs() < 1e-12);
        }
    }

    #[test]
    fn unhat_rejects_wrong_dimension() {
        assert!(matches!(
            unhat(&SoAlgebra::zeros(4)),
            Err(Error::Dimension { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn wedge_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DVector::from_fn(3, |_, _| rng.gen::<f64>() - 0.5);
        let b = DVector::from_fn(3, |_, _| rng.gen::<f64>() - 0.5);
        assert_eq!(wedge(&a, &a).unwrap().matrix().amax(), 0.0);
        let a3 = Vector3::from_column_slice(a.as_slice());
        let b3 = Vector3::from_column_slice(b.as_slice());
        let lhs = wedge(&a, &b).unwrap();
        let rhs = hat(&b3.cross(&a3));
        assert!((lhs.matrix() - rhs.matrix()).amax() < 1e-15);
        for n in 2..6 {
            for i in 0..n {
                for j in (i + 1)..n {
                    let w = wedge(
                        &DVector::from_fn(n, |k, _| (k == i) as u8 as f64),
                        &DVector::from_fn(n, |k, _| (k == j) as u8 as f64),
                    )
                    .unwrap();
                    assert!((killing_pair(&w, &w) - 1.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn basis_is_killing_orthonormal() {
        let b = son_basis(4);
        assert_eq!(b.len(), 6);
        for (i, x) in b.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_eq!(killing_pair(x, y), expected);
            }
        }
        // coordinate ordering matches pair_index
        assert_eq!(b[pair_index(4, 1, 3)].matrix()[(1, 3)], 1.0);
    }

    #[test]
    fn killing_pair_is_ad_invariant_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 3..6 {
            let g = random_rotation(n, &mut rng);
            let x = random_skew(n, &mut rng, 1.0);
            let y = random_skew(n, &mut rng, 1.0);
            let lhs = killing_pair(&adjoint(&g, &x), &adjoint(&g, &y));
            assert!((lhs - killing_pair(&x, &y)).abs() < 1e-12);
            assert!(killing_pair(&x, &x) > 0.0);
            let dot = x.coords().dot(&y.coords());
            assert!((dot - killing_pair(&x, &y)).abs() < 1e-14);
        }
    }

    #[test]
    fn exp_of_zero_and_rotation_about_e3() {
        for n in 2..6 {
            let id = exp_map(&SoAlgebra::zeros(n)).unwrap();
            assert!((id.matrix() - DMatrix::<f64>::identity(n, n)).amax() < 1e-15);
        }
        let theta = 0.7;
        let g = exp_map(&hat(&(Vector3::z() * theta))).unwrap();
        let r = rot_z(theta);
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.matrix()[(i, j)] - r[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn exp_inverse_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [3, 4, 5] {
            for _ in 0..10 {
                let mut xi = random_skew(n, &mut rng, 1.0);
                let s = rng.gen_range(0.0..10.0) / xi.norm().max(1e-12);
                xi = &xi * s.min(10.0 / xi.matrix().norm());
                let g = exp_map(&xi).unwrap();
                let h = exp_map(&-&xi).unwrap();
                let prod = g.compose(&h);
                assert!((prod.matrix() - DMatrix::<f64>::identity(n, n)).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn series_exp_matches_rodrigues() {
        // the n = 3 path uses Rodrigues; compare against the 4x4 series path
        // on an so(3) block embedded in so(4)
        let w = Vector3::new(0.3, -1.2, 2.1);
        let g3 = rodrigues(&w);
        let h = hat(&w);
        let mut m4 = DMatrix::zeros(4, 4);
        m4.view_mut((0, 0), (3, 3)).copy_from(h.matrix());
        let g4 = exp_map(&SoAlgebra::from_matrix(&m4)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g4.matrix()[(i, j)] - g3[(i, j)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn reorthonormalize_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [3, 4, 5] {
            let g = random_rotation(n, &mut rng);
            let again = reorthonormalize(g.matrix()).unwrap();
            assert!((again.matrix() - g.matrix()).amax() < 1e-14);
            let noisy = g.matrix() + DMatrix::from_fn(n, n, |_, _| 1e-3 * (rng.gen::<f64>() - 0.5));
            let fixed = reorthonormalize(&noisy).unwrap();
            assert!(fixed.orthogonality_residual() < 1e-14);
            let twice = reorthonormalize(fixed.matrix()).unwrap();
            assert!((twice.matrix() - fixed.matrix()).amax() < 1e-14);
        }
        let reflect = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, -1.0]));
        assert!(matches!(reorthonormalize(&reflect), Err(Error::Orientation { .. })));
    }

    #[test]
    fn so3_coordinate_conversion() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        let c = vec3_to_so3_coords(&v);
        assert_eq!(so3_coords_to_vec3(&c), v);
    }
}
