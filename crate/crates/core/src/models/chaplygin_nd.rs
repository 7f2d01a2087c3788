use nalgebra::{Cholesky, DMatrix, DVector};

use super::inertia::InertiaOperator;
use crate::error::{Error, Result};
use crate::liegroup::{killing_pair, reorthonormalize, so_dim, son_basis, wedge, SoAlgebra, SoElement};

/// n-dimensional Chaplygin sphere of radius `r` rolling on a hyperplane
/// rotating with angular velocity `eta`, where `eta e_n = 0`.
#[derive(Debug, Clone)]
pub struct ChaplyginNdParams {
    pub mass: f64,
    pub radius: f64,
    pub inertia: InertiaOperator,
    eta: SoAlgebra,
    eta_spectrum: DVector<f64>,
}

/// Full state: contact-plane position of the center `x`, attitude `g` and
/// the momentum-like matrix `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChapNdFullState {
    pub x: DVector<f64>,
    pub g: SoElement,
    pub k: SoAlgebra,
}

/// Time derivative of a [`ChapNdFullState`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChapNdFullRate {
    pub x: DVector<f64>,
    pub g: DMatrix<f64>,
    pub k: SoAlgebra,
}

/// Reduced state `(K, X, gamma, Xi)` with `X = g^-1 x`, `gamma = g^-1 e_n`
/// and `Xi = Ad_{g^-1} eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChapNdReducedState {
    pub k: SoAlgebra,
    pub x: DVector<f64>,
    pub gamma: DVector<f64>,
    pub xi: SoAlgebra,
}

impl ChaplyginNdParams {
    pub fn new(mass: f64, radius: f64, inertia: InertiaOperator, eta: SoAlgebra) -> Result<Self> {
        let n = inertia.n();
        if n < 3 {
            return Err(Error::invalid("n", "must be at least 3"));
        }
        if !(mass > 0.0) {
            return Err(Error::invalid("mass", "must be positive"));
        }
        if !(radius > 0.0) {
            return Err(Error::invalid("radius", "must be positive"));
        }
        if eta.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                got: eta.dim(),
            });
        }
        if eta.matrix().column(n - 1).amax() > 1e-14 {
            return Err(Error::invalid("eta", "must annihilate the last basis vector"));
        }
        let eta_spectrum = spectrum(&eta);
        Ok(ChaplyginNdParams {
            mass,
            radius,
            inertia,
            eta,
            eta_spectrum,
        })
    }

    pub fn n(&self) -> usize {
        self.inertia.n()
    }

    pub fn eta(&self) -> &SoAlgebra {
        &self.eta
    }

    pub fn full_dim(&self) -> usize {
        let n = self.n();
        n + n * n + so_dim(n)
    }

    pub fn reduced_dim(&self) -> usize {
        let n = self.n();
        2 * so_dim(n) + 2 * n
    }

    /// `Omega -> I Omega + m r^2 (Gamma Omega + Omega Gamma)`, `Gamma = gamma gamma^T`.
    pub fn k_from_omega(&self, gamma: &DVector<f64>, omega: &SoAlgebra) -> SoAlgebra {
        let gam = gamma * gamma.transpose();
        let contact = SoAlgebra::from_matrix(&(&gam * omega.matrix() + omega.matrix() * &gam));
        &self.inertia.apply(omega) + &(&contact * (self.mass * self.radius * self.radius))
    }

    /// Matrix of [`Self::k_from_omega`] in so(n) coordinates.
    pub fn contact_operator_matrix(&self, gamma: &DVector<f64>) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = son_basis(self.n())
            .iter()
            .map(|e| self.k_from_omega(gamma, e).coords())
            .collect();
        DMatrix::from_columns(&cols)
    }
}

/// Sorted singular values of a skew matrix, the moduli of its eigenvalues.
fn spectrum(xi: &SoAlgebra) -> DVector<f64> {
    let mut s: Vec<f64> = xi.matrix().clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| a.total_cmp(b));
    DVector::from_vec(s)
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 })
}

/// Solves `K = I Omega + m r^2 (Gamma Omega + Omega Gamma)` for `Omega`.
pub fn omega_from_k_nd(params: &ChaplyginNdParams, gamma: &DVector<f64>, k: &SoAlgebra) -> Result<SoAlgebra> {
    let m = params.contact_operator_matrix(gamma);
    let chol = Cholesky::new(m).ok_or(Error::InversionDegeneracy { denominator: 0.0 })?;
    SoAlgebra::from_coords(params.n(), chol.solve(&k.coords()).as_slice())
}

impl ChapNdFullState {
    pub fn gamma(&self) -> DVector<f64> {
        let n = self.x.len();
        self.g.matrix().row(n - 1).transpose()
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let n = self.x.len();
        let mut v = Vec::with_capacity(n + n * n);
        v.extend(self.x.iter());
        v.extend(self.g.matrix().transpose().iter());
        v.extend(self.k.coords().iter());
        DVector::from_vec(v)
    }

    pub fn from_flat(params: &ChaplyginNdParams, y: &DVector<f64>) -> Result<Self> {
        let n = params.n();
        if y.len() != params.full_dim() {
            return Err(Error::Dimension {
                expected: params.full_dim(),
                got: y.len(),
            });
        }
        let s = y.as_slice();
        Ok(ChapNdFullState {
            x: DVector::from_column_slice(&s[..n]),
            g: SoElement::from_matrix_unchecked(DMatrix::from_row_slice(n, n, &s[n..n + n * n])),
            k: SoAlgebra::from_coords(n, &s[n + n * n..])?,
        })
    }

    /// State with attitude `g`, body angular velocity `Omega` and contact
    /// coordinates `x` (the last entry is reset to `r`).
    pub fn from_omega(params: &ChaplyginNdParams, mut x: DVector<f64>, g: SoElement, omega: &SoAlgebra) -> Self {
        let n = params.n();
        x[n - 1] = params.radius;
        let gamma = g.matrix().row(n - 1).transpose();
        ChapNdFullState {
            x,
            k: params.k_from_omega(&gamma, omega),
            g,
        }
    }

    pub fn reduce(&self, params: &ChaplyginNdParams) -> ChapNdReducedState {
        let gt = self.g.matrix().transpose();
        ChapNdReducedState {
            k: self.k.clone(),
            x: &gt * &self.x,
            gamma: self.gamma(),
            xi: SoAlgebra::from_matrix(&(&gt * params.eta.matrix() * self.g.matrix())),
        }
    }
}

impl ChapNdFullRate {
    pub fn to_flat(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.x.iter().copied().collect();
        v.extend(self.g.transpose().iter());
        v.extend(self.k.coords().iter());
        DVector::from_vec(v)
    }
}

impl ChapNdReducedState {
    pub fn to_flat(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.k.coords().iter().copied().collect();
        v.extend(self.x.iter());
        v.extend(self.gamma.iter());
        v.extend(self.xi.coords().iter());
        DVector::from_vec(v)
    }

    pub fn from_flat(params: &ChaplyginNdParams, y: &DVector<f64>) -> Result<Self> {
        let n = params.n();
        let d = so_dim(n);
        if y.len() != params.reduced_dim() {
            return Err(Error::Dimension {
                expected: params.reduced_dim(),
                got: y.len(),
            });
        }
        let s = y.as_slice();
        Ok(ChapNdReducedState {
            k: SoAlgebra::from_coords(n, &s[..d])?,
            x: DVector::from_column_slice(&s[d..d + n]),
            gamma: DVector::from_column_slice(&s[d + n..d + 2 * n]),
            xi: SoAlgebra::from_coords(n, &s[d + 2 * n..])?,
        })
    }
}

/// Full equations: `K' = [K, Omega] - m r (g^-1 eta x') ^ gamma`,
/// `x' = r (Ad_g Omega) e_n + eta x`, `g' = g Omega`.
pub fn chapnd_full_vector_field(params: &ChaplyginNdParams, s: &ChapNdFullState) -> Result<ChapNdFullRate> {
    let gamma = s.gamma();
    let omega = omega_from_k_nd(params, &gamma, &s.k)?;
    let g = s.g.matrix();
    let x_dot = g * (omega.matrix() * &gamma) * params.radius + params.eta.matrix() * &s.x;
    let torque = wedge(&(g.transpose() * (params.eta.matrix() * &x_dot)), &gamma)?;
    let k_dot = &s.k.bracket(&omega) - &(&torque * (params.mass * params.radius));
    Ok(ChapNdFullRate {
        x: x_dot,
        g: g * omega.matrix(),
        k: k_dot,
    })
}

/// Reduced equations on `(K, X, gamma, Xi)`.
pub fn chapnd_reduced_vector_field(params: &ChaplyginNdParams, s: &ChapNdReducedState) -> Result<ChapNdReducedState> {
    let m = params.mass;
    let r = params.radius;
    let omega = omega_from_k_nd(params, &s.gamma, &s.k)?;
    let omega_gamma = omega.matrix() * &s.gamma;
    let t1 = s.xi.bracket(&wedge(&omega_gamma, &s.gamma)?);
    let t2 = s.xi.bracket(&s.xi.bracket(&wedge(&s.x, &s.gamma)?));
    let k_dot = &(&s.k.bracket(&omega) - &(&t1 * (m * r * r))) - &(&t2 * (m * r));
    let x_dot = (s.xi.matrix() - omega.matrix()) * &s.x + &omega_gamma * r;
    Ok(ChapNdReducedState {
        k: k_dot,
        x: x_dot,
        gamma: -omega_gamma,
        xi: s.xi.bracket(&omega),
    })
}

/// `1/2 <K, Omega> - m/2 |eta x|^2`.
pub fn chapnd_full_moving_energy(params: &ChaplyginNdParams, s: &ChapNdFullState) -> Result<f64> {
    let omega = omega_from_k_nd(params, &s.gamma(), &s.k)?;
    Ok(0.5 * killing_pair(&s.k, &omega) - 0.5 * params.mass * (params.eta.matrix() * &s.x).norm_squared())
}

/// `1/2 <K, Omega> - m/2 |Xi X|^2`.
pub fn chapnd_reduced_moving_energy(params: &ChaplyginNdParams, s: &ChapNdReducedState) -> Result<f64> {
    let omega = omega_from_k_nd(params, &s.gamma, &s.k)?;
    Ok(0.5 * killing_pair(&s.k, &omega) - 0.5 * params.mass * (s.xi.matrix() * &s.x).norm_squared())
}

/// Plain energy `1/2 <I Omega, Omega> + m/2 |x'|^2` on the reduced state,
/// with `g^-1 x' = r Omega gamma + Xi X`.
pub fn chapnd_reduced_energy(params: &ChaplyginNdParams, s: &ChapNdReducedState) -> Result<f64> {
    let omega = omega_from_k_nd(params, &s.gamma, &s.k)?;
    let v = omega.matrix() * &s.gamma * params.radius + s.xi.matrix() * &s.x;
    Ok(0.5 * killing_pair(&params.inertia.apply(&omega), &omega) + 0.5 * params.mass * v.norm_squared())
}

pub fn chapnd_full_energy(params: &ChaplyginNdParams, s: &ChapNdFullState) -> Result<f64> {
    chapnd_reduced_energy(params, &s.reduce(params))
}

pub fn chapnd_full_residuals(params: &ChaplyginNdParams, s: &ChapNdFullState) -> Vec<(String, f64)> {
    let n = params.n();
    vec![
        ("contact_height".into(), s.x[n - 1] - params.radius),
        ("orthogonality".into(), s.g.orthogonality_residual()),
    ]
}

/// Manifold residuals plus the monitored (not enforced) adjoint-orbit drift
/// of `Xi`, measured as the change of its sorted singular values.
pub fn chapnd_reduced_residuals(params: &ChaplyginNdParams, s: &ChapNdReducedState) -> Vec<(String, f64)> {
    vec![
        ("gamma_norm".into(), s.gamma.norm_squared() - 1.0),
        ("contact".into(), s.gamma.dot(&s.x) - params.radius),
        ("xi_gamma".into(), (s.xi.matrix() * &s.gamma).norm()),
        ("xi_orbit".into(), (spectrum(&s.xi) - &params.eta_spectrum).amax()),
    ]
}

pub fn chapnd_full_project(params: &ChaplyginNdParams, s: &ChapNdFullState) -> Result<ChapNdFullState> {
    let n = params.n();
    let mut x = s.x.clone();
    x[n - 1] = params.radius;
    Ok(ChapNdFullState {
        x,
        g: reorthonormalize(s.g.matrix())?,
        k: s.k.clone(),
    })
}

pub fn chapnd_reduced_project(params: &ChaplyginNdParams, s: &ChapNdReducedState) -> Result<ChapNdReducedState> {
    let norm = s.gamma.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::NumericalFailure("Poisson vector vanished".into()));
    }
    let gamma = &s.gamma / norm;
    let x = &s.x + &gamma * (params.radius - gamma.dot(&s.x));
    Ok(ChapNdReducedState {
        k: s.k.clone(),
        x,
        gamma,
        xi: s.xi.clone(),
    })
}

/// `eta = value * (e_i ^ e_j)` with one-based plane indices `i, j < n`.
pub fn eta_on_plane(n: usize, value: f64, i: usize, j: usize) -> Result<SoAlgebra> {
    if i == 0 || j == 0 || i >= n || j >= n || i == j {
        return Err(Error::invalid("eta_plane", "indices must be distinct and in 1..n-1"));
    }
    Ok(&wedge(&unit(n, i - 1), &unit(n, j - 1))? * value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::{exp_map, hat, unhat};
    use crate::models::rolling::{chap3d_vector_field, ChaplyginBallParams, RollingBodyState};
    use nalgebra::{Matrix3, Vector3};

    fn params(n: usize, eta: f64) -> ChaplyginNdParams {
        let j = DMatrix::from_fn(n, n, |a, b| if a == b { 1.0 + 0.4 * a as f64 } else { 0.05 });
        let inertia = InertiaOperator::from_body_matrix(&j).unwrap();
        ChaplyginNdParams::new(1.5, 0.8, inertia, eta_on_plane(n, eta, 1, 2).unwrap()).unwrap()
    }

    fn full_state(p: &ChaplyginNdParams) -> ChapNdFullState {
        let n = p.n();
        let coords: Vec<f64> = (0..so_dim(n)).map(|i| 0.3 * ((i as f64) * 1.7).sin()).collect();
        let g = exp_map(&SoAlgebra::from_coords(n, &coords).unwrap()).unwrap();
        let omega_c: Vec<f64> = (0..so_dim(n)).map(|i| ((i as f64) * 0.9 + 0.4).cos()).collect();
        let omega = SoAlgebra::from_coords(n, &omega_c).unwrap();
        let x = DVector::from_fn(n, |i, _| 0.5 - 0.3 * i as f64);
        ChapNdFullState::from_omega(p, x, g, &omega)
    }

    #[test]
    fn contact_operator_is_symmetric_positive_definite() {
        let p = params(5, 0.3);
        let gamma = full_state(&p).gamma();
        let m = p.contact_operator_matrix(&gamma);
        assert!((&m - m.transpose()).amax() < 1e-13);
        assert!(m.symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn omega_round_trip() {
        let p = params(4, 0.3);
        let s = full_state(&p);
        let omega = omega_from_k_nd(&p, &s.gamma(), &s.k).unwrap();
        let k = p.k_from_omega(&s.gamma(), &omega);
        assert!((&k - &s.k).norm() < 1e-12);
    }

    #[test]
    fn full_and_reduced_energies_agree() {
        let p = params(4, 0.3);
        let s = full_state(&p);
        let r = s.reduce(&p);
        let a = chapnd_full_moving_energy(&p, &s).unwrap();
        let b = chapnd_reduced_moving_energy(&p, &r).unwrap();
        assert!((a - b).abs() < 1e-12);
        for (name, v) in chapnd_reduced_residuals(&p, &r) {
            assert!(v.abs() < 1e-12, "{name} {v}");
        }
    }

    #[test]
    fn reduced_field_preserves_invariants() {
        let p = params(5, 0.3);
        let r = full_state(&p).reduce(&p);
        let d = chapnd_reduced_vector_field(&p, &r).unwrap();
        assert!(r.gamma.dot(&d.gamma).abs() < 1e-12);
        assert!((d.gamma.dot(&r.x) + r.gamma.dot(&d.x)).abs() < 1e-12);
        assert!((d.xi.matrix() * &r.gamma + r.xi.matrix() * &d.gamma).norm() < 1e-12);
    }

    #[test]
    fn reduced_field_is_reduction_of_full_field() {
        let p = params(4, 0.3);
        let s = full_state(&p);
        let r = s.reduce(&p);
        let fd = chapnd_full_vector_field(&p, &s).unwrap();
        let rd = chapnd_reduced_vector_field(&p, &r).unwrap();
        let g = s.g.matrix();
        // X = g^T x, so X' = g'^T x + g^T x'
        let x_dot = fd.g.transpose() * &s.x + g.transpose() * &fd.x;
        assert!((x_dot - &rd.x).amax() < 1e-12);
        assert!((&fd.k - &rd.k).norm() < 1e-12);
        assert!(fd.x[p.n() - 1].abs() < 1e-14);
    }

    #[test]
    fn three_dimensional_case_matches_chaplygin_ball() {
        let kappa = 0.7;
        let tensor = Matrix3::new(1.1, 0.1, 0.0, 0.1, 1.3, 0.05, 0.0, 0.05, 0.9);
        let ball = ChaplyginBallParams::new(1.5, 0.8, tensor, kappa).unwrap();
        let inertia = InertiaOperator::from_tensor3(&tensor).unwrap();
        let p = ChaplyginNdParams::new(1.5, 0.8, inertia, hat(&(Vector3::z() * kappa))).unwrap();
        let gamma = Vector3::new(0.3, -0.5, 0.8).normalize();
        let x = Vector3::new(0.4, 1.2, 0.0);
        let x = x + gamma * (0.8 - x.dot(&gamma));
        let s3 = RollingBodyState {
            k: Vector3::new(0.5, -1.0, 0.7),
            x,
            gamma,
        };
        let rn = ChapNdReducedState {
            k: hat(&s3.k),
            x: DVector::from_column_slice(x.as_slice()),
            gamma: DVector::from_column_slice(gamma.as_slice()),
            xi: hat(&(gamma * kappa)),
        };
        let a = chap3d_vector_field(&ball, &s3).unwrap();
        let b = chapnd_reduced_vector_field(&p, &rn).unwrap();
        assert!((unhat(&b.k).unwrap() - a.k).amax() < 1e-12);
        assert!((Vector3::from_column_slice(b.x.as_slice()) - a.x).amax() < 1e-12);
        assert!((Vector3::from_column_slice(b.gamma.as_slice()) - a.gamma).amax() < 1e-12);
    }

    #[test]
    fn eta_plane_assembly() {
        let eta = eta_on_plane(4, 0.3, 1, 2).unwrap();
        assert_eq!(eta.matrix()[(0, 1)], 0.3);
        assert_eq!(eta.matrix()[(1, 0)], -0.3);
        assert!(eta_on_plane(4, 0.3, 1, 4).is_err());
    }
}
