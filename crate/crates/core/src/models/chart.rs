//! Local-chart embeddings of the trivialized models into the generic
//! coordinate engine, used as an independent oracle.
//!
//! Attitudes use ZYZ Euler angles `g = Rz(phi) Ry(theta) Rz(psi)`, for
//! which the body angular velocity is `Omega = B(theta, psi) (phi', theta', psi')`
//! and the Poisson vector `gamma = g^T e3` does not depend on `phi`. The
//! chart is singular at `theta in {0, pi}`; every conversion refuses
//! attitudes within [`CHART_MARGIN`] of those values.
//!
//! Derivative callbacks are computed exactly by forward-mode automatic
//! differentiation of the same generic chart functions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, RealField, Vector3};
use num_dual::Dual64;

use super::rolling::{omega_from_k_3d, ChaplyginBallParams, RollingBodyParams, RollingBodyState};
use super::LrParams;
use crate::dynamics::{MechanicalSystem, State, VectorFieldOnQ};
use crate::error::{Error, Result};
use crate::liegroup::{so3_coords_to_vec3, unhat};

/// Minimum distance of `theta` from the chart singularities.
pub const CHART_MARGIN: f64 = 0.1;

/// The model families that admit a chart embedding.
#[derive(Debug, Clone)]
pub enum ChartModel {
    /// Veselova rigid body, `q = (phi, theta, psi)`.
    Veselova { tensor: Matrix3<f64>, c: f64 },
    /// Rolling convex body, `q = (x1, x2, phi, theta, psi)`.
    RollingBody(RollingBodyParams),
    /// Chaplygin ball, same coordinates as the rolling body.
    Chaplygin3d(ChaplyginBallParams),
}

/// A chart embedding: the generic system plus the maps between chart
/// states and trivialized model states.
#[derive(Debug, Clone)]
pub struct ChartSystem {
    model: ChartModel,
    system: Arc<MechanicalSystem>,
}

fn cst<T: RealField + Copy>(x: f64) -> T {
    T::from_subset(&x)
}

/// `(g, B, gamma)` for ZYZ angles.
fn euler<T: RealField + Copy>(phi: T, theta: T, psi: T) -> (Matrix3<T>, Matrix3<T>, Vector3<T>) {
    let (z, o) = (T::zero(), T::one());
    let (sf, cf) = (phi.sin(), phi.cos());
    let (st, ct) = (theta.sin(), theta.cos());
    let (sp, cp) = (psi.sin(), psi.cos());
    let rz = |s: T, c: T| Matrix3::new(c, -s, z, s, c, z, z, z, o);
    let ry = Matrix3::new(ct, z, st, z, o, z, -st, z, ct);
    let g = rz(sf, cf) * ry * rz(sp, cp);
    let gamma = Vector3::new(-st * cp, st * sp, ct);
    let b = Matrix3::from_columns(&[gamma, Vector3::new(sp, cp, z), Vector3::new(z, z, o)]);
    (g, b, gamma)
}

fn hat_g<T: RealField + Copy>(a: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -a.z, a.y, a.z, z, -a.x, -a.y, a.x, z)
}

fn mat3_cast<T: RealField + Copy>(m: &Matrix3<f64>) -> Matrix3<T> {
    m.map(|v| cst::<T>(v))
}

impl ChartModel {
    pub fn n(&self) -> usize {
        match self {
            ChartModel::Veselova { .. } => 3,
            _ => 5,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            ChartModel::Veselova { .. } => 1,
            _ => 2,
        }
    }

    fn rolling(&self) -> Option<RollingBodyParams> {
        match self {
            ChartModel::Veselova { .. } => None,
            ChartModel::RollingBody(p) => Some(p.clone()),
            ChartModel::Chaplygin3d(p) => Some(p.as_rolling_body()),
        }
    }

    fn angles<T: RealField + Copy>(&self, q: &[T]) -> (T, T, T) {
        let o = self.n() - 3;
        (q[o], q[o + 1], q[o + 2])
    }

    /// Kinetic metric `A(q)`.
    fn metric_g<T: RealField + Copy>(&self, q: &[T]) -> DMatrix<T> {
        let (phi, theta, psi) = self.angles(q);
        let (_, b, gamma) = euler(phi, theta, psi);
        match self {
            ChartModel::Veselova { tensor, .. } => {
                let a = b.transpose() * mat3_cast::<T>(tensor) * b;
                DMatrix::from_iterator(3, 3, a.iter().copied())
            }
            _ => {
                let p = self.rolling().expect("rolling model");
                let m = cst::<T>(p.mass);
                let rho = p.shape.contact(&gamma);
                // vertical center velocity x3' = (rho x gamma) . Omega
                let w = b.transpose() * rho.cross(&gamma);
                let ang = b.transpose() * mat3_cast::<T>(&p.inertia) * b + w * w.transpose() * m;
                let mut a = DMatrix::zeros(5, 5);
                a[(0, 0)] = m;
                a[(1, 1)] = m;
                a.view_mut((2, 2), (3, 3)).copy_from(&ang);
                a
            }
        }
    }

    fn potential_g<T: RealField + Copy>(&self, q: &[T]) -> T {
        match self {
            ChartModel::Veselova { .. } => T::zero(),
            _ => {
                let p = self.rolling().expect("rolling model");
                let (phi, theta, psi) = self.angles(q);
                let (_, _, gamma) = euler(phi, theta, psi);
                gamma.dot(&p.shape.contact(&gamma)) * cst::<T>(p.mass * p.gravity)
            }
        }
    }

    /// Center position `x = (q1, q2, gamma . rho)` and `g rho`.
    fn center<T: RealField + Copy>(
        &self,
        p: &RollingBodyParams,
        q: &[T],
    ) -> (Vector3<T>, Matrix3<T>, Matrix3<T>, Vector3<T>, Vector3<T>) {
        let (phi, theta, psi) = self.angles(q);
        let (g, b, gamma) = euler(phi, theta, psi);
        let rho = p.shape.contact(&gamma);
        let x = Vector3::new(q[0], q[1], gamma.dot(&rho));
        (x, g, b, gamma, rho)
    }

    fn constraint_g<T: RealField + Copy>(&self, q: &[T]) -> DMatrix<T> {
        let (phi, theta, psi) = self.angles(q);
        match self {
            ChartModel::Veselova { .. } => {
                let (_, b, gamma) = euler(phi, theta, psi);
                let row = b.transpose() * gamma;
                DMatrix::from_row_slice(1, 3, row.as_slice())
            }
            _ => {
                let p = self.rolling().expect("rolling model");
                let (_, g, b, _, rho) = self.center(&p, q);
                let c = g * hat_g(&rho) * b;
                let mut s = DMatrix::zeros(2, 5);
                s[(0, 0)] = T::one();
                s[(1, 1)] = T::one();
                for i in 0..2 {
                    for j in 0..3 {
                        s[(i, 2 + j)] = c[(i, j)];
                    }
                }
                s
            }
        }
    }

    fn shift_g<T: RealField + Copy>(&self, q: &[T]) -> DVector<T> {
        match self {
            ChartModel::Veselova { c, .. } => DVector::from_element(1, cst::<T>(-c)),
            _ => {
                let p = self.rolling().expect("rolling model");
                let (x, g, _, _, rho) = self.center(&p, q);
                let d = x - g * rho;
                let kappa = cst::<T>(p.kappa);
                // s = -(kappa e3 x (x - g rho)) restricted to the first two rows
                DVector::from_vec(vec![kappa * d[1], -kappa * d[0]])
            }
        }
    }

    /// Trivialized model state of a chart state, in the model's flat layout.
    fn to_model_g<T: RealField + Copy>(&self, q: &[T], qdot: &[T]) -> DVector<T> {
        let (phi, theta, psi) = self.angles(q);
        let o = self.n() - 3;
        let qa = Vector3::new(qdot[o], qdot[o + 1], qdot[o + 2]);
        match self {
            ChartModel::Veselova { .. } => {
                let (_, b, gamma) = euler(phi, theta, psi);
                let omega = b * qa;
                // so(3) coordinates of hat(v) are (-v3, v2, -v1)
                let c = |v: Vector3<T>| [-v.z, v.y, -v.x];
                DVector::from_iterator(6, c(gamma).into_iter().chain(c(omega)))
            }
            _ => {
                let p = self.rolling().expect("rolling model");
                let (x, g, b, gamma, rho) = self.center(&p, q);
                let omega = b * qa;
                let k = mat3_cast::<T>(&p.inertia) * omega + rho.cross(&omega.cross(&rho)) * cst::<T>(p.mass);
                let xb = g.transpose() * x;
                DVector::from_iterator(9, k.iter().chain(xb.iter()).chain(gamma.iter()).copied())
            }
        }
    }
}

fn seeded(q: &DVector<f64>, j: usize) -> Vec<Dual64> {
    q.iter()
        .enumerate()
        .map(|(i, v)| Dual64::new(*v, if i == j { 1.0 } else { 0.0 }))
        .collect()
}

/// Columns `d f / d q_j` of a vector-valued generic function by forward mode.
fn ad_jacobian(q: &DVector<f64>, f: impl Fn(&[Dual64]) -> DVector<Dual64>) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..q.len()).map(|j| f(&seeded(q, j)).map(|d| d.eps)).collect();
    DMatrix::from_columns(&cols)
}

fn ad_matrix_partials(q: &DVector<f64>, f: impl Fn(&[Dual64]) -> DMatrix<Dual64>) -> Vec<DMatrix<f64>> {
    (0..q.len()).map(|j| f(&seeded(q, j)).map(|d| d.eps)).collect()
}

fn angle_check(theta: f64) -> Result<()> {
    let margin = theta.min(std::f64::consts::PI - theta);
    if !(margin >= CHART_MARGIN) {
        return Err(Error::ChartSingularity {
            theta,
            margin: CHART_MARGIN,
        });
    }
    Ok(())
}

/// `(theta, psi)` of a unit Poisson vector.
fn angles_from_gamma(gamma: &Vector3<f64>) -> Result<(f64, f64)> {
    let gamma = gamma.normalize();
    let theta = gamma.z.clamp(-1.0, 1.0).acos();
    angle_check(theta)?;
    Ok((theta, gamma.y.atan2(-gamma.x)))
}

impl ChartSystem {
    pub fn new(model: ChartModel) -> Result<Self> {
        let n = model.n();
        let k = model.k();
        let m = Arc::new(model.clone());
        let (m1, m2, m3, m4, m5, m6, m7, m8) = (
            m.clone(),
            m.clone(),
            m.clone(),
            m.clone(),
            m.clone(),
            m.clone(),
            m.clone(),
            m.clone(),
        );
        let system = MechanicalSystem::builder(n, k)
            .metric(move |q| m1.metric_g(q.as_slice()))
            .potential(move |q| m2.potential_g(q.as_slice()))
            .constraint(move |q| m3.constraint_g(q.as_slice()))
            .shift(move |q| m4.shift_g(q.as_slice()))
            .d_metric(move |q| ad_matrix_partials(q, |x| m5.metric_g(x)))
            .d_potential(move |q| {
                ad_jacobian(q, |x| DVector::from_element(1, m6.potential_g(x)))
                    .row(0)
                    .transpose()
            })
            .d_constraint(move |q| ad_matrix_partials(q, |x| m7.constraint_g(x)))
            .d_shift(move |q| ad_jacobian(q, |x| m8.shift_g(x)))
            .d_gyro(move |_| DMatrix::zeros(n, n))
            .build()?;
        Ok(ChartSystem {
            model,
            system: Arc::new(system),
        })
    }

    pub fn veselova(params: &LrParams) -> Result<Self> {
        if params.n() != 3 || params.k() != 1 {
            return Err(Error::invalid("model", "the Veselova chart needs n = 3 and one constraint"));
        }
        let a = unhat(&params.covectors()[0])?;
        if (a - Vector3::z()).norm() > 1e-12 {
            return Err(Error::invalid("model", "the Veselova chart needs the constraint axis e3"));
        }
        ChartSystem::new(ChartModel::Veselova {
            tensor: params.inertia().tensor3()?,
            c: params.constants()[0],
        })
    }

    pub fn model(&self) -> &ChartModel {
        &self.model
    }

    pub fn system(&self) -> &Arc<MechanicalSystem> {
        &self.system
    }

    /// Refuses chart points near the Euler-angle singularity.
    pub fn check_chart(&self, q: &DVector<f64>) -> Result<()> {
        let o = self.model.n() - 3;
        angle_check(q[o + 1])
    }

    /// Maps a chart state to the trivialized model state (flat layout of
    /// the corresponding model).
    pub fn to_model_state(&self, state: &State) -> Result<DVector<f64>> {
        self.check_chart(&state.q)?;
        Ok(self.model.to_model_g(state.q.as_slice(), state.qdot.as_slice()))
    }

    /// Time derivative of the trivialized state along a chart motion with
    /// accelerations `qddot`.
    pub fn model_rate(&self, state: &State, qddot: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_chart(&state.q)?;
        let q: Vec<Dual64> = state
            .q
            .iter()
            .zip(state.qdot.iter())
            .map(|(a, b)| Dual64::new(*a, *b))
            .collect();
        let qd: Vec<Dual64> = state
            .qdot
            .iter()
            .zip(qddot.iter())
            .map(|(a, b)| Dual64::new(*a, *b))
            .collect();
        Ok(self.model.to_model_g(&q, &qd).map(|d| d.eps))
    }

    /// Chart state of a trivialized model state, with the free angle `phi`.
    pub fn from_model_state(&self, y: &DVector<f64>, phi: f64) -> Result<State> {
        match &self.model {
            ChartModel::Veselova { .. } => {
                let gamma = so3_coords_to_vec3(&y.rows(0, 3).into_owned());
                let omega = so3_coords_to_vec3(&y.rows(3, 3).into_owned());
                let (theta, psi) = angles_from_gamma(&gamma)?;
                let (_, b, _) = euler(phi, theta, psi);
                let qdot = b.try_inverse().ok_or(Error::ChartSingularity {
                    theta,
                    margin: CHART_MARGIN,
                })? * omega;
                Ok(State::from_slices(&[phi, theta, psi], qdot.as_slice()))
            }
            _ => {
                let p = self.model.rolling().expect("rolling model");
                let s = RollingBodyState::from_flat(y)?;
                let (theta, psi) = angles_from_gamma(&s.gamma)?;
                let (g, b, gamma) = euler(phi, theta, psi);
                let omega = omega_from_k_3d(&p, &gamma, &s.k)?;
                let rho = p.shape_f(&gamma);
                let x = g * s.x;
                let xdot = g * omega.cross(&rho) + Vector3::z().cross(&(x - g * rho)) * p.kappa;
                let qa = b.try_inverse().ok_or(Error::ChartSingularity {
                    theta,
                    margin: CHART_MARGIN,
                })? * omega;
                Ok(State::from_slices(
                    &[x.x, x.y, phi, theta, psi],
                    &[xdot.x, xdot.y, qa.x, qa.y, qa.z],
                ))
            }
        }
    }

    /// The natural generator of each model: the right-invariant field of
    /// `zeta` for Veselova, `Y_kappa` (rotation of plane and body about the
    /// vertical) for the rolling body, and `Y_eta` (rotation of the contact
    /// plane only) for the Chaplygin ball.
    pub fn generator(&self) -> VectorFieldOnQ {
        match &self.model {
            ChartModel::Veselova { c, .. } => VectorFieldOnQ::constant(DVector::from_vec(vec![*c, 0.0, 0.0])),
            ChartModel::RollingBody(p) => planar_rotation(p.kappa, true),
            ChartModel::Chaplygin3d(p) => planar_rotation(p.kappa, false),
        }
    }

    /// Chart form of the right-invariant field generated by `xi` in the
    /// spatial frame; only defined for the Veselova chart.
    pub fn right_invariant_field(&self, xi: Vector3<f64>) -> Result<VectorFieldOnQ> {
        if !matches!(self.model, ChartModel::Veselova { .. }) {
            return Err(Error::invalid(
                "model",
                "right-invariant fields are defined on the Veselova chart",
            ));
        }
        fn field<T: RealField + Copy>(q: &[T], xi: &Vector3<f64>) -> DVector<T> {
            let (g, b, _) = euler(q[0], q[1], q[2]);
            let body = g.transpose() * xi.map(|v| cst::<T>(v));
            let v = b.try_inverse().unwrap_or_else(Matrix3::zeros) * body;
            DVector::from_column_slice(v.as_slice())
        }
        Ok(VectorFieldOnQ::new(move |q| field(q.as_slice(), &xi)).with_jacobian(move |q| ad_jacobian(q, |x| field(x, &xi))))
    }
}

fn planar_rotation(kappa: f64, with_body: bool) -> VectorFieldOnQ {
    let spin = if with_body { kappa } else { 0.0 };
    VectorFieldOnQ::new(move |q| DVector::from_vec(vec![-kappa * q[1], kappa * q[0], spin, 0.0, 0.0])).with_jacobian(move |_| {
        let mut j = DMatrix::zeros(5, 5);
        j[(0, 1)] = -kappa;
        j[(1, 0)] = kappa;
        j
    })
}
