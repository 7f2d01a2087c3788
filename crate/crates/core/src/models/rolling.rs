use nalgebra::{DVector, Matrix3, RealField, Vector3};

use crate::error::{Error, Result};

/// Convex body shape through its inverse Gauss map `rho = F(gamma)`, the
/// vector from the contact point to the center of mass for inward normal
/// `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Ellipsoid { semi_axes: Vector3<f64> },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Sphere { radius } if !(*radius > 0.0) => Err(Error::invalid("radius", "must be positive")),
            Shape::Ellipsoid { semi_axes } if !semi_axes.iter().all(|a| *a > 0.0) => {
                Err(Error::invalid("semi_axes", "must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// `F(gamma)`, generic over the scalar so charts can differentiate it.
    pub fn contact<T: RealField + Copy>(&self, gamma: &Vector3<T>) -> Vector3<T> {
        match self {
            Shape::Sphere { radius } => gamma * T::from_subset(radius),
            Shape::Ellipsoid { semi_axes } => {
                let u = Vector3::from_fn(|i, _| gamma[i] * T::from_subset(&(semi_axes[i] * semi_axes[i])));
                let s = gamma.dot(&u).sqrt();
                u / s
            }
        }
    }

    pub fn shape_f(&self, gamma: &Vector3<f64>) -> Vector3<f64> {
        self.contact(gamma)
    }

    /// Analytic Jacobian `DF(gamma)`.
    pub fn shape_df(&self, gamma: &Vector3<f64>) -> Matrix3<f64> {
        match self {
            Shape::Sphere { radius } => Matrix3::identity() * *radius,
            Shape::Ellipsoid { semi_axes } => {
                let einv = Matrix3::from_diagonal(&semi_axes.component_mul(semi_axes));
                let u = einv * gamma;
                let s = gamma.dot(&u).sqrt();
                einv / s - u * u.transpose() / (s * s * s)
            }
        }
    }

    /// Quadratic form `E = diag(a_i^-2)` of the body surface `y . E y = 1`.
    pub fn surface_matrix(&self) -> Matrix3<f64> {
        match self {
            Shape::Sphere { radius } => Matrix3::identity() / (radius * radius),
            Shape::Ellipsoid { semi_axes } => Matrix3::from_diagonal(&semi_axes.map(|a| 1.0 / (a * a))),
        }
    }
}

/// Convex body rolling without slipping on a plane rotating about the
/// vertical axis with angular speed `kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingBodyParams {
    pub mass: f64,
    pub gravity: f64,
    pub inertia: Matrix3<f64>,
    pub kappa: f64,
    pub shape: Shape,
}

/// Reduced rolling-body state in body coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollingBodyState {
    pub k: Vector3<f64>,
    pub x: Vector3<f64>,
    pub gamma: Vector3<f64>,
}

pub(crate) fn check_tensor(t: &Matrix3<f64>) -> Result<()> {
    if (t - t.transpose()).amax() > 1e-12 * t.amax().max(1.0) || t.cholesky().is_none() {
        return Err(Error::invalid("inertia", "must be symmetric positive definite"));
    }
    Ok(())
}

impl RollingBodyParams {
    pub fn new(mass: f64, gravity: f64, inertia: Matrix3<f64>, kappa: f64, shape: Shape) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::invalid("mass", "must be positive"));
        }
        if !(gravity > 0.0) {
            return Err(Error::invalid("gravity", "must be positive"));
        }
        if !kappa.is_finite() {
            return Err(Error::invalid("kappa", "must be finite"));
        }
        check_tensor(&inertia)?;
        shape.validate()?;
        Ok(RollingBodyParams {
            mass,
            gravity,
            inertia,
            kappa,
            shape,
        })
    }

    pub fn shape_f(&self, gamma: &Vector3<f64>) -> Vector3<f64> {
        self.shape.shape_f(gamma)
    }

    pub fn shape_df(&self, gamma: &Vector3<f64>) -> Matrix3<f64> {
        self.shape.shape_df(gamma)
    }
}

impl RollingBodyState {
    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(9, self.k.iter().chain(self.x.iter()).chain(self.gamma.iter()).copied())
    }

    pub fn from_flat(y: &DVector<f64>) -> Result<Self> {
        if y.len() != 9 {
            return Err(Error::Dimension {
                expected: 9,
                got: y.len(),
            });
        }
        Ok(RollingBodyState {
            k: y.fixed_rows::<3>(0).into(),
            x: y.fixed_rows::<3>(3).into(),
            gamma: y.fixed_rows::<3>(6).into(),
        })
    }

    /// Consistent state from attitude data `gamma`, body angular velocity
    /// `Omega` and the horizontal part of the center position in body
    /// coordinates; `X` is completed so that `(X - rho) . gamma = 0`.
    pub fn from_omega(params: &RollingBodyParams, gamma: Vector3<f64>, omega: &Vector3<f64>, x: Vector3<f64>) -> Self {
        let gamma = gamma.normalize();
        let rho = params.shape_f(&gamma);
        let x = x - gamma * (x - rho).dot(&gamma);
        RollingBodyState {
            k: k_from_omega_3d(params, &gamma, omega),
            x,
            gamma,
        }
    }
}

/// `K = I Omega + m rho x (Omega x rho)`.
pub fn k_from_omega_3d(params: &RollingBodyParams, gamma: &Vector3<f64>, omega: &Vector3<f64>) -> Vector3<f64> {
    let rho = params.shape_f(gamma);
    params.inertia * omega + rho.cross(&omega.cross(&rho)) * params.mass
}

/// Inverse of [`k_from_omega_3d`] in closed form with
/// `W = (I + m |rho|^2 Id)^-1`.
pub fn omega_from_k_3d(params: &RollingBodyParams, gamma: &Vector3<f64>, k: &Vector3<f64>) -> Result<Vector3<f64>> {
    let rho = params.shape_f(gamma);
    omega_from_k_rho(params.mass, &params.inertia, &rho, k)
}

pub(crate) fn omega_from_k_rho(mass: f64, inertia: &Matrix3<f64>, rho: &Vector3<f64>, k: &Vector3<f64>) -> Result<Vector3<f64>> {
    let w = (inertia + Matrix3::identity() * (mass * rho.norm_squared()))
        .try_inverse()
        .ok_or(Error::InversionDegeneracy { denominator: 0.0 })?;
    let wrho = w * rho;
    let denominator = 1.0 - mass * wrho.dot(rho);
    if denominator.abs() < 1e-10 {
        return Err(Error::InversionDegeneracy { denominator });
    }
    Ok(w * k + wrho * (mass * wrho.dot(k) / denominator))
}

/// Reduced equations of the rolling body on the rotating plane.
pub fn rolling_body_vector_field(params: &RollingBodyParams, s: &RollingBodyState) -> Result<RollingBodyState> {
    let m = params.mass;
    let kappa = params.kappa;
    let rho = params.shape_f(&s.gamma);
    let omega = omega_from_k_rho(m, &params.inertia, &rho, &s.k)?;
    let gamma_dot = s.gamma.cross(&omega);
    let rho_dot = params.shape_df(&s.gamma) * gamma_dot;
    let k_dot = s.k.cross(&omega)
        + rho_dot.cross(&omega.cross(&rho)) * m
        + s.gamma.cross(&rho) * (m * params.gravity)
        + rho.cross(&(s.x * kappa - rho_dot.cross(&s.gamma))) * (m * kappa);
    let x_dot = (s.x - rho).cross(&(omega - s.gamma * kappa));
    Ok(RollingBodyState {
        k: k_dot,
        x: x_dot,
        gamma: gamma_dot,
    })
}

/// `Omega x rho + kappa gamma x (X - rho)`, the body-frame velocity of the
/// center of mass.
pub fn rolling_body_center_velocity(params: &RollingBodyParams, s: &RollingBodyState) -> Result<Vector3<f64>> {
    let rho = params.shape_f(&s.gamma);
    let omega = omega_from_k_rho(params.mass, &params.inertia, &rho, &s.k)?;
    Ok(omega.cross(&rho) + s.gamma.cross(&(s.x - rho)) * params.kappa)
}

/// Plain energy `1/2 I Omega . Omega + m/2 |x'|^2 + m G gamma . rho`.
pub fn rolling_body_energy(params: &RollingBodyParams, s: &RollingBodyState) -> Result<f64> {
    let rho = params.shape_f(&s.gamma);
    let omega = omega_from_k_rho(params.mass, &params.inertia, &rho, &s.k)?;
    let v = rolling_body_center_velocity(params, s)?;
    Ok(0.5 * omega.dot(&(params.inertia * omega))
        + 0.5 * params.mass * v.norm_squared()
        + params.mass * params.gravity * s.gamma.dot(&rho))
}

/// Moving energy
/// `1/2 K . Omega + m G rho . gamma - kappa K . gamma + 1/2 m kappa^2 (|rho|^2 - |X|^2)`.
pub fn rolling_body_moving_energy(params: &RollingBodyParams, s: &RollingBodyState) -> Result<f64> {
    let m = params.mass;
    let kappa = params.kappa;
    let rho = params.shape_f(&s.gamma);
    let omega = omega_from_k_rho(m, &params.inertia, &rho, &s.k)?;
    Ok(
        0.5 * s.k.dot(&omega) + m * params.gravity * rho.dot(&s.gamma) - kappa * s.k.dot(&s.gamma)
            + 0.5 * m * kappa * kappa * (rho.norm_squared() - s.x.norm_squared()),
    )
}

/// Invariant-manifold residuals `|gamma|^2 - 1` and `gamma . (X - rho)`.
pub fn rolling_body_residuals(params: &RollingBodyParams, s: &RollingBodyState) -> Vec<(String, f64)> {
    let rho = params.shape_f(&s.gamma);
    vec![
        ("gamma_norm".into(), s.gamma.norm_squared() - 1.0),
        ("contact".into(), s.gamma.dot(&(s.x - rho))),
    ]
}

/// Normalizes `gamma` and removes the component of `X - rho` along it.
pub fn rolling_body_project(params: &RollingBodyParams, s: &RollingBodyState) -> Result<RollingBodyState> {
    let norm = s.gamma.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::NumericalFailure("Poisson vector vanished".into()));
    }
    let gamma = s.gamma / norm;
    let rho = params.shape_f(&gamma);
    let x = s.x - gamma * (s.x - rho).dot(&gamma);
    Ok(RollingBodyState { k: s.k, x, gamma })
}

/// Chaplygin ball: a dynamically unbalanced sphere with centered mass
/// rolling on a plane rotating with angular speed `kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaplyginBallParams {
    pub mass: f64,
    pub radius: f64,
    pub inertia: Matrix3<f64>,
    pub kappa: f64,
}

impl ChaplyginBallParams {
    pub fn new(mass: f64, radius: f64, inertia: Matrix3<f64>, kappa: f64) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::invalid("mass", "must be positive"));
        }
        if !(radius > 0.0) {
            return Err(Error::invalid("radius", "must be positive"));
        }
        if !kappa.is_finite() {
            return Err(Error::invalid("kappa", "must be finite"));
        }
        check_tensor(&inertia)?;
        Ok(ChaplyginBallParams {
            mass,
            radius,
            inertia,
            kappa,
        })
    }

    /// The same body as a rolling body with spherical shape; gravity only
    /// enters as a constant and is set to one.
    pub fn as_rolling_body(&self) -> RollingBodyParams {
        RollingBodyParams {
            mass: self.mass,
            gravity: 1.0,
            inertia: self.inertia,
            kappa: self.kappa,
            shape: Shape::Sphere { radius: self.radius },
        }
    }

    pub fn omega(&self, s: &RollingBodyState) -> Result<Vector3<f64>> {
        omega_from_k_rho(self.mass, &self.inertia, &(s.gamma * self.radius), &s.k)
    }
}

/// Chaplygin ball on the rotating plane in `(K, X, gamma)` variables.
pub fn chap3d_vector_field(params: &ChaplyginBallParams, s: &RollingBodyState) -> Result<RollingBodyState> {
    let m = params.mass;
    let r = params.radius;
    let kappa = params.kappa;
    let omega = params.omega(s)?;
    let k_dot = s.k.cross(&omega) - s.gamma.cross(&omega) * (m * r * r * kappa) + s.gamma.cross(&s.x) * (m * r * kappa * kappa);
    let x_dot = (s.gamma * kappa - omega).cross(&s.x) + omega.cross(&s.gamma) * r;
    Ok(RollingBodyState {
        k: k_dot,
        x: x_dot,
        gamma: s.gamma.cross(&omega),
    })
}

/// `E~ = 1/2 K . Omega - m/2 kappa^2 |X|^2`.
pub fn chap3d_tilde_energy(params: &ChaplyginBallParams, s: &RollingBodyState) -> Result<f64> {
    let omega = params.omega(s)?;
    Ok(0.5 * s.k.dot(&omega) - 0.5 * params.mass * params.kappa * params.kappa * s.x.norm_squared())
}

pub fn chap3d_k_dot_gamma(s: &RollingBodyState) -> f64 {
    s.k.dot(&s.gamma)
}
