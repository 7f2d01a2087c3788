//! Generic coordinate engine for mechanical systems with affine velocity
//! constraints.
//!
//! A system is given in a chart by its Lagrangian
//! `L = 1/2 qdot.A(q)qdot + b(q).qdot - V(q)` and the constraint
//! `S(q) qdot + s(q) = 0`. Everything here is a pure function of the
//! system callbacks and the supplied state.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::integrator::FlowProblem;

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Returns one matrix per coordinate: entry `j` is the partial derivative
/// with respect to `q_j`.
pub type TensorFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// Default central-difference step, `eps^(1/3)`.
pub fn default_fd_step() -> f64 {
    f64::EPSILON.cbrt()
}

/// Callback bundle defining a nonholonomic system in a coordinate chart.
#[derive(Clone)]
pub struct MechanicalSystem {
    n: usize,
    k: usize,
    metric: MatrixFn,
    gyro: VectorFn,
    potential: ScalarFn,
    constraint: MatrixFn,
    shift: VectorFn,
    d_metric: Option<TensorFn>,
    d_gyro: Option<MatrixFn>,
    d_potential: Option<VectorFn>,
    d_constraint: Option<TensorFn>,
    d_shift: Option<MatrixFn>,
    fd_step: f64,
    tol_constraint: f64,
}

impl fmt::Debug for MechanicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanicalSystem")
            .field("n", &self.n)
            .field("k", &self.k)
            .field("analytic_d_metric", &self.d_metric.is_some())
            .field("analytic_d_gyro", &self.d_gyro.is_some())
            .field("analytic_d_potential", &self.d_potential.is_some())
            .field("analytic_d_constraint", &self.d_constraint.is_some())
            .field("analytic_d_shift", &self.d_shift.is_some())
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

/// Builder for [`MechanicalSystem`]. The metric and the constraint rows are
/// mandatory; `b`, `V` and `s` default to zero.
pub struct SystemBuilder {
    sys: MechanicalSystem,
    has_metric: bool,
    has_constraint: bool,
}

impl SystemBuilder {
    pub fn metric(mut self, f: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.sys.metric = Arc::new(f);
        self.has_metric = true;
        self
    }

    pub fn gyro(mut self, f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.sys.gyro = Arc::new(f);
        self
    }

    pub fn potential(mut self, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.sys.potential = Arc::new(f);
        self
    }

    pub fn constraint(mut self, f: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.sys.constraint = Arc::new(f);
        self.has_constraint = true;
        self
    }

    pub fn shift(mut self, f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.sys.shift = Arc::new(f);
        self
    }

    pub fn d_metric(mut self, f: impl Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static) -> Self {
        self.sys.d_metric = Some(Arc::new(f));
        self
    }

    /// Jacobian of `b`: entry `(i, j)` is `db_i/dq_j`.
    pub fn d_gyro(mut self, f: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.sys.d_gyro = Some(Arc::new(f));
        self
    }

    pub fn d_potential(mut self, f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.sys.d_potential = Some(Arc::new(f));
        self
    }

    pub fn d_constraint(mut self, f: impl Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static) -> Self {
        self.sys.d_constraint = Some(Arc::new(f));
        self
    }

    /// Jacobian of `s`: entry `(a, j)` is `ds_a/dq_j`.
    pub fn d_shift(mut self, f: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.sys.d_shift = Some(Arc::new(f));
        self
    }

    pub fn fd_step(mut self, h: f64) -> Self {
        self.sys.fd_step = h;
        self
    }

    pub fn tol_constraint(mut self, tol: f64) -> Self {
        self.sys.tol_constraint = tol;
        self
    }

    pub fn build(self) -> Result<MechanicalSystem> {
        let MechanicalSystem { n, k, .. } = self.sys;
        if !self.has_metric {
            return Err(Error::invalid("metric", "kinetic metric callback is required"));
        }
        if !self.has_constraint {
            return Err(Error::invalid("constraint", "constraint rows callback is required"));
        }
        if k == 0 || k >= n {
            return Err(Error::invalid("k", format!("need 1 <= k < n, got k = {k}, n = {n}")));
        }
        if !(self.sys.fd_step > 0.0) {
            return Err(Error::invalid("fd_step", "must be positive"));
        }
        Ok(self.sys)
    }
}

/// A point `(q, qdot)` of the tangent bundle at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub t: f64,
}

impl State {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Self {
        State { q, qdot, t: 0.0 }
    }

    pub fn from_slices(q: &[f64], qdot: &[f64]) -> Self {
        State::new(DVector::from_column_slice(q), DVector::from_column_slice(qdot))
    }

    /// Packs `(q, qdot)` into one vector, positions first.
    pub fn to_flat(&self) -> DVector<f64> {
        let n = self.q.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.q[i] } else { self.qdot[i - n] })
    }

    pub fn from_flat(y: &DVector<f64>, t: f64) -> Self {
        let n = y.len() / 2;
        State {
            q: y.rows(0, n).into_owned(),
            qdot: y.rows(n, n).into_owned(),
            t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|x| x.is_finite())
    }
}

/// Pointwise constraint data at `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGeometry {
    /// `n x (n-k)` matrix with orthonormal columns spanning `ker S(q)`.
    pub d_basis: DMatrix<f64>,
    /// Minimal-norm solution of `S(q) Z0 = -s(q)`.
    pub z0: DVector<f64>,
    /// `S(q) qdot + s(q)`.
    pub residual: DVector<f64>,
}

/// A vector field on the configuration chart with optional Jacobian.
#[derive(Clone)]
pub struct VectorFieldOnQ {
    field: VectorFn,
    jacobian: Option<MatrixFn>,
    fd_step: f64,
}

impl fmt::Debug for VectorFieldOnQ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldOnQ")
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl VectorFieldOnQ {
    pub fn new(f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        VectorFieldOnQ {
            field: Arc::new(f),
            jacobian: None,
            fd_step: default_fd_step(),
        }
    }

    pub fn with_jacobian(mut self, j: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(j));
        self
    }

    /// The zero field on an `n`-dimensional chart.
    pub fn zero(n: usize) -> Self {
        VectorFieldOnQ::new(move |_| DVector::zeros(n)).with_jacobian(move |_| DMatrix::zeros(n, n))
    }

    /// A constant field.
    pub fn constant(v: DVector<f64>) -> Self {
        let n = v.len();
        VectorFieldOnQ::new(move |_| v.clone()).with_jacobian(move |_| DMatrix::zeros(n, n))
    }

    pub fn eval(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.field)(q)
    }

    /// Jacobian `dY_i/dq_j`, analytic when available, else central differences.
    pub fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(q),
            None => {
                let n = q.len();
                let cols: Vec<DVector<f64>> = (0..n)
                    .map(|j| central_difference(q, j, self.fd_step, |x| (self.field)(x)))
                    .collect();
                DMatrix::from_columns(&cols)
            }
        }
    }

    /// `a Y1 + b Y2`.
    pub fn combine(a: f64, y1: &VectorFieldOnQ, b: f64, y2: &VectorFieldOnQ) -> VectorFieldOnQ {
        let (f1, f2) = (y1.clone(), y2.clone());
        let (j1, j2) = (y1.clone(), y2.clone());
        VectorFieldOnQ::new(move |q| f1.eval(q) * a + f2.eval(q) * b)
            .with_jacobian(move |q| j1.jacobian(q) * a + j2.jacobian(q) * b)
    }
}

fn central_difference<T>(q: &DVector<f64>, j: usize, fd_step: f64, f: impl Fn(&DVector<f64>) -> T) -> T
where
    T: std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T>,
{
    let h = fd_step * q[j].abs().max(1.0);
    let mut qp = q.clone();
    let mut qm = q.clone();
    qp[j] += h;
    qm[j] -= h;
    // the effective step is the representable difference
    let step = qp[j] - qm[j];
    (f(&qp) - f(&qm)) / step
}

/// All callback values and first derivatives needed at one configuration.
#[derive(Debug, Clone)]
pub struct PointData {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub v: f64,
    pub s_mat: DMatrix<f64>,
    pub s_vec: DVector<f64>,
    pub da: Vec<DMatrix<f64>>,
    pub db: DMatrix<f64>,
    pub dv: DVector<f64>,
    pub ds_mat: Vec<DMatrix<f64>>,
    pub ds_vec: DMatrix<f64>,
}

struct Solved {
    a_chol: Cholesky<f64, Dyn>,
    c_chol: Cholesky<f64, Dyn>,
}

impl MechanicalSystem {
    pub fn builder(n: usize, k: usize) -> SystemBuilder {
        SystemBuilder {
            sys: MechanicalSystem {
                n,
                k,
                metric: Arc::new(move |_| DMatrix::identity(n, n)),
                gyro: Arc::new(move |_| DVector::zeros(n)),
                potential: Arc::new(|_| 0.0),
                constraint: Arc::new(move |_| DMatrix::zeros(k, n)),
                shift: Arc::new(move |_| DVector::zeros(k)),
                d_metric: None,
                d_gyro: None,
                d_potential: None,
                d_constraint: None,
                d_shift: None,
                fd_step: default_fd_step(),
                tol_constraint: 1e-8,
            },
            has_metric: false,
            has_constraint: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tol_constraint(&self) -> f64 {
        self.tol_constraint
    }

    /// Copy of this system with the gyrostatic term removed.
    pub fn without_gyro(&self) -> MechanicalSystem {
        let n = self.n;
        let mut s = self.clone();
        s.gyro = Arc::new(move |_| DVector::zeros(n));
        s.d_gyro = Some(Arc::new(move |_| DMatrix::zeros(n, n)));
        s
    }

    /// Copy of this system with every analytic derivative callback dropped,
    /// so that finite differences are used throughout.
    pub fn with_finite_differences(&self) -> MechanicalSystem {
        let mut s = self.clone();
        s.d_metric = None;
        s.d_gyro = None;
        s.d_potential = None;
        s.d_constraint = None;
        s.d_shift = None;
        s
    }

    pub fn metric(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.metric)(q)
    }

    pub fn gyro(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.gyro)(q)
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        (self.potential)(q)
    }

    pub fn constraint_rows(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.constraint)(q)
    }

    pub fn constraint_shift(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.shift)(q)
    }

    pub fn d_metric(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        match &self.d_metric {
            Some(f) => f(q),
            None => (0..self.n)
                .map(|j| central_difference(q, j, self.fd_step, |x| (self.metric)(x)))
                .collect(),
        }
    }

    pub fn d_gyro(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match &self.d_gyro {
            Some(f) => f(q),
            None => {
                let cols: Vec<DVector<f64>> = (0..self.n)
                    .map(|j| central_difference(q, j, self.fd_step, |x| (self.gyro)(x)))
                    .collect();
                DMatrix::from_columns(&cols)
            }
        }
    }

    pub fn d_potential(&self, q: &DVector<f64>) -> DVector<f64> {
        match &self.d_potential {
            Some(f) => f(q),
            None => DVector::from_fn(self.n, |j, _| {
                central_difference(q, j, self.fd_step, |x| Fd((self.potential)(x))).0
            }),
        }
    }

    pub fn d_constraint_rows(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        match &self.d_constraint {
            Some(f) => f(q),
            None => (0..self.n)
                .map(|j| central_difference(q, j, self.fd_step, |x| (self.constraint)(x)))
                .collect(),
        }
    }

    pub fn d_constraint_shift(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match &self.d_shift {
            Some(f) => f(q),
            None => {
                let cols: Vec<DVector<f64>> = (0..self.n)
                    .map(|j| central_difference(q, j, self.fd_step, |x| (self.shift)(x)))
                    .collect();
                DMatrix::from_columns(&cols)
            }
        }
    }

    /// Evaluates every callback and derivative at `q`.
    pub fn point_data(&self, q: &DVector<f64>) -> Result<PointData> {
        self.check_dim(q)?;
        let data = PointData {
            a: self.metric(q),
            b: self.gyro(q),
            v: self.potential(q),
            s_mat: self.constraint_rows(q),
            s_vec: self.constraint_shift(q),
            da: self.d_metric(q),
            db: self.d_gyro(q),
            dv: self.d_potential(q),
            ds_mat: self.d_constraint_rows(q),
            ds_vec: self.d_constraint_shift(q),
        };
        let finite = data.a.iter().all(|x| x.is_finite())
            && data.b.iter().all(|x| x.is_finite())
            && data.v.is_finite()
            && data.s_mat.iter().all(|x| x.is_finite())
            && data.s_vec.iter().all(|x| x.is_finite())
            && data.da.iter().all(|m| m.iter().all(|x| x.is_finite()))
            && data.db.iter().all(|x| x.is_finite())
            && data.dv.iter().all(|x| x.is_finite())
            && data.ds_mat.iter().all(|m| m.iter().all(|x| x.is_finite()))
            && data.ds_vec.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::NumericalFailure(format!(
                "system callbacks returned a non-finite value at q = {:?}",
                q.as_slice()
            )));
        }
        Ok(data)
    }

    fn check_dim(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: q.len(),
            });
        }
        Ok(())
    }

    fn solve(&self, q: &DVector<f64>, a: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<Solved> {
        let a_chol = Cholesky::new(a.clone()).ok_or_else(|| Error::MetricNotPositiveDefinite {
            q: q.as_slice().to_vec(),
        })?;
        let a_inv_st = a_chol.solve(&s.transpose());
        let c = s * a_inv_st;
        let c_chol = Cholesky::new((&c + c.transpose()) * 0.5).ok_or_else(|| Error::ConstraintDegeneracy {
            q: q.as_slice().to_vec(),
        })?;
        Ok(Solved { a_chol, c_chol })
    }

    /// `p = A(q) qdot + b(q)`.
    pub fn momentum_covector(&self, state: &State) -> DVector<f64> {
        self.metric(&state.q) * &state.qdot + self.gyro(&state.q)
    }

    /// The vectors `ell` (n) and `sigma` (k) entering the reaction force.
    pub fn ell_sigma(&self, state: &State) -> Result<(DVector<f64>, DVector<f64>)> {
        let d = self.point_data(&state.q)?;
        let (ell, sigma) = ell_sigma_from(&d, &state.qdot);
        if ell.iter().chain(sigma.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure("ell/sigma not finite".into()));
        }
        Ok((ell, sigma))
    }

    /// Ideal reaction force `R = S^T (S A^-1 S^T)^-1 (S A^-1 ell - sigma)`.
    pub fn reaction_force(&self, state: &State) -> Result<DVector<f64>> {
        Ok(self.reaction_and_accelerations(state)?.0)
    }

    /// `qddot = A^-1 (-ell + R)`.
    pub fn accelerations(&self, state: &State) -> Result<DVector<f64>> {
        Ok(self.reaction_and_accelerations(state)?.1)
    }

    /// Reaction force and accelerations sharing one factorization.
    pub fn reaction_and_accelerations(&self, state: &State) -> Result<(DVector<f64>, DVector<f64>)> {
        let d = self.point_data(&state.q)?;
        let (ell, sigma) = ell_sigma_from(&d, &state.qdot);
        let solved = self.solve(&state.q, &d.a, &d.s_mat)?;
        let a_inv_ell = solved.a_chol.solve(&ell);
        let rhs = &d.s_mat * &a_inv_ell - sigma;
        let mult = solved.c_chol.solve(&rhs);
        let r = d.s_mat.transpose() * mult;
        let qddot = solved.a_chol.solve(&(&r - &ell));
        if r.iter().chain(qddot.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite reaction force at q = {:?}",
                state.q.as_slice()
            )));
        }
        Ok((r, qddot))
    }

    /// `|S(q) qdot + s(q)|`.
    pub fn constraint_residual(&self, state: &State) -> f64 {
        (self.constraint_rows(&state.q) * &state.qdot + self.constraint_shift(&state.q)).norm()
    }

    pub fn is_on_manifold(&self, state: &State) -> bool {
        self.constraint_residual(state) <= self.tol_constraint
    }

    /// Orthonormal kernel basis of `S(q)`, minimal-norm shift and residual.
    pub fn constraint_geometry(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<ConstraintGeometry> {
        self.check_dim(q)?;
        let s = self.constraint_rows(q);
        let sv = self.constraint_shift(q);
        let (n, k) = (self.n, self.k);
        let degenerate = || Error::ConstraintDegeneracy {
            q: q.as_slice().to_vec(),
        };
        let sst = &s * s.transpose();
        let sst_chol = Cholesky::new(sst).ok_or_else(degenerate)?;
        // Householder QR of [S^T | Id]: the first k columns of Q span range(S^T),
        // the remaining n - k span its orthogonal complement ker S.
        let mut aug = DMatrix::zeros(n, k + n);
        aug.view_mut((0, 0), (n, k)).copy_from(&s.transpose());
        aug.view_mut((0, k), (n, n)).fill_with_identity();
        let qr = aug.qr();
        let r = qr.r();
        let scale = s.amax().max(f64::MIN_POSITIVE);
        if (0..k).any(|i| r[(i, i)].abs() <= 1e-12 * scale) {
            return Err(degenerate());
        }
        let qfull = qr.q();
        let d_basis = qfull.columns(k, n - k).into_owned();
        let z0 = -(s.transpose() * sst_chol.solve(&sv));
        let residual = &s * qdot + &sv;
        Ok(ConstraintGeometry { d_basis, z0, residual })
    }

    /// `A`-orthogonal projection of `qdot` onto the affine fiber `M_q`.
    pub fn project_velocity(&self, state: &State) -> Result<State> {
        let a = self.metric(&state.q);
        let s = self.constraint_rows(&state.q);
        let residual = &s * &state.qdot + self.constraint_shift(&state.q);
        let solved = self.solve(&state.q, &a, &s)?;
        let correction = solved.a_chol.solve(&(s.transpose() * solved.c_chol.solve(&residual)));
        Ok(State {
            q: state.q.clone(),
            qdot: &state.qdot - correction,
            t: state.t,
        })
    }

    /// `E_L = 1/2 qdot.A qdot + V`.
    pub fn energy(&self, state: &State) -> f64 {
        let a = self.metric(&state.q);
        0.5 * state.qdot.dot(&(a * &state.qdot)) + self.potential(&state.q)
    }

    /// `J_Y = p . Y(q)`.
    pub fn momentum_of_field(&self, state: &State, y: &VectorFieldOnQ) -> f64 {
        self.momentum_covector(state).dot(&y.eval(&state.q))
    }

    /// `E_{L,Y} = E_L - J_Y`.
    pub fn moving_energy(&self, state: &State, y: &VectorFieldOnQ) -> f64 {
        self.energy(state) - self.momentum_of_field(state, y)
    }

    /// `dL/dq` at a state.
    pub fn lagrangian_q_gradient(&self, state: &State) -> Result<DVector<f64>> {
        let d = self.point_data(&state.q)?;
        Ok(dl_dq(&d, &state.qdot))
    }

    /// The tangent lift of `Y` applied to `L`:
    /// `sum_i Y_i dL/dq_i + sum_ij qdot_j dY_i/dq_j dL/dqdot_i`.
    pub fn lifted_derivative(&self, state: &State, y: &VectorFieldOnQ) -> Result<f64> {
        let d = self.point_data(&state.q)?;
        let yq = y.eval(&state.q);
        let jy = y.jacobian(&state.q);
        let p = &d.a * &state.qdot + &d.b;
        Ok(yq.dot(&dl_dq(&d, &state.qdot)) + p.dot(&(jy * &state.qdot)))
    }

    /// First-order flow `(q, qdot)' = (qdot, qddot)` on `TQ`, optionally with
    /// velocity projection onto `M` after every step.
    pub fn flow_problem(self: &Arc<Self>, project: bool) -> FlowProblem {
        let n = self.n;
        let sys = Arc::clone(self);
        let mut problem = FlowProblem::new(2 * n, move |t, y| {
            let state = State::from_flat(y, t);
            let qddot = sys.accelerations(&state)?;
            Ok(DVector::from_fn(
                2 * n,
                |i, _| if i < n { state.qdot[i] } else { qddot[i - n] },
            ))
        });
        if project {
            let sys = Arc::clone(self);
            problem = problem.with_projector(move |y| {
                let state = State::from_flat(y, 0.0);
                Ok(sys.project_velocity(&state)?.to_flat())
            });
        }
        problem
    }
}

/// Scalar wrapper so the generic central difference can return `f64`.
struct Fd(f64);

impl std::ops::Sub for Fd {
    type Output = Fd;
    fn sub(self, rhs: Fd) -> Fd {
        Fd(self.0 - rhs.0)
    }
}

impl std::ops::Div<f64> for Fd {
    type Output = Fd;
    fn div(self, rhs: f64) -> Fd {
        Fd(self.0 / rhs)
    }
}

fn dl_dq(d: &PointData, qdot: &DVector<f64>) -> DVector<f64> {
    let n = qdot.len();
    let bq = d.db.transpose() * qdot;
    DVector::from_fn(n, |i, _| 0.5 * qdot.dot(&(&d.da[i] * qdot)) + bq[i] - d.dv[i])
}

fn ell_sigma_from(d: &PointData, qdot: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = qdot.len();
    let k = d.s_vec.len();
    // sum_j (sum_m dA_im/dq_j qdot_m + db_i/dq_j) qdot_j
    let mut mixed = &d.db * qdot;
    for j in 0..n {
        mixed += (&d.da[j] * qdot) * qdot[j];
    }
    let ell = mixed - dl_dq(d, qdot);
    let mut sigma = &d.ds_vec * qdot;
    for j in 0..n {
        sigma += (&d.ds_mat[j] * qdot) * qdot[j];
    }
    debug_assert_eq!(sigma.len(), k);
    (ell, sigma)
}

/// Heavy particle on the plane with `V = q2` and the linear constraint
/// `qdot1 + qdot2 = 0`; the reference system used throughout the tests.
pub fn heavy_particle_toy() -> MechanicalSystem {
    MechanicalSystem::builder(2, 1)
        .metric(|_| DMatrix::identity(2, 2))
        .potential(|q| q[1])
        .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 1.0]))
        .build()
        .expect("valid toy system")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    /// Smooth test system with nontrivial q-dependence in every callback.
    fn wobbly(analytic: bool) -> MechanicalSystem {
        let mut b = MechanicalSystem::builder(3, 1)
            .metric(|q| {
                let mut a = DMatrix::identity(3, 3);
                a[(0, 0)] = 2.0 + q[1].sin();
                a[(1, 1)] = 1.5 + 0.5 * q[2].cos();
                a[(0, 1)] = 0.3 * q[2];
                a[(1, 0)] = 0.3 * q[2];
                a
            })
            .gyro(|q| dv(&[q[1] * q[2], 0.5 * q[0], 0.0]))
            .potential(|q| q[0] * q[0] + q[1].cos())
            .constraint(|q| DMatrix::from_row_slice(1, 3, &[1.0, q[0], q[1].sin()]))
            .shift(|q| dv(&[0.7 + 0.1 * q[2]]));
        if analytic {
            b = b
                .d_metric(|q| {
                    let mut d0 = DMatrix::zeros(3, 3);
                    let mut d1 = DMatrix::zeros(3, 3);
                    let mut d2 = DMatrix::zeros(3, 3);
                    let _ = &mut d0;
                    d1[(0, 0)] = q[1].cos();
                    d2[(1, 1)] = -0.5 * q[2].sin();
                    d2[(0, 1)] = 0.3;
                    d2[(1, 0)] = 0.3;
                    vec![d0, d1, d2]
                })
                .d_gyro(|q| DMatrix::from_row_slice(3, 3, &[0.0, q[2], q[1], 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]))
                .d_potential(|q| dv(&[2.0 * q[0], -q[1].sin(), 0.0]))
                .d_constraint(|q| {
                    let d0 = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
                    let d1 = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, q[1].cos()]);
                    let d2 = DMatrix::zeros(1, 3);
                    vec![d0, d1, d2]
                })
                .d_shift(|_| DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.1]));
        }
        b.build().unwrap()
    }

    #[test]
    fn momentum_examples() {
        let free = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap();
        let p = free.momentum_covector(&State::from_slices(&[0.0, 0.0], &[1.0, 2.0]));
        assert_eq!(p.as_slice(), &[1.0, 2.0]);

        let gyro = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .gyro(|q| dv(&[q[1], 0.0]))
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap();
        let p = gyro.momentum_covector(&State::from_slices(&[0.0, 3.0], &[1.0, 0.0]));
        assert_eq!(p.as_slice(), &[4.0, 0.0]);

        let toy = heavy_particle_toy();
        let st = State::from_slices(&[0.3, -0.2], &[1.0, -1.0]);
        assert_eq!(toy.momentum_covector(&st), st.qdot);
    }

    #[test]
    fn ell_sigma_examples() {
        let flat = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]))
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 2.0]))
            .shift(|_| dv(&[0.3]))
            .build()
            .unwrap();
        let (ell, sigma) = flat.ell_sigma(&State::from_slices(&[1.0, 2.0], &[3.0, -4.0])).unwrap();
        assert!(ell.amax() < 1e-9);
        assert!(sigma.amax() < 1e-9);

        let toy = heavy_particle_toy();
        let (ell, _) = toy.ell_sigma(&State::from_slices(&[0.1, 0.4], &[2.0, 5.0])).unwrap();
        assert!((ell[0]).abs() < 1e-9 && (ell[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn heavy_particle_reaction_and_accelerations() {
        let toy = heavy_particle_toy();
        let st = State::from_slices(&[0.0, 0.0], &[1.0, -1.0]);
        let (r, qdd) = toy.reaction_and_accelerations(&st).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
        assert!((qdd[0] - 0.5).abs() < 1e-12 && (qdd[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_linear_system_has_no_reaction() {
        let sys = MechanicalSystem::builder(3, 1)
            .metric(|_| DMatrix::identity(3, 3))
            .constraint(|_| DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]))
            .build()
            .unwrap();
        let r = sys
            .reaction_force(&State::from_slices(&[1.0, 2.0, 3.0], &[2.0, 1.0, 0.0]))
            .unwrap();
        assert!(r.amax() < 1e-9);
    }

    #[test]
    fn free_direction_has_zero_acceleration() {
        let sys = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap();
        let qdd = sys.accelerations(&State::from_slices(&[0.0, 0.0], &[0.0, 1.0])).unwrap();
        assert!(qdd.amax() < 1e-12);
    }

    #[test]
    fn degenerate_constraint_is_reported() {
        let sys = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .constraint(|q| DMatrix::from_row_slice(1, 2, &[q[0], 0.0]))
            .build()
            .unwrap();
        let st = State::from_slices(&[0.0, 1.0], &[0.0, 1.0]);
        assert!(matches!(sys.reaction_force(&st), Err(Error::ConstraintDegeneracy { .. })));
        assert!(matches!(
            sys.constraint_geometry(&st.q, &st.qdot),
            Err(Error::ConstraintDegeneracy { .. })
        ));
    }

    #[test]
    fn indefinite_metric_is_reported() {
        let sys = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]))
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap();
        let st = State::from_slices(&[0.0, 0.0], &[0.0, 1.0]);
        assert!(matches!(sys.accelerations(&st), Err(Error::MetricNotPositiveDefinite { .. })));
    }

    #[test]
    fn builder_validates_ranks() {
        let r = MechanicalSystem::builder(2, 2)
            .metric(|_| DMatrix::identity(2, 2))
            .constraint(|_| DMatrix::identity(2, 2))
            .build();
        assert!(r.is_err());
        assert!(MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .build()
            .is_err());
    }

    #[test]
    fn constraint_geometry_examples() {
        let sys = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap();
        let g = sys.constraint_geometry(&dv(&[0.0, 0.0]), &dv(&[0.0, 0.0])).unwrap();
        assert!((g.d_basis[(0, 0)]).abs() < 1e-15 && (g.d_basis[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!(g.z0.amax() < 1e-15);

        let c = 2.5;
        let shifted = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .shift(move |_| dv(&[c]))
            .build()
            .unwrap();
        let g = shifted.constraint_geometry(&dv(&[0.0, 0.0]), &dv(&[0.0, 0.0])).unwrap();
        assert!((g.z0[0] + c).abs() < 1e-15 && g.z0[1].abs() < 1e-15);
    }

    #[test]
    fn constraint_geometry_defining_properties() {
        let sys = wobbly(false);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let qd = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let g = sys.constraint_geometry(&q, &qd).unwrap();
            let s = sys.constraint_rows(&q);
            assert!((&s * &g.d_basis).amax() < 1e-12);
            let gram = g.d_basis.transpose() * &g.d_basis;
            assert!((gram - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
            assert!((&s * &g.z0 + sys.constraint_shift(&q)).amax() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let sys = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap();
        let p = sys.project_velocity(&State::from_slices(&[0.0, 0.0], &[3.0, 1.0])).unwrap();
        assert_eq!(p.qdot.as_slice(), &[0.0, 1.0]);
        let on = State::from_slices(&[0.0, 0.0], &[0.0, 2.0]);
        assert_eq!(sys.project_velocity(&on).unwrap(), on);
    }

    #[test]
    fn projection_is_idempotent_and_lands_on_manifold() {
        let sys = wobbly(true);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let st = State::new(
                DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)),
                DVector::from_fn(3, |_, _| rng.gen_range(-5.0..5.0)),
            );
            let p1 = sys.project_velocity(&st).unwrap();
            let p2 = sys.project_velocity(&p1).unwrap();
            assert!(sys.constraint_residual(&p1) <= 1e-12 * (1.0 + st.qdot.norm()));
            assert!((&p1.qdot - &p2.qdot).amax() < 1e-12);
        }
    }

    #[test]
    fn energy_examples() {
        let sys = wobbly(true);
        let q = dv(&[0.4, -0.3, 1.1]);
        let rest = State::new(q.clone(), DVector::zeros(3));
        assert_eq!(sys.energy(&rest), sys.potential(&q));
        let st = State::new(q, dv(&[1.0, -2.0, 0.5]));
        assert_eq!(sys.energy(&st), sys.without_gyro().energy(&st));
    }

    #[test]
    fn momentum_of_field_examples() {
        let toy = heavy_particle_toy();
        let st = State::from_slices(&[0.2, 0.1], &[1.5, -0.7]);
        assert_eq!(toy.momentum_of_field(&st, &VectorFieldOnQ::zero(2)), 0.0);
        for i in 0..2 {
            let e = VectorFieldOnQ::constant(DVector::from_fn(2, |j, _| (i == j) as u8 as f64));
            assert_eq!(toy.momentum_of_field(&st, &e), st.qdot[i]);
        }
        let sys = wobbly(true);
        let y1 = VectorFieldOnQ::new(|q| dv(&[q[1], q[0].sin(), 1.0]));
        let y2 = VectorFieldOnQ::new(|q| dv(&[q[2] * q[2], -1.0, q[0]]));
        let (a, b) = (0.7, -1.9);
        let comb = VectorFieldOnQ::combine(a, &y1, b, &y2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let st = State::new(
                DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)),
                DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)),
            );
            let lhs = sys.momentum_of_field(&st, &comb);
            let rhs = a * sys.momentum_of_field(&st, &y1) + b * sys.momentum_of_field(&st, &y2);
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn moving_energy_with_zero_generator_is_energy() {
        let sys = wobbly(true);
        let st = State::from_slices(&[0.1, 0.2, 0.3], &[-1.0, 0.5, 2.0]);
        assert_eq!(sys.moving_energy(&st, &VectorFieldOnQ::zero(3)), sys.energy(&st));
    }

    #[test]
    fn lifted_derivative_examples() {
        let flat = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap();
        let y = VectorFieldOnQ::constant(dv(&[1.0, -3.0]));
        let st = State::from_slices(&[0.5, 0.2], &[1.0, 4.0]);
        assert!(flat.lifted_derivative(&st, &y).unwrap().abs() < 1e-12);

        let radial = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .potential(|q| q.norm_squared())
            .d_potential(|q| q * 2.0)
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap();
        let rot =
            VectorFieldOnQ::new(|q| dv(&[-q[1], q[0]])).with_jacobian(|_| DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let st = State::new(
                DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0)),
                DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0)),
            );
            assert!(radial.lifted_derivative(&st, &rot).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn momentum_rate_matches_lifted_derivative_plus_work() {
        // d/dt J_Y = Yhat(L) + R.Y along the exact dynamics
        let sys = wobbly(true);
        let y = VectorFieldOnQ::new(|q| dv(&[q[1].cos(), q[0] * q[2], 0.5]));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let raw = State::new(
                DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)),
                DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)),
            );
            let st = sys.project_velocity(&raw).unwrap();
            let (r, qdd) = sys.reaction_and_accelerations(&st).unwrap();
            let h = 1e-5;
            let at = |s: f64| State::new(&st.q + &st.qdot * s + &qdd * (0.5 * s * s), &st.qdot + &qdd * s);
            let rate = (sys.momentum_of_field(&at(h), &y) - sys.momentum_of_field(&at(-h), &y)) / (2.0 * h);
            let formula = sys.lifted_derivative(&st, &y).unwrap() + r.dot(&y.eval(&st.q));
            assert!((rate - formula).abs() < 1e-6 * (1.0 + formula.abs()), "{rate} vs {formula}");
        }
    }

    #[test]
    fn energy_rate_is_reaction_power() {
        let sys = wobbly(true);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let raw = State::new(
                DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)),
                DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)),
            );
            let st = sys.project_velocity(&raw).unwrap();
            let (r, qdd) = sys.reaction_and_accelerations(&st).unwrap();
            let h = 1e-5;
            let at = |s: f64| State::new(&st.q + &st.qdot * s + &qdd * (0.5 * s * s), &st.qdot + &qdd * s);
            let rate = (sys.energy(&at(h)) - sys.energy(&at(-h))) / (2.0 * h);
            let power = r.dot(&st.qdot);
            let z0 = sys.constraint_geometry(&st.q, &st.qdot).unwrap().z0;
            assert!((rate - power).abs() < 1e-6 * (1.0 + power.abs()));
            assert!((power - r.dot(&z0)).abs() < 1e-10 * (1.0 + power.abs()));
        }
    }

    #[test]
    fn reaction_force_invariants_on_random_states() {
        let sys = wobbly(true);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let raw = State::new(
                DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)),
                DVector::from_fn(3, |_, _| rng.gen_range(-3.0..3.0)),
            );
            let st = sys.project_velocity(&raw).unwrap();
            let d = sys.point_data(&st.q).unwrap();
            let (ell, sigma) = sys.ell_sigma(&st).unwrap();
            let (r, qdd) = sys.reaction_and_accelerations(&st).unwrap();
            // R in range(S^T): its component along ker S vanishes
            let g = sys.constraint_geometry(&st.q, &st.qdot).unwrap();
            let along_kernel = g.d_basis.transpose() * &r;
            assert!(along_kernel.norm() <= 1e-10 * r.norm().max(1.0));
            // constraint maintained to second order
            let second = &d.s_mat * &qdd + &sigma;
            let scale = (&d.s_mat * Cholesky::new(d.a.clone()).unwrap().solve(&ell)).norm() + sigma.norm() + 1.0;
            assert!(second.norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn finite_differences_match_analytic_derivatives() {
        let analytic = wobbly(true);
        let fd = analytic.with_finite_differences();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let q = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let a = analytic.point_data(&q).unwrap();
            let f = fd.point_data(&q).unwrap();
            let rel = |x: &DMatrix<f64>, y: &DMatrix<f64>| (x - y).amax() / x.amax().max(1.0);
            for j in 0..3 {
                assert!(rel(&a.da[j], &f.da[j]) < 1e-6);
                assert!(rel(&a.ds_mat[j], &f.ds_mat[j]) < 1e-6);
            }
            assert!(rel(&a.db, &f.db) < 1e-6);
            assert!(rel(&a.ds_vec, &f.ds_vec) < 1e-6);
            assert!((&a.dv - &f.dv).amax() / a.dv.amax().max(1.0) < 1e-6);
        }
    }

    #[test]
    fn non_finite_callbacks_are_numerical_failures() {
        let sys = MechanicalSystem::builder(2, 1)
            .metric(|_| DMatrix::identity(2, 2))
            .potential(|q| (q[0] - 1.0).ln())
            .constraint(|_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .build()
            .unwrap();
        let st = State::from_slices(&[-3.0, 0.0], &[0.0, 1.0]);
        assert!(matches!(sys.ell_sigma(&st), Err(Error::NumericalFailure(_))));
    }
}
