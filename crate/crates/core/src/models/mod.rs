//! Trivialized model families with closed-form moving energies, manifold
//! residuals and chart embeddings, plus a string-keyed registry.
//!
//! Flat state layouts (also the CSV column order):
//!
//! | id | layout |
//! |----|--------|
//! | `veselova-3d`, `lr-son` | `gamma^1 .. gamma^k, Omega`, each in so(n) coordinates |
//! | `rolling-body`, `chaplygin-3d` | `K, X, gamma` |
//! | `chaplygin-nd` | `x`, `g` row-major, `K` in so(n) coordinates |
//! | `chaplygin-nd-reduced` | `K`, `X`, `gamma`, `Xi` |

pub mod chaplygin_nd;
pub mod chart;
pub mod inertia;
pub mod lr;
pub mod rolling;

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

pub use chaplygin_nd::{
    chapnd_full_energy, chapnd_full_moving_energy, chapnd_full_project, chapnd_full_residuals, chapnd_full_vector_field,
    chapnd_reduced_energy, chapnd_reduced_moving_energy, chapnd_reduced_project, chapnd_reduced_residuals,
    chapnd_reduced_vector_field, eta_on_plane, omega_from_k_nd, ChapNdFullRate, ChapNdFullState, ChapNdReducedState,
    ChaplyginNdParams,
};
pub use chart::{ChartModel, ChartSystem, CHART_MARGIN};
pub use inertia::InertiaOperator;
pub use lr::{lr_energy, lr_moving_energy, lr_project, lr_residuals, lr_vector_field, LrParams, LrState};
pub use rolling::{
    chap3d_k_dot_gamma, chap3d_tilde_energy, chap3d_vector_field, k_from_omega_3d, omega_from_k_3d, rolling_body_energy,
    rolling_body_moving_energy, rolling_body_project, rolling_body_residuals, rolling_body_vector_field, ChaplyginBallParams,
    RollingBodyParams, RollingBodyState, Shape,
};

use crate::error::{Error, Result};
use crate::integrator::FlowProblem;
use crate::liegroup::{killing_pair, so_dim};

/// Registry identifiers with one-line descriptions.
pub const MODEL_IDS: [(&str, &str); 6] = [
    ("veselova-3d", "Veselova rigid body with affine constraint omega . e3 = c"),
    ("lr-son", "LR system on SO(n) with right-invariant affine constraints"),
    (
        "rolling-body",
        "convex body rolling on a rotating plane (sphere or ellipsoid)",
    ),
    ("chaplygin-3d", "Chaplygin ball on a rotating plane"),
    (
        "chaplygin-nd",
        "n-dimensional Chaplygin sphere on a rotating hyperplane, full variables",
    ),
    (
        "chaplygin-nd-reduced",
        "n-dimensional Chaplygin sphere, reduced variables (K, X, gamma, Xi)",
    ),
];

/// A configured model instance.
#[derive(Debug, Clone)]
pub enum Model {
    Veselova3d(LrParams),
    LrSon(LrParams),
    RollingBody(RollingBodyParams),
    Chaplygin3d(ChaplyginBallParams),
    ChaplyginNd(ChaplyginNdParams),
    ChaplyginNdReduced(ChaplyginNdParams),
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

fn so_labels(prefix: &str, n: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(so_dim(n));
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(format!("{prefix}_{}{}", i + 1, j + 1));
        }
    }
    out
}

fn vec_labels(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn max_abs(res: &[(String, f64)], name: &str) -> f64 {
    res.iter().find(|(k, _)| k == name).map(|(_, v)| v.abs()).unwrap_or(f64::NAN)
}

impl Model {
    pub fn id(&self) -> &'static str {
        match self {
            Model::Veselova3d(_) => "veselova-3d",
            Model::LrSon(_) => "lr-son",
            Model::RollingBody(_) => "rolling-body",
            Model::Chaplygin3d(_) => "chaplygin-3d",
            Model::ChaplyginNd(_) => "chaplygin-nd",
            Model::ChaplyginNdReduced(_) => "chaplygin-nd-reduced",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Model::Veselova3d(p) | Model::LrSon(p) => p.state_dim(),
            Model::RollingBody(_) | Model::Chaplygin3d(_) => 9,
            Model::ChaplyginNd(p) => p.full_dim(),
            Model::ChaplyginNdReduced(p) => p.reduced_dim(),
        }
    }

    /// Names of the flat state components, in layout order.
    pub fn state_labels(&self) -> Vec<String> {
        match self {
            Model::Veselova3d(p) | Model::LrSon(p) => {
                let mut v = Vec::new();
                for j in 1..=p.k() {
                    v.extend(so_labels(&format!("gamma{j}"), p.n()));
                }
                v.extend(so_labels("omega", p.n()));
                v
            }
            Model::RollingBody(_) | Model::Chaplygin3d(_) => {
                let mut v = vec_labels("K", 3);
                v.extend(vec_labels("X", 3));
                v.extend(vec_labels("gamma", 3));
                v
            }
            Model::ChaplyginNd(p) => {
                let n = p.n();
                let mut v = vec_labels("x", n);
                for i in 1..=n {
                    for j in 1..=n {
                        v.push(format!("g_{i}{j}"));
                    }
                }
                v.extend(so_labels("K", n));
                v
            }
            Model::ChaplyginNdReduced(p) => {
                let n = p.n();
                let mut v = so_labels("K", n);
                v.extend(vec_labels("X", n));
                v.extend(vec_labels("gamma", n));
                v.extend(so_labels("Xi", n));
                v
            }
        }
    }

    fn check(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.state_dim() {
            return Err(Error::Dimension {
                expected: self.state_dim(),
                got: y.len(),
            });
        }
        Ok(())
    }

    pub fn vector_field(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(y)?;
        match self {
            Model::Veselova3d(p) | Model::LrSon(p) => Ok(lr_vector_field(p, &LrState::from_flat(p, y)?)?.to_flat()),
            Model::RollingBody(p) => Ok(rolling_body_vector_field(p, &RollingBodyState::from_flat(y)?)?.to_flat()),
            Model::Chaplygin3d(p) => Ok(chap3d_vector_field(p, &RollingBodyState::from_flat(y)?)?.to_flat()),
            Model::ChaplyginNd(p) => Ok(chapnd_full_vector_field(p, &ChapNdFullState::from_flat(p, y)?)?.to_flat()),
            Model::ChaplyginNdReduced(p) => Ok(chapnd_reduced_vector_field(p, &ChapNdReducedState::from_flat(p, y)?)?.to_flat()),
        }
    }

    /// Projection onto the invariant manifold.
    pub fn project(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(y)?;
        match self {
            Model::Veselova3d(p) | Model::LrSon(p) => Ok(lr_project(p, &LrState::from_flat(p, y)?)?.to_flat()),
            Model::RollingBody(p) => Ok(rolling_body_project(p, &RollingBodyState::from_flat(y)?)?.to_flat()),
            Model::Chaplygin3d(p) => Ok(rolling_body_project(&p.as_rolling_body(), &RollingBodyState::from_flat(y)?)?.to_flat()),
            Model::ChaplyginNd(p) => Ok(chapnd_full_project(p, &ChapNdFullState::from_flat(p, y)?)?.to_flat()),
            Model::ChaplyginNdReduced(p) => Ok(chapnd_reduced_project(p, &ChapNdReducedState::from_flat(p, y)?)?.to_flat()),
        }
    }

    /// Named manifold residuals.
    pub fn invariant_residuals(&self, y: &DVector<f64>) -> Result<Vec<(String, f64)>> {
        self.check(y)?;
        Ok(match self {
            Model::Veselova3d(p) | Model::LrSon(p) => lr_residuals(p, &LrState::from_flat(p, y)?),
            Model::RollingBody(p) => rolling_body_residuals(p, &RollingBodyState::from_flat(y)?),
            Model::Chaplygin3d(p) => rolling_body_residuals(&p.as_rolling_body(), &RollingBodyState::from_flat(y)?),
            Model::ChaplyginNd(p) => chapnd_full_residuals(p, &ChapNdFullState::from_flat(p, y)?),
            Model::ChaplyginNdReduced(p) => chapnd_reduced_residuals(p, &ChapNdReducedState::from_flat(p, y)?),
        })
    }

    /// Observables available for recording.
    pub fn observable_names(&self) -> Vec<&'static str> {
        let mut v = vec!["moving_energy", "energy", "omega_norm"];
        match self {
            Model::Veselova3d(_) | Model::LrSon(_) => v.push("constraint_residual"),
            Model::RollingBody(_) => v.extend(["k_dot_gamma", "x_norm", "gamma_norm_residual", "contact_residual"]),
            Model::Chaplygin3d(_) => v.extend([
                "tilde_energy",
                "k_dot_gamma",
                "x_norm",
                "gamma_norm_residual",
                "contact_residual",
            ]),
            Model::ChaplyginNd(_) => v.extend(["x_norm", "height_residual", "orthogonality_residual"]),
            Model::ChaplyginNdReduced(_) => v.extend([
                "x_norm",
                "gamma_norm_residual",
                "contact_residual",
                "xi_gamma_residual",
                "xi_orbit_residual",
            ]),
        }
        v
    }

    /// Evaluates a named observable.
    pub fn observable(&self, name: &str, y: &DVector<f64>) -> Result<f64> {
        self.check(y)?;
        let unknown = || Error::MissingObservable(format!("{name} (model {})", self.id()));
        match self {
            Model::Veselova3d(p) | Model::LrSon(p) => {
                let s = LrState::from_flat(p, y)?;
                match name {
                    "moving_energy" => Ok(lr_moving_energy(p, &s)),
                    "energy" => Ok(lr_energy(p, &s)),
                    "omega_norm" => Ok(killing_pair(&s.omega, &s.omega).sqrt()),
                    "constraint_residual" => Ok(lr_residuals(p, &s)
                        .iter()
                        .filter(|(k, _)| k.starts_with("constraint"))
                        .map(|(_, v)| v.abs())
                        .fold(0.0, f64::max)),
                    _ => Err(unknown()),
                }
            }
            Model::RollingBody(_) | Model::Chaplygin3d(_) => {
                let s = RollingBodyState::from_flat(y)?;
                let body = match self {
                    Model::RollingBody(p) => p.clone(),
                    Model::Chaplygin3d(p) => p.as_rolling_body(),
                    _ => unreachable!(),
                };
                match (name, self) {
                    ("moving_energy", Model::Chaplygin3d(p)) => chap3d_tilde_energy(p, &s),
                    ("moving_energy", _) => rolling_body_moving_energy(&body, &s),
                    ("tilde_energy", Model::Chaplygin3d(p)) => chap3d_tilde_energy(p, &s),
                    ("energy", _) => rolling_body_energy(&body, &s),
                    ("omega_norm", _) => Ok(omega_from_k_3d(&body, &s.gamma, &s.k)?.norm()),
                    ("k_dot_gamma", _) => Ok(chap3d_k_dot_gamma(&s)),
                    ("x_norm", _) => Ok(s.x.norm()),
                    ("gamma_norm_residual", _) => Ok(max_abs(&rolling_body_residuals(&body, &s), "gamma_norm")),
                    ("contact_residual", _) => Ok(max_abs(&rolling_body_residuals(&body, &s), "contact")),
                    _ => Err(unknown()),
                }
            }
            Model::ChaplyginNd(p) => {
                let s = ChapNdFullState::from_flat(p, y)?;
                match name {
                    "moving_energy" => chapnd_full_moving_energy(p, &s),
                    "energy" => chapnd_full_energy(p, &s),
                    "omega_norm" => Ok(omega_from_k_nd(p, &s.gamma(), &s.k)?.norm()),
                    "x_norm" => Ok(s.x.norm()),
                    "height_residual" => Ok(max_abs(&chapnd_full_residuals(p, &s), "contact_height")),
                    "orthogonality_residual" => Ok(s.g.orthogonality_residual()),
                    _ => Err(unknown()),
                }
            }
            Model::ChaplyginNdReduced(p) => {
                let s = ChapNdReducedState::from_flat(p, y)?;
                let res = || chapnd_reduced_residuals(p, &s);
                match name {
                    "moving_energy" => chapnd_reduced_moving_energy(p, &s),
                    "energy" => chapnd_reduced_energy(p, &s),
                    "omega_norm" => Ok(omega_from_k_nd(p, &s.gamma, &s.k)?.norm()),
                    "x_norm" => Ok(s.x.norm()),
                    "gamma_norm_residual" => Ok(max_abs(&res(), "gamma_norm")),
                    "contact_residual" => Ok(max_abs(&res(), "contact")),
                    "xi_gamma_residual" => Ok(max_abs(&res(), "xi_gamma")),
                    "xi_orbit_residual" => Ok(max_abs(&res(), "xi_orbit")),
                    _ => Err(unknown()),
                }
            }
        }
    }

    /// First-order flow of the trivialized model with the named observables
    /// (non-finite when an observable cannot be evaluated).
    pub fn flow_problem(self: &Arc<Self>, project: bool, observables: &[String]) -> Result<FlowProblem> {
        let known = self.observable_names();
        let model = Arc::clone(self);
        let mut problem = FlowProblem::new(self.state_dim(), move |_, y| model.vector_field(y));
        if project {
            let model = Arc::clone(self);
            problem = problem.with_projector(move |y| model.project(y));
        }
        for name in observables {
            if !known.contains(&name.as_str()) {
                return Err(Error::MissingObservable(format!("{name} (model {})", self.id())));
            }
            let model = Arc::clone(self);
            let key = name.clone();
            problem = problem.with_observable(name.clone(), move |y| model.observable(&key, y).unwrap_or(f64::NAN));
        }
        Ok(problem)
    }

    /// Generic-engine chart embedding (Veselova, rolling body, Chaplygin ball).
    pub fn chart_embedding(&self) -> Result<ChartSystem> {
        match self {
            Model::Veselova3d(p) => ChartSystem::veselova(p),
            Model::RollingBody(p) => ChartSystem::new(ChartModel::RollingBody(p.clone())),
            Model::Chaplygin3d(p) => ChartSystem::new(ChartModel::Chaplygin3d(p.clone())),
            _ => Err(Error::invalid("model", format!("no chart embedding for {}", self.id()))),
        }
    }
}

/// Reduced state of a full n-D Chaplygin state in flat layout.
pub fn chapnd_reduce_flat(params: &ChaplyginNdParams, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(ChapNdFullState::from_flat(params, y)?.reduce(params).to_flat())
}
