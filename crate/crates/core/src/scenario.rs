//! Scenario files: parsing, validation, model instantiation and runs.
//!
//! A scenario is a sectioned `key = value` text file. Lines starting with
//! `#` or `;` are comments. Arrays are comma lists; matrices are row-major
//! with `;` between rows, e.g. `inertia = 2, 0, 0; 0, 3, 0; 0, 0, 4`.
//!
//! ```text
//! [scenario]          name, seed
//! [model]             id and model parameters (see below)
//! [initial]           initial state (see below), complete, tolerance
//! [integrator]        method (rk4 | adaptive), h, rtol, atol, t_end,
//!                     record_every, project
//! [output]            csv, report, observables
//! [diagnostics]       drift, drift_tolerance, maxima, residuals,
//!                     conditions, fiber_samples, fiber_radius,
//!                     conditions_horizon
//! ```
//!
//! Model keys by id:
//!
//! * `veselova-3d`: `inertia` (3 values or 3x3), `c`.
//!   Initial: `gamma`, `omega` (3-vectors).
//! * `lr-son`: `n`, `j` (n values or n x n), `planes` (rows `i, j` giving
//!   `a = e_i ^ e_j`, one-based), `zeta` (coefficients along each `a`).
//!   Initial: `attitude` and `omega` in so(n) coordinates.
//! * `rolling-body`: `mass`, `gravity`, `inertia`, `kappa`,
//!   `shape` (sphere | ellipsoid), `radius` or `semi_axes`.
//!   Initial: `gamma`, `omega` or `k`, `x`.
//! * `chaplygin-3d`: `mass`, `radius`, `inertia`, `kappa`.
//!   Initial as for `rolling-body`.
//! * `chaplygin-nd`, `chaplygin-nd-reduced`: `n`, `mass`, `radius`, `j`,
//!   `eta`, `eta_plane` (one-based `i, j`).
//!   Initial: `attitude`, `omega` (so(n) coordinates), `x`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::diagnostics::{self, drift_report, fmt_f64, ClassifierOptions, DriftReport, Record};
use crate::error::{Error, Result};
use crate::integrator::{integrate_with, IntegrateOptions, Trajectory};
use crate::liegroup::{adjoint, exp_map, hat, so_dim, wedge, SoAlgebra, SoElement};
use crate::models::{
    eta_on_plane, ChapNdFullState, ChaplyginBallParams, ChaplyginNdParams, InertiaOperator, LrParams, LrState, Model,
    RollingBodyParams, RollingBodyState, Shape, MODEL_IDS,
};

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;
/// Tolerance on the manifold residuals of the final state.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Environment variable consulted for the seed when neither the command
/// line nor the scenario sets one.
pub const SEED_ENV: &str = "NONHOLO_SEED";

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Rk4,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorSettings {
    pub method: MethodKind,
    pub h: f64,
    pub rtol: f64,
    pub atol: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub project: bool,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            method: MethodKind::Rk4,
            h: 1e-3,
            rtol: 1e-10,
            atol: 1e-12,
            t_end: 10.0,
            record_every: 1,
            project: true,
        }
    }
}

impl IntegratorSettings {
    pub fn options(&self) -> IntegrateOptions {
        let base = match self.method {
            MethodKind::Rk4 => IntegrateOptions::rk4(self.h),
            MethodKind::Adaptive => IntegrateOptions::adaptive(self.rtol, self.atol),
        };
        base.record_every(self.record_every)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsSettings {
    pub drift: Vec<String>,
    pub drift_tolerance: f64,
    pub maxima: Vec<String>,
    pub residuals: bool,
    pub conditions: bool,
    pub fiber_samples: usize,
    pub fiber_radius: f64,
    pub conditions_horizon: f64,
}

impl Default for DiagnosticsSettings {
    fn default() -> Self {
        DiagnosticsSettings {
            drift: vec![],
            drift_tolerance: 1e-8,
            maxima: vec![],
            residuals: true,
            conditions: false,
            fiber_samples: diagnostics::DEFAULT_FIBER_SAMPLES,
            fiber_radius: diagnostics::DEFAULT_FIBER_RADIUS,
            conditions_horizon: 2.0,
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: Arc<Model>,
    pub initial: DVector<f64>,
    pub initial_tolerance: f64,
    pub integrator: IntegratorSettings,
    pub observables: Vec<String>,
    pub diagnostics: DiagnosticsSettings,
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Command-line overrides of scenario keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub h: Option<f64>,
    pub t_end: Option<f64>,
    pub method: Option<String>,
    pub project: Option<bool>,
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// Sectioned key = value reader

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone, Default)]
struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

fn cfg_err(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| cfg_err(line, s, "unterminated section header"))?
                .trim()
                .to_string();
            if sections.contains_key(&name) {
                return Err(cfg_err(line, &name, "duplicate section"));
            }
            sections.insert(
                name.clone(),
                Section {
                    line,
                    entries: BTreeMap::new(),
                },
            );
            current = Some(name);
            continue;
        }
        let (key, value) = s.split_once('=').ok_or_else(|| cfg_err(line, s, "expected `key = value`"))?;
        let key = key.trim().to_string();
        let section = current
            .as_ref()
            .and_then(|c| sections.get_mut(c))
            .ok_or_else(|| cfg_err(line, &key, "key outside of any section"))?;
        if section.entries.contains_key(&key) {
            return Err(cfg_err(line, &key, "duplicate key"));
        }
        section.entries.insert(
            key,
            Entry {
                value: value.trim().to_string(),
                line,
            },
        );
    }
    Ok(sections)
}

/// Typed access to one section, rejecting keys outside an allowed set.
struct Reader<'a> {
    name: &'a str,
    section: Option<&'a Section>,
}

impl<'a> Reader<'a> {
    fn new(sections: &'a BTreeMap<String, Section>, name: &'a str) -> Self {
        Reader {
            name,
            section: sections.get(name),
        }
    }

    fn allow(&self, keys: &[&str]) -> Result<()> {
        if let Some(s) = self.section {
            for (k, e) in &s.entries {
                if !keys.contains(&k.as_str()) {
                    return Err(cfg_err(e.line, k, format!("unknown key in [{}]", self.name)));
                }
            }
        }
        Ok(())
    }

    fn entry(&self, key: &str) -> Option<&'a Entry> {
        self.section.and_then(|s| s.entries.get(key))
    }

    fn line(&self, key: &str) -> usize {
        self.entry(key).map(|e| e.line).or(self.section.map(|s| s.line)).unwrap_or(0)
    }

    fn has(&self, key: &str) -> bool {
        self.entry(key).is_some()
    }

    fn str(&self, key: &str) -> Option<&'a str> {
        self.entry(key).map(|e| e.value.as_str())
    }

    fn require_str(&self, key: &str) -> Result<&'a str> {
        self.str(key)
            .ok_or_else(|| cfg_err(self.line(key), key, format!("missing required key in [{}]", self.name)))
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => parse_f64(&e.value)
                .map(Some)
                .ok_or_else(|| cfg_err(e.line, key, "expected a number")),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn f64_req(&self, key: &str) -> Result<f64> {
        self.f64_opt(key)?
            .ok_or_else(|| cfg_err(self.line(key), key, format!("missing required key in [{}]", self.name)))
    }

    fn positive(&self, key: &str, default: Option<f64>) -> Result<f64> {
        let v = match default {
            Some(d) => self.f64_or(key, d)?,
            None => self.f64_req(key)?,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(cfg_err(self.line(key), key, "must be a positive number"));
        }
        Ok(v)
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.entry(key) {
            None => Ok(default),
            Some(e) => e
                .value
                .parse()
                .map_err(|_| cfg_err(e.line, key, "expected a non-negative integer")),
        }
    }

    fn u64_opt(&self, key: &str) -> Result<Option<u64>> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| cfg_err(e.line, key, "expected a non-negative integer")),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.entry(key) {
            None => Ok(default),
            Some(e) => parse_bool(&e.value).ok_or_else(|| cfg_err(e.line, key, "expected true or false")),
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => parse_list(&e.value)
                .map(Some)
                .ok_or_else(|| cfg_err(e.line, key, "expected a comma-separated list of numbers")),
        }
    }

    fn vector(&self, key: &str, len: usize) -> Result<Option<DVector<f64>>> {
        match self.list(key)? {
            None => Ok(None),
            Some(v) if v.len() == len => Ok(Some(DVector::from_vec(v))),
            Some(v) => Err(cfg_err(
                self.line(key),
                key,
                format!("expected {len} values, got {}", v.len()),
            )),
        }
    }

    fn vec3(&self, key: &str) -> Result<Option<Vector3<f64>>> {
        Ok(self.vector(key, 3)?.map(|v| Vector3::new(v[0], v[1], v[2])))
    }

    fn vec3_req(&self, key: &str) -> Result<Vector3<f64>> {
        self.vec3(key)?
            .ok_or_else(|| cfg_err(self.line(key), key, format!("missing required key in [{}]", self.name)))
    }

    fn matrix(&self, key: &str) -> Result<Option<DMatrix<f64>>> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => parse_matrix(&e.value)
                .map(Some)
                .ok_or_else(|| cfg_err(e.line, key, "expected a matrix with `;` between rows")),
        }
    }

    /// A square `n x n` matrix given either as `n` diagonal entries or in full.
    fn square(&self, key: &str, n: usize) -> Result<Option<DMatrix<f64>>> {
        let line = self.line(key);
        match self.matrix(key)? {
            None => Ok(None),
            Some(m) if m.nrows() == 1 && m.ncols() == n => Ok(Some(DMatrix::from_diagonal(&m.row(0).transpose()))),
            Some(m) if m.nrows() == n && m.ncols() == n => Ok(Some(m)),
            Some(_) => Err(cfg_err(
                line,
                key,
                format!("expected {n} diagonal values or an {n}x{n} matrix"),
            )),
        }
    }

    fn names(&self, key: &str) -> Vec<String> {
        self.str(key)
            .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(parse_f64).collect()
}

fn parse_matrix(s: &str) -> Option<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = s.split(';').map(parse_list).collect::<Option<_>>()?;
    let ncols = rows.first()?.len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

fn matrix3(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(i, j)])
}

// ---------------------------------------------------------------------------
// Model and initial-state assembly

const MODEL_KEYS: &[&str] = &[
    "id",
    "mass",
    "gravity",
    "inertia",
    "kappa",
    "shape",
    "radius",
    "semi_axes",
    "c",
    "n",
    "j",
    "planes",
    "zeta",
    "eta",
    "eta_plane",
];

fn model_allowed(id: &str) -> &'static [&'static str] {
    match id {
        "veselova-3d" => &["id", "inertia", "c"],
        "lr-son" => &["id", "n", "j", "planes", "zeta"],
        "rolling-body" => &["id", "mass", "gravity", "inertia", "kappa", "shape", "radius", "semi_axes"],
        "chaplygin-3d" => &["id", "mass", "radius", "inertia", "kappa"],
        "chaplygin-nd" | "chaplygin-nd-reduced" => &["id", "n", "mass", "radius", "j", "eta", "eta_plane"],
        _ => MODEL_KEYS,
    }
}

fn wrap_param(r: &Reader, key: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => {
            let k = if r.has(&name) { name.clone() } else { key.to_string() };
            cfg_err(r.line(&k), &k, reason)
        }
        other => cfg_err(r.line(key), key, other.to_string()),
    }
}

fn build_model(r: &Reader) -> Result<Model> {
    let id = r.require_str("id")?;
    if !MODEL_IDS.iter().any(|(m, _)| *m == id) {
        return Err(cfg_err(r.line("id"), "id", format!("unknown model `{id}`")));
    }
    r.allow(model_allowed(id))?;
    let tensor = |key: &str| -> Result<Matrix3<f64>> {
        r.square(key, 3)?
            .map(|m| matrix3(&m))
            .ok_or_else(|| cfg_err(r.line(key), key, "missing required key in [model]"))
    };
    let dim_n = |lo: usize| -> Result<usize> {
        let n = r.usize_or("n", 0)?;
        if n < lo {
            return Err(cfg_err(r.line("n"), "n", format!("must be at least {lo}")));
        }
        Ok(n)
    };
    let body_inertia = |n: usize| -> Result<InertiaOperator> {
        let j = r
            .square("j", n)?
            .ok_or_else(|| cfg_err(r.line("j"), "j", "missing required key in [model]"))?;
        InertiaOperator::from_body_matrix(&j).map_err(|e| wrap_param(r, "j", e))
    };
    let model = match id {
        "veselova-3d" => {
            let t = tensor("inertia")?;
            Model::Veselova3d(LrParams::veselova(&t, r.f64_or("c", 0.0)?).map_err(|e| wrap_param(r, "inertia", e))?)
        }
        "lr-son" => {
            let n = dim_n(3)?;
            let inertia = body_inertia(n)?;
            let planes = r
                .matrix("planes")?
                .ok_or_else(|| cfg_err(r.line("planes"), "planes", "missing required key in [model]"))?;
            if planes.ncols() != 2 {
                return Err(cfg_err(r.line("planes"), "planes", "each row must be a pair `i, j`"));
            }
            let mut a = Vec::new();
            for row in planes.row_iter() {
                let (i, j) = (row[0], row[1]);
                let ok = |v: f64| v.fract() == 0.0 && v >= 1.0 && v <= n as f64;
                if !ok(i) || !ok(j) || i == j {
                    return Err(cfg_err(
                        r.line("planes"),
                        "planes",
                        "plane indices must be distinct integers in 1..n",
                    ));
                }
                let e = |k: f64| DVector::from_fn(n, |m, _| if m + 1 == k as usize { 1.0 } else { 0.0 });
                a.push(wedge(&e(i), &e(j))?);
            }
            let coeffs = r.vector("zeta", a.len())?.unwrap_or_else(|| DVector::zeros(a.len()));
            let zeta = a
                .iter()
                .zip(coeffs.iter())
                .fold(SoAlgebra::zeros(n), |acc, (aj, c)| &acc + &(aj * *c));
            Model::LrSon(LrParams::new(inertia, a, zeta).map_err(|e| wrap_param(r, "planes", e))?)
        }
        "rolling-body" => {
            let shape = match r.str("shape").unwrap_or("sphere") {
                "sphere" => Shape::Sphere {
                    radius: r.positive("radius", None)?,
                },
                "ellipsoid" => {
                    let a = r.vec3_req("semi_axes")?;
                    Shape::Ellipsoid { semi_axes: a }
                }
                other => return Err(cfg_err(r.line("shape"), "shape", format!("unknown shape `{other}`"))),
            };
            let p = RollingBodyParams::new(
                r.f64_req("mass")?,
                r.f64_or("gravity", 9.81)?,
                tensor("inertia")?,
                r.f64_or("kappa", 0.0)?,
                shape,
            )
            .map_err(|e| wrap_param(r, "mass", e))?;
            Model::RollingBody(p)
        }
        "chaplygin-3d" => {
            let p = ChaplyginBallParams::new(
                r.f64_req("mass")?,
                r.f64_req("radius")?,
                tensor("inertia")?,
                r.f64_or("kappa", 0.0)?,
            )
            .map_err(|e| wrap_param(r, "mass", e))?;
            Model::Chaplygin3d(p)
        }
        _ => {
            let n = dim_n(3)?;
            let inertia = body_inertia(n)?;
            let value = r.f64_or("eta", 0.0)?;
            let plane = r.list("eta_plane")?.unwrap_or_else(|| vec![1.0, 2.0]);
            if plane.len() != 2 || plane.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                return Err(cfg_err(
                    r.line("eta_plane"),
                    "eta_plane",
                    "expected a pair of one-based indices",
                ));
            }
            let eta = eta_on_plane(n, value, plane[0] as usize, plane[1] as usize).map_err(|e| wrap_param(r, "eta_plane", e))?;
            let p = ChaplyginNdParams::new(r.f64_req("mass")?, r.f64_req("radius")?, inertia, eta)
                .map_err(|e| wrap_param(r, "mass", e))?;
            if id == "chaplygin-nd" {
                Model::ChaplyginNd(p)
            } else {
                Model::ChaplyginNdReduced(p)
            }
        }
    };
    Ok(model)
}

fn so_from(r: &Reader, key: &str, n: usize) -> Result<SoAlgebra> {
    match r.vector(key, so_dim(n))? {
        Some(v) => SoAlgebra::from_coords(n, v.as_slice()),
        None => Ok(SoAlgebra::zeros(n)),
    }
}

fn attitude(r: &Reader, n: usize) -> Result<SoElement> {
    exp_map(&so_from(r, "attitude", n)?).map_err(|e| cfg_err(r.line("attitude"), "attitude", e.to_string()))
}

fn build_initial(model: &Model, r: &Reader) -> Result<DVector<f64>> {
    let complete = r.bool_or("complete", true)?;
    let common = ["complete", "tolerance"];
    let allow = |keys: &[&str]| r.allow(&[keys, &common[..]].concat());
    match model {
        Model::Veselova3d(p) => {
            allow(&["gamma", "omega"])?;
            let gamma = r.vec3_req("gamma")?;
            if !(gamma.norm() > 0.0) {
                return Err(cfg_err(r.line("gamma"), "gamma", "must be nonzero"));
            }
            let s = LrState {
                gammas: vec![hat(&gamma.normalize())],
                omega: hat(&r.vec3_req("omega")?),
            };
            finish_lr(p, s, complete)
        }
        Model::LrSon(p) => {
            allow(&["attitude", "omega"])?;
            let n = p.n();
            let gi = attitude(r, n)?.inverse();
            let s = LrState {
                gammas: p.covectors().iter().map(|a| adjoint(&gi, a)).collect(),
                omega: so_from(r, "omega", n)?,
            };
            finish_lr(p, s, complete)
        }
        Model::RollingBody(_) | Model::Chaplygin3d(_) => {
            allow(&["gamma", "omega", "k", "x"])?;
            let body = match model {
                Model::RollingBody(p) => p.clone(),
                Model::Chaplygin3d(p) => p.as_rolling_body(),
                _ => unreachable!(),
            };
            let gamma = r.vec3_req("gamma")?;
            if !(gamma.norm() > 0.0) {
                return Err(cfg_err(r.line("gamma"), "gamma", "must be nonzero"));
            }
            let x = r.vec3("x")?.unwrap_or_else(Vector3::zeros);
            let s = match (r.vec3("omega")?, r.vec3("k")?) {
                (Some(omega), None) if complete => RollingBodyState::from_omega(&body, gamma, &omega, x),
                (Some(omega), None) => RollingBodyState {
                    k: crate::models::k_from_omega_3d(&body, &gamma, &omega),
                    x,
                    gamma,
                },
                (None, Some(k)) if complete => {
                    let g = gamma.normalize();
                    let rho = body.shape_f(&g);
                    RollingBodyState {
                        k,
                        x: x - g * (x - rho).dot(&g),
                        gamma: g,
                    }
                }
                (None, Some(k)) => RollingBodyState { k, x, gamma },
                _ => return Err(cfg_err(r.line("omega"), "omega", "give exactly one of `omega` and `k`")),
            };
            Ok(s.to_flat())
        }
        Model::ChaplyginNd(p) | Model::ChaplyginNdReduced(p) => {
            allow(&["attitude", "omega", "x"])?;
            let n = p.n();
            let x = r.vector("x", n)?.unwrap_or_else(|| DVector::zeros(n));
            let full = ChapNdFullState::from_omega(p, x, attitude(r, n)?, &so_from(r, "omega", n)?);
            Ok(match model {
                Model::ChaplyginNd(_) => full.to_flat(),
                _ => full.reduce(p).to_flat(),
            })
        }
    }
}

fn finish_lr(p: &LrParams, s: LrState, complete: bool) -> Result<DVector<f64>> {
    if complete {
        Ok(crate::models::lr_project(p, &s)?.to_flat())
    } else {
        Ok(s.to_flat())
    }
}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let sections = parse_sections(text)?;
    for (name, s) in &sections {
        if !["scenario", "model", "initial", "integrator", "output", "diagnostics"].contains(&name.as_str()) {
            return Err(cfg_err(s.line, name, "unknown section"));
        }
    }
    let sc = Reader::new(&sections, "scenario");
    sc.allow(&["name", "seed"])?;
    let mr = Reader::new(&sections, "model");
    if mr.section.is_none() {
        return Err(cfg_err(0, "model", "missing [model] section"));
    }
    let model = Arc::new(build_model(&mr)?);
    let ir = Reader::new(&sections, "initial");
    if ir.section.is_none() {
        return Err(cfg_err(0, "initial", "missing [initial] section"));
    }
    let initial = build_initial(&model, &ir).map_err(|e| match e {
        e @ Error::Config { .. } => e,
        other => cfg_err(ir.line("initial"), "initial", other.to_string()),
    })?;
    let initial_tolerance = ir.positive("tolerance", Some(1e-10))?;

    let it = Reader::new(&sections, "integrator");
    it.allow(&["method", "h", "rtol", "atol", "t_end", "record_every", "project"])?;
    let d = IntegratorSettings::default();
    let method = match it.str("method").unwrap_or("rk4") {
        "rk4" => MethodKind::Rk4,
        "adaptive" => MethodKind::Adaptive,
        other => return Err(cfg_err(it.line("method"), "method", format!("unknown method `{other}`"))),
    };
    let integrator = IntegratorSettings {
        method,
        h: it.positive("h", Some(d.h))?,
        rtol: it.positive("rtol", Some(d.rtol))?,
        atol: it.positive("atol", Some(d.atol))?,
        t_end: it.positive("t_end", Some(d.t_end))?,
        record_every: it.usize_or("record_every", d.record_every)?.max(1),
        project: it.bool_or("project", d.project)?,
    };

    let out = Reader::new(&sections, "output");
    out.allow(&["csv", "report", "observables"])?;
    let mut observables = out.names("observables");
    if observables.is_empty() {
        observables = vec!["moving_energy".into(), "energy".into()];
    }
    let known = model.observable_names();
    for o in &observables {
        if !known.contains(&o.as_str()) {
            return Err(cfg_err(
                out.line("observables"),
                "observables",
                format!("unknown observable `{o}` for {}", model.id()),
            ));
        }
    }

    let dg = Reader::new(&sections, "diagnostics");
    dg.allow(&[
        "drift",
        "drift_tolerance",
        "maxima",
        "residuals",
        "conditions",
        "fiber_samples",
        "fiber_radius",
        "conditions_horizon",
    ])?;
    let dd = DiagnosticsSettings::default();
    let diagnostics = DiagnosticsSettings {
        drift: dg.names("drift"),
        drift_tolerance: dg.positive("drift_tolerance", Some(dd.drift_tolerance))?,
        maxima: dg.names("maxima"),
        residuals: dg.bool_or("residuals", dd.residuals)?,
        conditions: dg.bool_or("conditions", dd.conditions)?,
        fiber_samples: dg.usize_or("fiber_samples", dd.fiber_samples)?,
        fiber_radius: dg.positive("fiber_radius", Some(dd.fiber_radius))?,
        conditions_horizon: dg.positive("conditions_horizon", Some(dd.conditions_horizon))?,
    };
    for (key, list) in [("drift", &diagnostics.drift), ("maxima", &diagnostics.maxima)] {
        for o in list {
            if !observables.contains(o) {
                return Err(cfg_err(
                    dg.line(key),
                    key,
                    format!("`{o}` is not listed in [output] observables"),
                ));
            }
        }
    }
    if diagnostics.conditions && model.chart_embedding().is_err() {
        return Err(cfg_err(
            dg.line("conditions"),
            "conditions",
            format!("{} has no chart embedding", model.id()),
        ));
    }

    let scenario = Scenario {
        name: sc.str("name").unwrap_or(model.id()).to_string(),
        model,
        initial,
        initial_tolerance,
        integrator,
        observables,
        diagnostics,
        csv: out.str("csv").map(PathBuf::from),
        report: out.str("report").map(PathBuf::from),
        seed: sc.u64_opt("seed")?,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Reads and parses a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

impl Scenario {
    /// Checks the initial state against the model manifold unless the run
    /// projects onto it.
    pub fn validate(&self) -> Result<()> {
        if !self.integrator.project {
            for (name, v) in self.model.invariant_residuals(&self.initial)? {
                if name == "xi_orbit" {
                    continue;
                }
                if !(v.abs() <= self.initial_tolerance) {
                    return Err(cfg_err(
                        0,
                        "initial",
                        format!(
                            "residual `{name}` = {v:e} exceeds tolerance {:e} and projection is disabled",
                            self.initial_tolerance
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Applies command-line overrides and revalidates.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(h) = o.h {
            if !(h > 0.0) {
                return Err(cfg_err(0, "--h", "must be positive"));
            }
            self.integrator.h = h;
        }
        if let Some(t) = o.t_end {
            if !(t > 0.0) {
                return Err(cfg_err(0, "--t-end", "must be positive"));
            }
            self.integrator.t_end = t;
        }
        if let Some(m) = &o.method {
            self.integrator.method = match m.as_str() {
                "rk4" => MethodKind::Rk4,
                "adaptive" => MethodKind::Adaptive,
                other => return Err(cfg_err(0, "--method", format!("unknown method `{other}`"))),
            };
        }
        if let Some(p) = o.project {
            self.integrator.project = p;
        }
        if let Some(c) = &o.csv {
            self.csv = Some(c.clone());
        }
        if let Some(r) = &o.report {
            self.report = Some(r.clone());
        }
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        self.validate()
    }

    /// Seed: scenario value, else `NONHOLO_SEED`, else zero.
    pub fn effective_seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| cfg_err(0, SEED_ENV, "expected a non-negative integer")),
            Err(_) => Ok(0),
        }
    }

    /// CSV column names: `t`, state labels, observables.
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend(self.model.state_labels());
        h.extend(self.observables.iter().cloned());
        h
    }
}

// ---------------------------------------------------------------------------
// Running

/// Outcome of a run: report records and the terminal error, if any.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<Record>,
    pub error: Option<Error>,
    pub trajectory: Trajectory,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map(exit_code).unwrap_or(EXIT_OK)
    }

    pub fn report_text(&self) -> String {
        self.records.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("\n")
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    csv::Writer::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Integrates a scenario, streaming rows to the CSV writer if given, and
/// assembles the report records.
pub fn execute(sc: &Scenario, csv_out: Option<&mut csv::Writer<fs::File>>) -> Result<RunSummary> {
    let seed = sc.effective_seed()?;
    let problem = sc.model.flow_problem(sc.integrator.project, &sc.observables)?;
    let mut traj = Trajectory {
        times: vec![],
        states: vec![],
        observable_names: sc.observables.clone(),
        observables: vec![vec![]; sc.observables.len()],
    };
    let mut writer = csv_out;
    if let Some(w) = writer.as_deref_mut() {
        w.write_record(sc.csv_header()).map_err(csv_io)?;
    }
    let result = integrate_with(
        &problem,
        &sc.initial,
        0.0,
        sc.integrator.t_end,
        &sc.integrator.options(),
        &mut |t, y, obs| {
            if let Some(w) = writer.as_deref_mut() {
                let row = std::iter::once(t)
                    .chain(y.iter().copied())
                    .chain(obs.iter().copied())
                    .map(fmt_f64);
                w.write_record(row).map_err(csv_io)?;
            }
            traj.times.push(t);
            traj.states.push(y.clone());
            for (series, v) in traj.observables.iter_mut().zip(obs) {
                series.push(*v);
            }
            Ok(())
        },
    );
    if let Some(w) = writer {
        w.flush()?;
    }

    let i = &sc.integrator;
    let mut records = vec![Record::new("scenario")
        .field("name", &sc.name)
        .field("model", sc.model.id())
        .field("seed", seed)
        .field("method", if i.method == MethodKind::Rk4 { "rk4" } else { "adaptive" })
        .num("h", i.h)
        .num("rtol", i.rtol)
        .num("atol", i.atol)
        .num("t_end", i.t_end)
        .field("record_every", i.record_every)
        .field("project", i.project)
        .field("records", traj.times.len())
        .field("status", if result.is_ok() { "ok" } else { "failed" })
        .field("tolerance", "settings only")];
    if let Err(e) = &result {
        records.push(
            Record::new("failure")
                .field("class", if e.is_numerical() { "numerical" } else { "config" })
                .field("message", e)
                .num("last_time", traj.times.last().copied().unwrap_or(0.0))
                .field("tolerance", "not applicable")
                .field("seed", seed),
        );
    }
    if !traj.times.is_empty() {
        for name in &sc.diagnostics.drift {
            let d: DriftReport = drift_report(&traj, name)?;
            records.push(d.to_record(sc.diagnostics.drift_tolerance, Some(seed)));
        }
        for name in &sc.diagnostics.maxima {
            let series = traj.observable(name)?;
            let (k, v) = series.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |(bk, bv), (k, v)| if *v > bv { (k, *v) } else { (bk, bv) },
            );
            let half = series.len() / 2;
            let first_half = series[..half.max(1)].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            records.push(
                Record::new("maximum")
                    .field("observable", name)
                    .num("max", v)
                    .num("at_time", traj.times[k])
                    .num("max_first_half", first_half)
                    .field("running_max_by_tenth", running_maxima(series))
                    .num("final", *series.last().expect("nonempty"))
                    .field("tolerance", "none (qualitative)")
                    .field("seed", seed),
            );
        }
        if sc.diagnostics.residuals {
            let last = traj.states.last().expect("nonempty");
            let mut r = Record::new("residuals").field("at", "final");
            let mut worst: f64 = 0.0;
            for (name, v) in sc.model.invariant_residuals(last)? {
                worst = worst.max(v.abs());
                r = r.num(&name, v);
            }
            let tol = RESIDUAL_TOL.max(sc.initial_tolerance);
            records.push(r.num("tolerance", tol).field("pass", worst <= tol).field("seed", seed));
        }
    }
    if sc.diagnostics.conditions && result.is_ok() {
        records.push(conditions_record(sc, seed)?);
    }
    Ok(RunSummary {
        records,
        error: result.err(),
        trajectory: traj,
    })
}

/// Running maximum of a series sampled at each tenth of its length.
fn running_maxima(series: &[f64]) -> String {
    let n = series.len();
    (1..=10)
        .map(|k| {
            let end = (k * n).div_ceil(10).max(1);
            fmt_f64(series[..end].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn conditions_record(sc: &Scenario, seed: u64) -> Result<Record> {
    let chart = sc.model.chart_embedding()?;
    let start = chart.from_model_state(&sc.initial, 0.0)?;
    let mut rng = diagnostics::rng(seed, 17);
    let mut qs = vec![start.q.clone()];
    for _ in 0..4 {
        let q = &start.q + diagnostics::sample_ball(&mut rng, start.q.len(), 0.2);
        if chart.check_chart(&q).is_ok() {
            qs.push(q);
        }
    }
    let opts = ClassifierOptions {
        fiber_samples: sc.diagnostics.fiber_samples,
        radius: sc.diagnostics.fiber_radius,
        probe_horizon: sc.diagnostics.conditions_horizon,
        probe_h: sc.integrator.h,
        probe_state: Some(start),
        seed,
        ..Default::default()
    };
    let report = diagnostics::thm1_classifier(chart.system(), &chart.generator(), &qs, &opts)?;
    Ok(report.to_record().field("generator", "natural"))
}

fn default_path(sc: &Scenario, stem: Option<&str>, ext: &str) -> PathBuf {
    let base = stem.map(str::to_string).unwrap_or_else(|| sc.name.clone());
    PathBuf::from(format!("{base}.{ext}"))
}

/// Runs a scenario end to end, writing the CSV and the report. Returns the
/// summary; failures during integration are reported in it and also
/// reflected in [`RunSummary::exit_code`].
pub fn run(sc: &Scenario, stem: Option<&str>) -> Result<RunSummary> {
    let csv_path = sc.csv.clone().unwrap_or_else(|| default_path(sc, stem, "csv"));
    let report_path = sc.report.clone().unwrap_or_else(|| default_path(sc, stem, "report"));
    let mut writer = csv_writer(&csv_path)?;
    let summary = execute(sc, Some(&mut writer))?;
    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(&report_path).map_err(|e| Error::Io(format!("{}: {e}", report_path.display())))?;
    f.write_all(summary.report_text().as_bytes())?;
    Ok(summary)
}

/// Runs a scenario file with overrides and returns the process exit code
/// together with a one-line message.
pub fn run_file(path: &Path, overrides: &Overrides) -> (i32, String) {
    let stem = path.file_stem().and_then(|s| s.to_str()).map(str::to_string);
    let outcome = load_scenario(path).and_then(|mut sc| {
        sc.apply(overrides)?;
        run(&sc, stem.as_deref())
    });
    match outcome {
        Ok(s) => match &s.error {
            None => (EXIT_OK, format!("{}: ok ({} records)", path.display(), s.trajectory.len())),
            Some(e) => (exit_code(e), format!("{}: {e}", path.display())),
        },
        Err(e) => (exit_code(&e), format!("{}: {e}", path.display())),
    }
}

/// Runs every `*.cfg` file of a directory on a pool of worker threads.
/// The exit code is the most severe of the individual codes.
pub fn run_batch(dir: &Path, overrides: &Overrides) -> (i32, Vec<String>) {
    if overrides.csv.is_some() || overrides.report.is_some() {
        return (EXIT_CONFIG, vec!["--csv and --report cannot be used with batch".into()]);
    }
    let mut files: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
            .collect(),
        Err(e) => return (EXIT_CONFIG, vec![format!("{}: {e}", dir.display())]),
    };
    files.sort();
    let results: Mutex<Vec<(usize, i32, String)>> = Mutex::new(Vec::new());
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(files.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(path) = files.get(k) else { break };
                let (code, msg) = run_file(path, overrides);
                results.lock().expect("results lock").push((k, code, msg));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|r| r.0);
    let code = results.iter().map(|r| r.1).fold(EXIT_OK, |acc, c| match (acc, c) {
        (EXIT_NUMERICAL, _) | (_, EXIT_NUMERICAL) => EXIT_NUMERICAL,
        (EXIT_CONFIG, _) | (_, EXIT_CONFIG) => EXIT_CONFIG,
        _ => EXIT_OK,
    });
    (code, results.into_iter().map(|r| r.2).collect())
}

/// Parses and validates a scenario file without running it.
pub fn check_file(path: &Path, overrides: &Overrides) -> (i32, String) {
    match load_scenario(path).and_then(|mut sc| sc.apply(overrides).map(|_| sc)) {
        Ok(sc) => (
            EXIT_OK,
            format!(
                "{}: valid ({}, {} state components, observables: {})",
                path.display(),
                sc.model.id(),
                sc.model.state_dim(),
                sc.observables.join(", ")
            ),
        ),
        Err(e) => (exit_code(&e), format!("{}: {e}", path.display())),
    }
}

/// Registry listing, one `id  description` line per model.
pub fn list_models() -> Vec<String> {
    MODEL_IDS.iter().map(|(id, d)| format!("{id:<22}{d}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[model]
id = chaplygin-3d
mass = 1
radius = 1
inertia = 1, 1.2, 1.4
kappa = 0.5

[initial]
gamma = 0, 0.6, 0.8
omega = 1, 0, 0.5
";

    #[test]
    fn minimal_scenario_uses_defaults() {
        let sc = parse_scenario(MINIMAL).unwrap();
        assert_eq!(sc.integrator.method, MethodKind::Rk4);
        assert_eq!(sc.integrator.h, 1e-3);
        assert_eq!(sc.integrator.t_end, 10.0);
        assert_eq!(sc.observables, vec!["moving_energy", "energy"]);
        assert_eq!(sc.csv_header().len(), 1 + 9 + 2);
    }

    #[test]
    fn negative_mass_names_the_key() {
        let text = MINIMAL.replace("mass = 1", "mass = -1");
        match parse_scenario(&text) {
            Err(Error::Config { key, line, .. }) => {
                assert_eq!(key, "mass");
                assert_eq!(line, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        let text = MINIMAL.replace("kappa = 0.5", "kappa = 0.5\nspin = 2");
        assert!(matches!(parse_scenario(&text), Err(Error::Config { ref key, .. }) if key == "spin"));
        let text = format!("{MINIMAL}\n[extra]\na = 1\n");
        assert!(matches!(parse_scenario(&text), Err(Error::Config { ref key, .. }) if key == "extra"));
    }

    #[test]
    fn eta_plane_assembly() {
        let text = "
[model]
id = chaplygin-nd-reduced
n = 4
mass = 1
radius = 0.5
j = 1, 2, 3, 4
eta = 0.3
eta_plane = 1, 2

[initial]
omega = 0.1, 0.2, 0.3, 0.4, 0.5, 0.6
";
        let sc = parse_scenario(text).unwrap();
        let Model::ChaplyginNdReduced(p) = sc.model.as_ref() else {
            panic!()
        };
        let expected = eta_on_plane(4, 0.3, 1, 2).unwrap();
        assert_eq!(p.eta(), &expected);
        assert_eq!(p.eta().matrix()[(0, 1)], 0.3);
    }

    #[test]
    fn matrix_syntax() {
        let m = parse_matrix("1, 2; 3, 4").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert!(parse_matrix("1, 2; 3").is_none());
    }

    #[test]
    fn off_manifold_start_without_projection_is_a_config_error() {
        let text = MINIMAL.replace(
            "[initial]",
            "[integrator]\nproject = false\n\n[initial]\ncomplete = false\nx = 0, 0, 3",
        );
        assert!(matches!(parse_scenario(&text), Err(Error::Config { ref key, .. }) if key == "initial"));
    }

    #[test]
    fn execute_records_drift() {
        let text = format!("{MINIMAL}\n[integrator]\nt_end = 0.5\nh = 0.01\n\n[diagnostics]\ndrift = moving_energy\n");
        let sc = parse_scenario(&text).unwrap();
        let s = execute(&sc, None).unwrap();
        assert_eq!(s.exit_code(), 0);
        let drift = s.records.iter().find(|r| r.kind == "drift").unwrap();
        assert_eq!(drift.get("observable"), Some("moving_energy"));
        assert_eq!(drift.get("pass"), Some("true"));
    }
}
