//! Numerical verification of conservation statements: drift statistics,
//! sampled reaction-annihilator membership, the three-condition classifier,
//! horizontality, infinitesimal invariance, generator equivalence and
//! momentum conservation.
//!
//! Every randomized test draws from a ChaCha stream derived from an
//! explicit seed, so results are reproducible.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{MechanicalSystem, State, VectorFieldOnQ};
use crate::error::{Error, Result};
use crate::integrator::{integrate, IntegrateOptions, Trajectory};

/// Default number of fiber samples per configuration.
pub const DEFAULT_FIBER_SAMPLES: usize = 64;
/// Default sampling radius in kernel coordinates.
pub const DEFAULT_FIBER_RADIUS: f64 = 10.0;
/// Tolerance for structural zeros (horizontality, range membership).
pub const STRUCTURAL_TOL: f64 = 1e-10;
/// Pass threshold for conditions (i) and (ii).
pub const CONDITION_TOL: f64 = 1e-9;
/// Pass threshold for moving-energy drift at `h = 1e-3`.
pub const DRIFT_TOL: f64 = 1e-7;

/// Seeded random stream; `stream` separates independent tests sharing a seed.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Uniform sample from the ball of the given radius in `R^d`.
pub fn sample_ball(rng: &mut impl Rng, d: usize, radius: f64) -> DVector<f64> {
    if d == 0 {
        return DVector::zeros(0);
    }
    loop {
        let u = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..=1.0));
        if u.norm_squared() <= 1.0 {
            return u * radius;
        }
    }
}

/// A state on the constraint fiber over `q`: `qdot = Z0(q) + D(q) u`.
pub fn sample_fiber_state(sys: &MechanicalSystem, q: &DVector<f64>, rng: &mut impl Rng, radius: f64) -> Result<State> {
    let geo = sys.constraint_geometry(q, &DVector::zeros(sys.n()))?;
    let u = sample_ball(rng, sys.n() - sys.k(), radius);
    Ok(State::new(q.clone(), &geo.z0 + &geo.d_basis * u))
}

/// Drift statistics of one recorded observable.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub observable: String,
    pub initial: f64,
    pub max_abs_drift: f64,
    /// `max_abs_drift / max(|initial|, 1)`.
    pub relative_drift: f64,
    /// Least-squares slope of `f(t) - f(0)` against `t`.
    pub slope: f64,
    pub samples: usize,
}

impl DriftReport {
    pub fn from_series(observable: impl Into<String>, times: &[f64], values: &[f64]) -> Result<Self> {
        let observable = observable.into();
        if values.is_empty() || times.len() != values.len() {
            return Err(Error::MissingObservable(observable));
        }
        let f0 = values[0];
        let mut max_abs_drift: f64 = 0.0;
        for v in values {
            let d = (v - f0).abs();
            max_abs_drift = if d.is_nan() { f64::NAN } else { max_abs_drift.max(d) };
        }
        let n = values.len() as f64;
        let tm = times.iter().sum::<f64>() / n;
        let dm = values.iter().map(|v| v - f0).sum::<f64>() / n;
        let (mut num, mut den) = (0.0, 0.0);
        for (t, v) in times.iter().zip(values) {
            num += (t - tm) * (v - f0 - dm);
            den += (t - tm) * (t - tm);
        }
        Ok(DriftReport {
            observable,
            initial: f0,
            max_abs_drift,
            relative_drift: max_abs_drift / f0.abs().max(1.0),
            slope: if den > 0.0 { num / den } else { 0.0 },
            samples: values.len(),
        })
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.relative_drift < tol
    }

    pub fn to_record(&self, tolerance: f64, seed: Option<u64>) -> Record {
        let mut r = Record::new("drift")
            .field("observable", &self.observable)
            .num("initial", self.initial)
            .num("max_abs_drift", self.max_abs_drift)
            .num("relative_drift", self.relative_drift)
            .num("slope", self.slope)
            .field("samples", self.samples)
            .num("tolerance", tolerance)
            .field("pass", self.passes(tolerance));
        if let Some(s) = seed {
            r = r.field("seed", s);
        }
        r
    }
}

/// Drift report of a recorded observable of a trajectory.
pub fn drift_report(traj: &Trajectory, observable: &str) -> Result<DriftReport> {
    DriftReport::from_series(observable, &traj.times, traj.observable(observable)?)
}

/// Sampled test of `Y(q) in R°_q`: the largest `|R(v) . Y(q)|` over
/// `n_samples` velocities `v = Z0 + D u`, `|u| <= radius`.
pub fn reaction_annihilator_test(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    y_at_q: &DVector<f64>,
    n_samples: usize,
    radius: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..n_samples {
        let state = sample_fiber_state(sys, q, rng, radius)?;
        let r = sys.reaction_force(&state)?;
        worst = worst.max(r.dot(y_at_q).abs());
    }
    Ok(worst)
}

/// `max_q |S(q) Y(q) + s(q)|`; zero when `Y - Z` is a section of `D`.
pub fn horizontality_test(sys: &MechanicalSystem, y: &VectorFieldOnQ, q_samples: &[DVector<f64>]) -> f64 {
    q_samples
        .iter()
        .map(|q| (sys.constraint_rows(q) * y.eval(q) + sys.constraint_shift(q)).norm())
        .fold(0.0, f64::max)
}

/// Infinitesimal `Y`-invariance of `D`: `max |S(q) [Y, X_i](q)|` over the
/// pointwise kernel basis `X_i(q)`.
///
/// For any section `X` of `D` through `X_i(q)`, `S [Y, X] = S DX Y - S DY X`
/// and differentiating `S X = 0` along `Y` gives `S DX Y = -(D_Y S) X`, so
/// the residual `-(D_Y S) X_i - S DY X_i` does not depend on the extension.
pub fn infinitesimal_invariance_test(sys: &MechanicalSystem, y: &VectorFieldOnQ, q_samples: &[DVector<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for q in q_samples {
        let geo = sys.constraint_geometry(q, &DVector::zeros(sys.n()))?;
        let yq = y.eval(q);
        let jy = y.jacobian(q);
        let ds = sys.d_constraint_rows(q);
        let s = sys.constraint_rows(q);
        let mut dys = DMatrix::zeros(sys.k(), sys.n());
        for (j, dsj) in ds.iter().enumerate() {
            dys += dsj * yq[j];
        }
        for x in geo.d_basis.column_iter() {
            let r = -(&dys * x) - &s * (&jy * x);
            worst = worst.max(r.norm());
        }
    }
    Ok(worst)
}

/// Settings of [`thm1_classifier`].
#[derive(Debug, Clone)]
pub struct ClassifierOptions {
    pub fiber_samples: usize,
    pub radius: f64,
    pub probe_horizon: f64,
    pub probe_h: f64,
    /// Initial state of the probe integration; defaults to a fiber sample
    /// of speed at most one over the first configuration.
    pub probe_state: Option<State>,
    pub seed: u64,
    pub condition_tol: f64,
    pub drift_tol: f64,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        ClassifierOptions {
            fiber_samples: DEFAULT_FIBER_SAMPLES,
            radius: DEFAULT_FIBER_RADIUS,
            probe_horizon: 5.0,
            probe_h: 1e-3,
            probe_state: None,
            seed: 0,
            condition_tol: CONDITION_TOL,
            drift_tol: DRIFT_TOL,
        }
    }
}

/// Magnitudes and verdicts of the three conditions for a generator `Y`:
/// (i) `Y - Z0` annihilates the reactions, (ii) the lifted derivative of
/// `L` vanishes on `M`, (iii) the moving energy is conserved; plus the
/// horizontality and infinitesimal-invariance residuals.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub reaction_pairing: f64,
    pub lifted_derivative: f64,
    pub moving_energy_drift: DriftReport,
    pub horizontality: f64,
    pub invariance: f64,
    pub condition_tol: f64,
    pub drift_tol: f64,
    pub fiber_samples: usize,
    pub radius: f64,
    pub seed: u64,
}

impl ConditionReport {
    pub fn passes_i(&self) -> bool {
        self.reaction_pairing < self.condition_tol
    }

    pub fn passes_ii(&self) -> bool {
        self.lifted_derivative < self.condition_tol
    }

    pub fn passes_iii(&self) -> bool {
        self.moving_energy_drift.passes(self.drift_tol)
    }

    pub fn is_horizontal(&self) -> bool {
        self.horizontality < STRUCTURAL_TOL
    }

    /// False exactly when two conditions pass and the third fails.
    pub fn implication_consistent(&self) -> bool {
        let passed = [self.passes_i(), self.passes_ii(), self.passes_iii()]
            .iter()
            .filter(|p| **p)
            .count();
        passed != 2
    }

    pub fn to_record(&self) -> Record {
        Record::new("conditions")
            .num("reaction_pairing", self.reaction_pairing)
            .field("pass_i", self.passes_i())
            .num("lifted_derivative", self.lifted_derivative)
            .field("pass_ii", self.passes_ii())
            .num("moving_energy_relative_drift", self.moving_energy_drift.relative_drift)
            .field("pass_iii", self.passes_iii())
            .num("horizontality", self.horizontality)
            .num("invariance", self.invariance)
            .field("implication_consistent", self.implication_consistent())
            .num("condition_tolerance", self.condition_tol)
            .num("drift_tolerance", self.drift_tol)
            .num("structural_tolerance", STRUCTURAL_TOL)
            .field("fiber_samples", self.fiber_samples)
            .num("fiber_radius", self.radius)
            .field("seed", self.seed)
    }
}

/// Evaluates the three conditions of the moving-energy conservation
/// criterion for the generator `Y`.
pub fn thm1_classifier(
    sys: &Arc<MechanicalSystem>,
    y: &VectorFieldOnQ,
    q_samples: &[DVector<f64>],
    opts: &ClassifierOptions,
) -> Result<ConditionReport> {
    if q_samples.is_empty() {
        return Err(Error::invalid("q_samples", "need at least one configuration"));
    }
    let mut rng_i = rng(opts.seed, 1);
    let mut rng_ii = rng(opts.seed, 2);
    let mut reaction_pairing: f64 = 0.0;
    let mut lifted: f64 = 0.0;
    for q in q_samples {
        let geo = sys.constraint_geometry(q, &DVector::zeros(sys.n()))?;
        let shifted = y.eval(q) - &geo.z0;
        reaction_pairing = reaction_pairing.max(reaction_annihilator_test(
            sys,
            q,
            &shifted,
            opts.fiber_samples,
            opts.radius,
            &mut rng_i,
        )?);
        for _ in 0..opts.fiber_samples {
            let state = sample_fiber_state(sys, q, &mut rng_ii, opts.radius)?;
            lifted = lifted.max(sys.lifted_derivative(&state, y)?.abs());
        }
    }
    let probe = match &opts.probe_state {
        Some(s) => s.clone(),
        None => sample_fiber_state(sys, &q_samples[0], &mut rng(opts.seed, 3), 1.0)?,
    };
    let moving_energy_drift = moving_energy_probe(sys, y, &probe, opts.probe_horizon, opts.probe_h)?;
    Ok(ConditionReport {
        reaction_pairing,
        lifted_derivative: lifted,
        moving_energy_drift,
        horizontality: horizontality_test(sys, y, q_samples),
        invariance: infinitesimal_invariance_test(sys, y, q_samples)?,
        condition_tol: opts.condition_tol,
        drift_tol: opts.drift_tol,
        fiber_samples: opts.fiber_samples,
        radius: opts.radius,
        seed: opts.seed,
    })
}

fn probe_run(
    sys: &Arc<MechanicalSystem>,
    y: &VectorFieldOnQ,
    state: &State,
    horizon: f64,
    h: f64,
    name: &str,
    moving: bool,
) -> Result<DriftReport> {
    let n = sys.n();
    let (s1, y1) = (Arc::clone(sys), y.clone());
    let problem = sys.flow_problem(true).with_observable(name, move |v| {
        let st = State::from_flat(v, 0.0);
        if moving {
            s1.moving_energy(&st, &y1)
        } else {
            s1.momentum_of_field(&st, &y1)
        }
    });
    let start = sys.project_velocity(state)?;
    let y0 = DVector::from_fn(2 * n, |i, _| if i < n { start.q[i] } else { start.qdot[i - n] });
    let traj = integrate(&problem, &y0, state.t, state.t + horizon, &IntegrateOptions::rk4(h))?;
    drift_report(&traj, name)
}

/// Drift of `E_L - J_Y` along a projected RK4 probe trajectory.
pub fn moving_energy_probe(
    sys: &Arc<MechanicalSystem>,
    y: &VectorFieldOnQ,
    state: &State,
    horizon: f64,
    h: f64,
) -> Result<DriftReport> {
    probe_run(sys, y, state, horizon, h, "moving_energy", true)
}

/// Settings of a probe integration.
#[derive(Debug, Clone)]
pub struct Probe {
    pub state: State,
    pub horizon: f64,
    pub h: f64,
}

/// Drift of the momentum `J_Y` along a probe trajectory.
pub fn momentum_conservation_test(sys: &Arc<MechanicalSystem>, y: &VectorFieldOnQ, probe: &Probe) -> Result<DriftReport> {
    probe_run(sys, y, &probe.state, probe.horizon, probe.h, "momentum", false)
}

/// Result of [`generator_equivalence_test`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    /// Largest `|E_{L,Y1} - E_{L,Y2}|` over the sampled fibers.
    pub moving_energy_gap: f64,
    /// Largest `|C^T A (Y1 - Y2)|` with `C = [D | Z0]`.
    pub orthogonality_residual: f64,
    /// The equivalence statement assumes `b = 0`; set when it is not.
    pub gyro_present: bool,
}

fn complement_basis(sys: &MechanicalSystem, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    let geo = sys.constraint_geometry(q, &DVector::zeros(sys.n()))?;
    let mut cols: Vec<DVector<f64>> = geo.d_basis.column_iter().map(|c| c.into_owned()).collect();
    if geo.z0.norm() > 1e-14 {
        cols.push(geo.z0);
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Compares two generators: moving-energy gap on sampled fibers and the
/// A-orthogonality of their difference to `D + <Z0>`.
pub fn generator_equivalence_test(
    sys: &MechanicalSystem,
    y1: &VectorFieldOnQ,
    y2: &VectorFieldOnQ,
    q_samples: &[DVector<f64>],
    fiber_samples: usize,
    radius: f64,
    rng: &mut impl Rng,
) -> Result<EquivalenceReport> {
    let mut gap: f64 = 0.0;
    let mut ortho: f64 = 0.0;
    let mut gyro_present = false;
    for q in q_samples {
        gyro_present |= sys.gyro(q).amax() > 0.0;
        let c = complement_basis(sys, q)?;
        let w = y1.eval(q) - y2.eval(q);
        ortho = ortho.max((c.transpose() * sys.metric(q) * &w).amax());
        for _ in 0..fiber_samples {
            let state = sample_fiber_state(sys, q, rng, radius)?;
            gap = gap.max((sys.moving_energy(&state, y1) - sys.moving_energy(&state, y2)).abs());
        }
    }
    Ok(EquivalenceReport {
        moving_energy_gap: gap,
        orthogonality_residual: ortho,
        gyro_present,
    })
}

/// `Y + W`, where `W(q)` is the A-orthogonal projection of `v(q)` onto the
/// complement of `D + <Z0>`; its moving energy coincides with that of `Y`
/// on `M` when `b = 0`.
pub fn add_orthogonal_complement(sys: &Arc<MechanicalSystem>, y: &VectorFieldOnQ, v: &VectorFieldOnQ) -> VectorFieldOnQ {
    let sys = Arc::clone(sys);
    let (y, v) = (y.clone(), v.clone());
    VectorFieldOnQ::new(move |q| {
        let a = sys.metric(q);
        let vq = v.eval(q);
        let w = match complement_basis(&sys, q) {
            Ok(c) => {
                let g = c.transpose() * &a * &c;
                let coef = g.cholesky().map(|ch| ch.solve(&(c.transpose() * &a * &vq)));
                match coef {
                    Some(coef) => &vq - c * coef,
                    None => DVector::from_element(vq.len(), f64::NAN),
                }
            }
            Err(_) => DVector::from_element(vq.len(), f64::NAN),
        };
        y.eval(q) + w
    })
}

/// Adds a section of `D`: `Y + D(q) u` with fixed kernel coordinates `u`.
pub fn add_kernel_section(sys: &Arc<MechanicalSystem>, y: &VectorFieldOnQ, u: DVector<f64>) -> VectorFieldOnQ {
    let sys = Arc::clone(sys);
    let y = y.clone();
    VectorFieldOnQ::new(move |q| {
        let extra = sys
            .constraint_geometry(q, &DVector::zeros(sys.n()))
            .map(|g| g.d_basis * &u)
            .unwrap_or_else(|_| DVector::from_element(q.len(), f64::NAN));
        y.eval(q) + extra
    })
}

/// A structured text record: a `[kind]` header followed by `key = value`
/// lines. Floating-point values use 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

impl Record {
    pub fn new(kind: impl Into<String>) -> Self {
        Record {
            kind: kind.into(),
            fields: Vec::new(),
        }
    }

    pub fn field(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn num(self, key: &str, value: f64) -> Self {
        let v = fmt_f64(value);
        self.field(key, v)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}]", self.kind)?;
        for (k, v) in &self.fields {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
