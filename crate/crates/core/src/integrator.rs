//! Explicit Runge-Kutta integration of first-order flows with optional
//! post-step projection onto an invariant manifold.

use std::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};

type RhsFn = Box<dyn Fn(f64, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;
type ProjectorFn = Box<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;
type ObservableFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// A first-order system `y' = f(t, y)` with an optional projector and
/// named scalar observables.
pub struct FlowProblem {
    dim: usize,
    rhs: RhsFn,
    projector: Option<ProjectorFn>,
    observables: Vec<(String, ObservableFn)>,
}

impl fmt::Debug for FlowProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowProblem")
            .field("dim", &self.dim)
            .field("projector", &self.projector.is_some())
            .field("observables", &self.observable_names())
            .finish()
    }
}

impl FlowProblem {
    pub fn new(dim: usize, rhs: impl Fn(f64, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static) -> Self {
        FlowProblem {
            dim,
            rhs: Box::new(rhs),
            projector: None,
            observables: Vec::new(),
        }
    }

    pub fn with_projector(mut self, p: impl Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static) -> Self {
        self.projector = Some(Box::new(p));
        self
    }

    pub fn without_projector(mut self) -> Self {
        self.projector = None;
        self
    }

    pub fn with_observable(mut self, name: impl Into<String>, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.observables.push((name.into(), Box::new(f)));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_projector(&self) -> bool {
        self.projector.is_some()
    }

    pub fn observable_names(&self) -> Vec<String> {
        self.observables.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn rhs(&self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        (self.rhs)(t, y)
    }

    pub fn project(&self, y: DVector<f64>) -> Result<DVector<f64>> {
        match &self.projector {
            Some(p) => p(&y),
            None => Ok(y),
        }
    }

    pub fn observe(&self, y: &DVector<f64>) -> Vec<f64> {
        self.observables.iter().map(|(_, f)| f(y)).collect()
    }

    fn stage(&self, t: f64, y: &DVector<f64>, stage: usize) -> Result<DVector<f64>> {
        let k = (self.rhs)(t, y)?;
        if k.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: k.len(),
            });
        }
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteStage { t, stage });
        }
        Ok(k)
    }
}

/// Time-stamped states and observable series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub observable_names: Vec<String>,
    pub observables: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn observable(&self, name: &str) -> Result<&[f64]> {
        self.observable_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.observables[i].as_slice())
            .ok_or_else(|| Error::MissingObservable(name.to_string()))
    }

    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    fn push(&mut self, t: f64, y: &DVector<f64>, obs: &[f64]) {
        self.times.push(t);
        self.states.push(y.clone());
        for (series, v) in self.observables.iter_mut().zip(obs) {
            series.push(*v);
        }
    }
}

/// Step-size strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with fixed step `h`.
    Rk4 { h: f64 },
    /// Dormand-Prince embedded 5(4) pair with local error control.
    Adaptive { rtol: f64, atol: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Rk4 { h: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub method: Method,
    /// Record every `record_every`-th step (the final state is always recorded).
    pub record_every: usize,
    /// Smallest admissible adaptive step; defaults to `1e-12 (t_end - t0)`.
    pub h_min: Option<f64>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            method: Method::default(),
            record_every: 1,
            h_min: None,
        }
    }
}

impl IntegrateOptions {
    pub fn rk4(h: f64) -> Self {
        IntegrateOptions {
            method: Method::Rk4 { h },
            ..Default::default()
        }
    }

    pub fn adaptive(rtol: f64, atol: f64) -> Self {
        IntegrateOptions {
            method: Method::Adaptive { rtol, atol },
            ..Default::default()
        }
    }

    pub fn record_every(mut self, every: usize) -> Self {
        self.record_every = every.max(1);
        self
    }
}

/// One classical RK4 step, followed by the projector when present.
pub fn rk4_step(problem: &FlowProblem, y: &DVector<f64>, t: f64, h: f64) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid("h", "step must be positive"));
    }
    let k1 = problem.stage(t, y, 1)?;
    let k2 = problem.stage(t + 0.5 * h, &(y + &k1 * (0.5 * h)), 2)?;
    let k3 = problem.stage(t + 0.5 * h, &(y + &k2 * (0.5 * h)), 3)?;
    let k4 = problem.stage(t + h, &(y + &k3 * h), 4)?;
    let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    problem.project(next)
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince trial step: returns the fifth-order solution (before
/// projection) and the scaled error norm.
fn dopri_trial(problem: &FlowProblem, y: &DVector<f64>, t: f64, h: f64, rtol: f64, atol: f64) -> Result<(DVector<f64>, f64)> {
    let mut ks: Vec<DVector<f64>> = Vec::with_capacity(7);
    for s in 0..7 {
        let mut ys = y.clone();
        for (j, k) in ks.iter().enumerate() {
            if DP_A[s][j] != 0.0 {
                ys += k * (h * DP_A[s][j]);
            }
        }
        ks.push(problem.stage(t + DP_C[s] * h, &ys, s + 1)?);
    }
    let mut y5 = y.clone();
    let mut err = DVector::zeros(y.len());
    for (s, k) in ks.iter().enumerate() {
        y5 += k * (h * DP_B5[s]);
        err += k * (h * (DP_B5[s] - DP_B4[s]));
    }
    let dim = y.len().max(1) as f64;
    let norm = (err
        .iter()
        .zip(y.iter().zip(y5.iter()))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum::<f64>()
        / dim)
        .sqrt();
    Ok((y5, norm))
}

/// Integrates from `t0` to `t_end`, calling `sink(t, y, observables)` at every
/// recorded point. Records made before a failure have already been delivered.
pub fn integrate_with(
    problem: &FlowProblem,
    y0: &DVector<f64>,
    t0: f64,
    t_end: f64,
    opts: &IntegrateOptions,
    sink: &mut dyn FnMut(f64, &DVector<f64>, &[f64]) -> Result<()>,
) -> Result<()> {
    if !(t_end > t0) {
        return Err(Error::invalid("t_end", "must exceed the initial time"));
    }
    if y0.len() != problem.dim {
        return Err(Error::Dimension {
            expected: problem.dim,
            got: y0.len(),
        });
    }
    let every = opts.record_every.max(1);
    let mut y = problem.project(y0.clone())?;
    sink(t0, &y, &problem.observe(&y))?;
    match opts.method {
        Method::Rk4 { h } => {
            if !(h > 0.0) {
                return Err(Error::invalid("h", "step must be positive"));
            }
            let span = t_end - t0;
            let steps = ((span / h) - 1e-9).ceil().max(1.0) as usize;
            let mut t = t0;
            for i in 1..=steps {
                let t_next = if i == steps { t_end } else { t0 + i as f64 * h };
                y = rk4_step(problem, &y, t, t_next - t)?;
                t = t_next;
                if i % every == 0 || i == steps {
                    sink(t, &y, &problem.observe(&y))?;
                }
            }
        }
        Method::Adaptive { rtol, atol } => {
            let span = t_end - t0;
            let h_min = opts.h_min.unwrap_or(1e-12 * span);
            let mut h = (1e-3 * span).min(0.01);
            let mut t = t0;
            let mut accepted = 0usize;
            while t < t_end {
                let last = t + h >= t_end;
                let h_try = if last { t_end - t } else { h };
                let (y5, err) = dopri_trial(problem, &y, t, h_try, rtol, atol)?;
                if err <= 1.0 {
                    t = if last { t_end } else { t + h_try };
                    y = problem.project(y5)?;
                    accepted += 1;
                    if accepted.is_multiple_of(every) || t >= t_end {
                        sink(t, &y, &problem.observe(&y))?;
                    }
                }
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                h = h_try * factor;
                if t < t_end && h < h_min {
                    return Err(Error::StepUnderflow { t, h });
                }
            }
        }
    }
    Ok(())
}

/// Integrates and collects the recorded points into a [`Trajectory`].
pub fn integrate(problem: &FlowProblem, y0: &DVector<f64>, t0: f64, t_end: f64, opts: &IntegrateOptions) -> Result<Trajectory> {
    let mut traj = Trajectory {
        observable_names: problem.observable_names(),
        observables: vec![Vec::new(); problem.observables.len()],
        ..Default::default()
    };
    integrate_with(problem, y0, t0, t_end, opts, &mut |t, y, obs| {
        traj.push(t, y, obs);
        Ok(())
    })?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn exp_growth() -> FlowProblem {
        FlowProblem::new(1, |_, y| Ok(y.clone()))
    }

    fn oscillator() -> FlowProblem {
        FlowProblem::new(2, |_, y| Ok(DVector::from_vec(vec![y[1], -y[0]])))
    }

    #[test]
    fn zero_field_is_stationary() {
        let p = FlowProblem::new(3, |_, _| Ok(DVector::zeros(3)));
        let y = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(rk4_step(&p, &y, 0.0, 0.1).unwrap(), y);
    }

    #[test]
    fn rk4_polynomial_on_exponential() {
        let h: f64 = 0.1;
        let y = rk4_step(&exp_growth(), &DVector::from_vec(vec![1.0]), 0.0, h).unwrap();
        let poly = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((y[0] - poly).abs() < 1e-15);
        assert!((y[0] - 1.1051708333333333).abs() < 1e-15);
    }

    #[test]
    fn rk4_global_order_is_four() {
        let e = std::f64::consts::E;
        let mut errs = Vec::new();
        let hs = [0.1, 0.05, 0.025, 0.0125];
        for &h in &hs {
            let tr = integrate(
                &exp_growth(),
                &DVector::from_vec(vec![1.0]),
                0.0,
                1.0,
                &IntegrateOptions::rk4(h),
            )
            .unwrap();
            errs.push((tr.last_state().unwrap()[0] - e).abs());
        }
        for w in 0..hs.len() - 1 {
            let slope = (errs[w] / errs[w + 1]).ln() / (hs[w] / hs[w + 1]).ln();
            assert!((slope - 4.0).abs() < 0.1, "slope {slope}");
        }
    }

    #[test]
    fn oscillator_returns_after_one_period() {
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let tr = integrate(
            &oscillator(),
            &y0,
            0.0,
            2.0 * std::f64::consts::PI,
            &IntegrateOptions::rk4(1e-3),
        )
        .unwrap();
        assert!((tr.last_state().unwrap() - &y0).amax() < 1e-10);
        assert_eq!(*tr.times.last().unwrap(), 2.0 * std::f64::consts::PI);
    }

    #[test]
    fn projector_keeps_unit_norm() {
        let w = Vector3::new(0.3, -1.0, 2.0);
        let p = FlowProblem::new(3, move |_, y| {
            let v = Vector3::new(y[0], y[1], y[2]);
            Ok(DVector::from_column_slice(w.cross(&v).as_slice()))
        })
        .with_projector(|y| Ok(y.normalize()))
        .with_observable("norm", |y| y.norm());
        let tr = integrate(
            &p,
            &DVector::from_vec(vec![1.0, 0.0, 0.0]),
            0.0,
            5.0,
            &IntegrateOptions::rk4(0.05),
        )
        .unwrap();
        for v in tr.observable("norm").unwrap() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn adaptive_matches_exact_solution() {
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let tr = integrate(&oscillator(), &y0, 0.0, 10.0, &IntegrateOptions::adaptive(1e-10, 1e-12)).unwrap();
        let y = tr.last_state().unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-8);
        assert!((y[1] + 10f64.sin()).abs() < 1e-8);
        assert_eq!(*tr.times.last().unwrap(), 10.0);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn adaptive_step_underflow_on_blowup() {
        // y' = y^2 blows up at t = 1
        let p = FlowProblem::new(1, |_, y| Ok(DVector::from_vec(vec![y[0] * y[0]])));
        let r = integrate(
            &p,
            &DVector::from_vec(vec![1.0]),
            0.0,
            2.0,
            &IntegrateOptions::adaptive(1e-8, 1e-10),
        );
        assert!(matches!(
            r,
            Err(Error::StepUnderflow { .. }) | Err(Error::NonFiniteStage { .. })
        ));
    }

    #[test]
    fn non_finite_stage_is_reported() {
        let p = FlowProblem::new(1, |t, _| Ok(DVector::from_vec(vec![if t > 0.0 { f64::NAN } else { 1.0 }])));
        let r = rk4_step(&p, &DVector::from_vec(vec![0.0]), 0.0, 0.1);
        assert_eq!(r, Err(Error::NonFiniteStage { t: 0.05, stage: 2 }));
    }

    #[test]
    fn recording_cadence_and_reproducibility() {
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let opts = IntegrateOptions::rk4(0.01).record_every(10);
        let a = integrate(&oscillator(), &y0, 0.0, 1.0, &opts).unwrap();
        let b = integrate(&oscillator(), &y0, 0.0, 1.0, &opts).unwrap();
        assert_eq!(a.len(), 11);
        assert_eq!(a, b);
        assert!(matches!(a.observable("nope"), Err(Error::MissingObservable(_))));
    }

    #[test]
    fn rejects_bad_interval_and_step() {
        let y0 = DVector::from_vec(vec![1.0]);
        assert!(integrate(&exp_growth(), &y0, 1.0, 1.0, &IntegrateOptions::rk4(0.1)).is_err());
        assert!(rk4_step(&exp_growth(), &y0, 0.0, 0.0).is_err());
    }
}
