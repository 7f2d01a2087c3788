use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Vector3};

use super::inertia::InertiaOperator;
use crate::error::{Error, Result};
use crate::liegroup::{hat, killing_pair, so_dim, SoAlgebra};

/// Parameters of an LR system on SO(n): left-invariant kinetic energy with
/// inertia operator `I`, right-invariant affine constraints
/// `<a^j, omega - zeta> = 0`.
#[derive(Debug, Clone)]
pub struct LrParams {
    inertia: InertiaOperator,
    a: Vec<SoAlgebra>,
    zeta: SoAlgebra,
    c: Vec<f64>,
}

/// Trivialized LR state: the body representatives `gamma^j = Ad_{g^-1} a^j`
/// and the body angular velocity `Omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrState {
    pub gammas: Vec<SoAlgebra>,
    pub omega: SoAlgebra,
}

impl LrParams {
    /// Builds the parameters. The covectors must be Killing-orthonormal;
    /// `zeta` is replaced by its orthogonal projection onto their span.
    pub fn new(inertia: InertiaOperator, a: Vec<SoAlgebra>, zeta: SoAlgebra) -> Result<Self> {
        let n = inertia.n();
        if a.is_empty() || a.len() >= so_dim(n) {
            return Err(Error::invalid("a", "need between 1 and dim so(n) - 1 constraint covectors"));
        }
        for (i, ai) in a.iter().enumerate() {
            if ai.dim() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: ai.dim(),
                });
            }
            for (j, aj) in a.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                if (killing_pair(ai, aj) - target).abs() > 1e-10 {
                    return Err(Error::invalid(
                        "a",
                        "constraint covectors must be orthonormal under the Killing pairing",
                    ));
                }
            }
        }
        if zeta.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                got: zeta.dim(),
            });
        }
        let c: Vec<f64> = a.iter().map(|aj| killing_pair(aj, &zeta)).collect();
        let zeta = a.iter().zip(&c).fold(SoAlgebra::zeros(n), |acc, (aj, cj)| &acc + &(aj * *cj));
        Ok(LrParams { inertia, a, zeta, c })
    }

    /// Veselova rigid body: single constraint along the spatial axis `e3`,
    /// `omega . e3 = c`.
    pub fn veselova(tensor: &Matrix3<f64>, c: f64) -> Result<Self> {
        let inertia = InertiaOperator::from_tensor3(tensor)?;
        let a = hat(&Vector3::z());
        let zeta = &a * c;
        LrParams::new(inertia, vec![a], zeta)
    }

    pub fn n(&self) -> usize {
        self.inertia.n()
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    pub fn inertia(&self) -> &InertiaOperator {
        &self.inertia
    }

    pub fn covectors(&self) -> &[SoAlgebra] {
        &self.a
    }

    pub fn zeta(&self) -> &SoAlgebra {
        &self.zeta
    }

    pub fn constants(&self) -> &[f64] {
        &self.c
    }

    /// Flat layout length: `k` Poisson elements followed by `Omega`.
    pub fn state_dim(&self) -> usize {
        (self.k() + 1) * so_dim(self.n())
    }
}

impl LrState {
    pub fn to_flat(&self) -> DVector<f64> {
        let parts: Vec<f64> = self
            .gammas
            .iter()
            .chain(std::iter::once(&self.omega))
            .flat_map(|x| x.coords().iter().copied().collect::<Vec<_>>())
            .collect();
        DVector::from_vec(parts)
    }

    pub fn from_flat(params: &LrParams, y: &DVector<f64>) -> Result<Self> {
        let d = so_dim(params.n());
        if y.len() != params.state_dim() {
            return Err(Error::Dimension {
                expected: params.state_dim(),
                got: y.len(),
            });
        }
        let mut blocks = (0..=params.k()).map(|b| SoAlgebra::from_coords(params.n(), &y.as_slice()[b * d..(b + 1) * d]));
        let gammas = (0..params.k())
            .map(|_| blocks.next().expect("block"))
            .collect::<Result<Vec<_>>>()?;
        let omega = blocks.next().expect("block")?;
        Ok(LrState { gammas, omega })
    }

    /// State at the identity attitude (`gamma^j = a^j`) with `Omega`
    /// corrected to satisfy the constraints.
    pub fn at_identity(params: &LrParams, omega: SoAlgebra) -> Result<Self> {
        let s = LrState {
            gammas: params.a.clone(),
            omega,
        };
        lr_project(params, &s)
    }
}

/// Derivative of the trivialized LR flow. The multipliers `lambda` solve
/// `sum_j <gamma^i, I^-1 gamma^j> lambda_j = -<gamma^i, I^-1 [I Omega, Omega]>`.
pub fn lr_vector_field(params: &LrParams, state: &LrState) -> Result<LrState> {
    let k = params.k();
    if state.gammas.len() != k {
        return Err(Error::Dimension {
            expected: k,
            got: state.gammas.len(),
        });
    }
    let io = params.inertia.apply(&state.omega);
    let w = params.inertia.solve(&io.bracket(&state.omega));
    let u: Vec<SoAlgebra> = state.gammas.iter().map(|g| params.inertia.solve(g)).collect();
    let gram = DMatrix::from_fn(k, k, |i, j| killing_pair(&state.gammas[i], &u[j]));
    let rhs = DVector::from_fn(k, |i, _| -killing_pair(&state.gammas[i], &w));
    let lambda = Cholesky::new(gram).ok_or(Error::MultiplierDegeneracy)?.solve(&rhs);
    let omega_dot = u.iter().zip(lambda.iter()).fold(w, |acc, (uj, lj)| &acc + &(uj * *lj));
    let gammas = state.gammas.iter().map(|g| g.bracket(&state.omega)).collect();
    Ok(LrState {
        gammas,
        omega: omega_dot,
    })
}

/// Kinetic energy `1/2 <I Omega, Omega>`.
pub fn lr_energy(params: &LrParams, state: &LrState) -> f64 {
    0.5 * killing_pair(&params.inertia.apply(&state.omega), &state.omega)
}

/// Moving energy `1/2 <I Omega, Omega> - sum_j c_j <I Omega, gamma^j>`.
pub fn lr_moving_energy(params: &LrParams, state: &LrState) -> f64 {
    let io = params.inertia.apply(&state.omega);
    let affine: f64 = params
        .c
        .iter()
        .zip(&state.gammas)
        .map(|(cj, gj)| cj * killing_pair(&io, gj))
        .sum();
    lr_energy(params, state) - affine
}

/// Named residuals: constraint `<gamma^j, Omega> - c_j` and the
/// orthonormality defect of the Poisson elements.
pub fn lr_residuals(params: &LrParams, state: &LrState) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (j, (gj, cj)) in state.gammas.iter().zip(&params.c).enumerate() {
        out.push((format!("constraint_{j}"), killing_pair(gj, &state.omega) - cj));
    }
    let mut ortho: f64 = 0.0;
    for (i, gi) in state.gammas.iter().enumerate() {
        for (j, gj) in state.gammas.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            ortho = ortho.max((killing_pair(gi, gj) - target).abs());
        }
    }
    out.push(("gamma_orthonormality".into(), ortho));
    out
}

/// Gram-Schmidt on the Poisson elements, then the Killing-orthogonal
/// correction of `Omega` onto the constraint set.
pub fn lr_project(params: &LrParams, state: &LrState) -> Result<LrState> {
    let mut gammas: Vec<SoAlgebra> = Vec::with_capacity(state.gammas.len());
    for g in &state.gammas {
        let mut v = g.clone();
        for e in &gammas {
            v = &v - &(e * killing_pair(e, &v));
        }
        let norm = v.norm();
        if !(norm > 1e-12) {
            return Err(Error::MultiplierDegeneracy);
        }
        gammas.push(&v * (1.0 / norm));
    }
    let omega = gammas.iter().zip(&params.c).fold(state.omega.clone(), |acc, (gj, cj)| {
        let corr = cj - killing_pair(gj, &acc);
        &acc + &(gj * corr)
    });
    Ok(LrState { gammas, omega })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::{adjoint, exp_map, wedge};

    fn generic_veselova(c: f64) -> LrParams {
        let t = Matrix3::new(2.0, 0.1, 0.05, 0.1, 3.0, -0.2, 0.05, -0.2, 4.0);
        LrParams::veselova(&t, c).unwrap()
    }

    fn random_state(params: &LrParams) -> LrState {
        let g = exp_map(&hat(&Vector3::new(0.3, -0.7, 0.4))).unwrap();
        let gi = g.inverse();
        let gammas = params.covectors().iter().map(|a| adjoint(&gi, a)).collect();
        let omega = hat(&Vector3::new(0.8, -0.3, 1.1));
        lr_project(params, &LrState { gammas, omega }).unwrap()
    }

    #[test]
    fn isotropic_linear_case_keeps_omega_constant() {
        let params = LrParams::veselova(&(Matrix3::identity() * 2.0), 0.0).unwrap();
        let s = random_state(&params);
        let d = lr_vector_field(&params, &s).unwrap();
        assert!(d.omega.norm() < 1e-14);
    }

    #[test]
    fn field_preserves_constraint_to_first_order() {
        let params = generic_veselova(0.7);
        let s = random_state(&params);
        let d = lr_vector_field(&params, &s).unwrap();
        let rate = killing_pair(&d.gammas[0], &s.omega) + killing_pair(&s.gammas[0], &d.omega);
        assert!(rate.abs() < 1e-13);
    }

    #[test]
    fn moving_energy_rate_vanishes() {
        let params = generic_veselova(0.7);
        let s = random_state(&params);
        let d = lr_vector_field(&params, &s).unwrap();
        let io = params.inertia().apply(&s.omega);
        let io_dot = params.inertia().apply(&d.omega);
        let c = params.constants()[0];
        let rate = killing_pair(&io_dot, &s.omega) - c * (killing_pair(&io_dot, &s.gammas[0]) + killing_pair(&io, &d.gammas[0]));
        assert!(rate.abs() < 1e-13, "rate {rate}");
    }

    #[test]
    fn zeta_is_projected_onto_constraint_span() {
        let inertia = InertiaOperator::isotropic(4, 1.0).unwrap();
        let e = |i: usize| DVector::from_fn(4, |k, _| if k == i { 1.0 } else { 0.0 });
        let a = vec![wedge(&e(0), &e(1)).unwrap(), wedge(&e(2), &e(3)).unwrap()];
        let zeta = &(&a[0] * 0.5) + &wedge(&e(0), &e(2)).unwrap();
        let params = LrParams::new(inertia, a, zeta).unwrap();
        assert_eq!(params.constants(), &[0.5, 0.0]);
        assert!((params.zeta() - &(&params.covectors()[0] * 0.5)).norm() < 1e-15);
    }

    #[test]
    fn flat_round_trip_and_projection() {
        let params = generic_veselova(0.4);
        let s = random_state(&params);
        let back = LrState::from_flat(&params, &s.to_flat()).unwrap();
        assert_eq!(back, s);
        for (_, r) in lr_residuals(&params, &s) {
            assert!(r.abs() < 1e-12);
        }
        assert!(
            lr_moving_energy(
                &params,
                &LrState {
                    gammas: s.gammas.clone(),
                    omega: SoAlgebra::zeros(3)
                }
            )
            .abs()
                < 1e-15
        );
    }
}
