//! Simulation and verification of conservation laws for mechanical
//! systems with affine nonholonomic constraints.
//!
//! * [`dynamics`]: generic coordinate engine for `L = 1/2 qdot.A qdot +
//!   b.qdot - V` with constraints `S qdot + s = 0` (reactions,
//!   accelerations, energies, momenta, moving energies, lifted
//!   derivatives).
//! * [`integrator`]: fixed-step RK4 and adaptive Dormand-Prince with
//!   optional projection onto the constraint manifold.
//! * [`liegroup`]: so(n) coordinates, exponential map, adjoint action, hat
//!   map, re-orthonormalization.
//! * [`models`]: LR and Veselova systems, a convex body rolling on a
//!   rotating plane, the Chaplygin ball in 3 and n dimensions (full and
//!   reduced), and chart embeddings into the generic engine.
//! * [`diagnostics`]: drift reports, reaction-annihilator sampling, the
//!   three-condition classifier, horizontality and invariance tests,
//!   generator equivalence.
//! * [`scenario`]: scenario files, runs, CSV and report output (used by the
//!   `nonholo` binary).

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod liegroup;
pub mod models;
pub mod scenario;

pub use error::{Error, Result};
