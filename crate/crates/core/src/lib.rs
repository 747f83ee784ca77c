//! Gravitational n-body problem on spaces of constant curvature `±1`.
//!
//! - [`geometry`]: model-space points, the σ-inner product and the block
//!   rotation family `T_k(At)`.
//! - [`dynamics`]: equations of motion and a projected Runge–Kutta integrator.
//! - [`equilibria`]: residual, solver, verification, deduplication and
//!   classification of relative equilibria on the sphere.
//! - [`probe`]: multi-start scans of the minimal pairwise distance and the
//!   cluster blow-up diagnostic.
//!
//! All numerical code is generic over [`Real`]; the aliases below fix the
//! scalar to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::result_large_err)]

pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod geometry;
pub mod probe;
pub mod scalar;

pub use error::{Error, Result, SingularityKind};
pub use geometry::{RotationSpec, Sigma, SpacePoint};
pub use scalar::Real;

pub type Point = geometry::SpacePoint<f64>;
pub type Rotation = geometry::RotationSpec<f64>;
pub type Bodies = dynamics::BodySystem<f64>;
pub type State = dynamics::PhaseState<f64>;
pub type Orbit = dynamics::Trajectory<f64>;
pub type Problem = equilibria::REProblem<f64>;
pub type Solution = equilibria::RESolution<f64>;
pub type Residual = equilibria::REResidual<f64>;
pub type Verification = equilibria::VerificationReport<f64>;
pub type Scan = probe::BoundScanResult<f64>;
pub type Diagnostic = probe::BlowupDiagnostic<f64>;
pub type ProbeSample = probe::ProbeRow<f64>;
