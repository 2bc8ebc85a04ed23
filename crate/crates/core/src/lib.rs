//! Solvers for regularized least squares `min ½‖Ax - b‖² + R(Lx)` through the
//! SR3 relaxation `min ½‖Ax - b‖² + (κ/2)‖Lx - y‖² + R(y)`.
//!
//! The crate bundles the pieces needed to run and check the method at desk
//! scale:
//!
//! * [`linops`]: matrix-free operators (convolution, gravity, differences,
//!   parallel-beam tomography, stacked systems),
//! * [`prox`]: soft thresholding and ℓ1-ball projection,
//! * [`lsqr`]: LSQR with warm starts and an iterate visitor,
//! * [`gsvd`]: the generalized SVD of `(A, L)`, closed-form spectra of the
//!   relaxed operator and the standard-form transformation,
//! * [`sr3`]: exact and inexact SR3 plus a FISTA baseline,
//! * [`pareto`]: value-function tracing, bounds and corner detection,
//! * [`problems`]: deterministic test problems,
//! * [`io`]: CSV/JSON serialization.

// `!(x >= 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gsvd;
pub mod io;
pub mod linops;
pub mod lsqr;
pub mod pareto;
pub mod problems;
pub mod prox;
pub mod rng;
pub mod sr3;

pub use error::{Error, Result};
pub use gsvd::{GsvdFactors, Regime, RelaxedSystem, StandardForm};
pub use linops::{ConvKernel, LinearOperator, OperatorKind, SparseMatrix};
pub use lsqr::{LsqrOptions, LsqrStats, StopReason};
pub use pareto::{Kappa, ParetoCurve, ParetoPoint};
pub use problems::Problem;
pub use prox::Regularizer;
pub use sr3::{FistaOptions, Mode, SolveResult, Sr3Config};

pub use nalgebra::{DMatrix, DVector};
