//! Simulation and parametric inference for the pure-jump α-stable
//! Cox–Ingersoll–Ross process
//!
//! ```text
//! dX_t = (a - b X_t) dt + δ X_{t-}^{1/α} dL_t,   t ∈ [0, 1],
//! ```
//!
//! driven by a spectrally positive strictly α-stable Lévy process, observed at
//! `t = i/n`.
//!
//! * [`stable`]: density, derivatives and score kernels of `L_1`, sampling.
//! * [`cir`]: Euler simulation of the SDE and the closed-form Laplace
//!   transform of `X_t` used to validate it.
//! * [`estimators`]: power-variation preliminary estimators, quasi-likelihood
//!   score and hessian, drift Newton solver, one-step correction, information
//!   matrix and rate matrix.

// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cir;
pub mod error;
pub mod estimators;
pub mod quadrature;
pub mod rng;
pub mod stable;

pub use cir::{PathGrid, Theta};
pub use error::{CirError, EstimError, QuadError, StableError};
pub use stable::{frac_moment_m, levy_constant, KernelJet, ScoreKernels, StableLaw};
