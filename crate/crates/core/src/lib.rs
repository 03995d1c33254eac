//! Stability analysis and full-state feedback synthesis for coupled
//! differential-difference delay systems
//!
//! ```text
//! x'(t) = A x(t) + B y(t-r) + ∫ H(θ) y(t+θ) dθ + F u(t)
//! y(t)  = C x(t) + D y(t-r)
//! ```
//!
//! using complete quadratic Lyapunov-Krasovskii functionals.
//!
//! The crate is organised bottom-up:
//!
//! - [`polyalg`]: matrix-valued polynomials in one and two variables on `[-r, 0]`
//!   plus Gauss-Legendre quadrature.
//! - [`lkoperator`]: the kernel operator `𝒫` on `ℝⁿ × PC(r, m)`, its quadratic
//!   functional, boundary-invariance residuals and the closed-form inverse of a
//!   separable operator.
//! - [`sdp`]: affine modelling layer and semidefinite feasibility solving.
//! - [`positivity`]: Gram-matrix certificates for joint positivity of multiplier
//!   and integral operators.
//! - [`synthesis`]: the full controller synthesis pipeline.
//! - [`ddesim`]: method-of-steps simulator with Lyapunov monitoring.
//! - [`cli`]: batch front end used by the `lkfsyn` binary.

// Index loops mirror the coefficient formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod ddesim;
pub mod error;
pub mod lkoperator;
pub mod matrix;
pub mod polyalg;
pub mod positivity;
pub mod sdp;
pub mod synthesis;

pub use error::{LkError, Result};

// Links the system OpenBLAS used by the conic solver's dense PSD kernels.
extern crate openblas_src;
