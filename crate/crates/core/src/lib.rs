//! Solvers for noise-constrained `ℓp`-regularized linear inverse problems.
//!
//! The central algorithm is a projected Newton method that grows a
//! generalized Krylov subspace one vector per iteration and solves the
//! KKT system of
//!
//! ```text
//! min Ψ(x)   subject to   ½‖Ax − b‖² = ½σ²
//! ```
//!
//! in that subspace, so that the regularized solution and the regularization
//! parameter satisfying the discrepancy principle are computed together.
//! Two reference solvers are included for comparison: a generalized Krylov
//! subspace method for general-form Tikhonov regularization ([`reference::solve_gks`])
//! and an iteratively-reweighted-norm method for `ℓ1` penalties with a fixed
//! regularization parameter ([`reference::solve_gkspq`]).
//!
//! Entry points:
//! * [`pnewton::solve_projected_newton`] — the main solver,
//! * [`problems`] — deterministic test-problem generators,
//! * [`linop`] — matrix-free linear operators with matvec instrumentation,
//! * [`cli`] — the experiment command-line harness backing the `pnkrylov` binary.

pub mod cli;
pub mod error;
pub mod gksubspace;
pub mod linop;
pub mod penalty;
pub mod pnewton;
pub mod problems;
pub mod reference;
pub mod rng;
pub mod trace;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
