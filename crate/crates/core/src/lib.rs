//! Multi-block ADMM for separable convex programs with linear coupling
//! constraints `Σ_k E_k x_k = q`, with per-iteration diagnostics of the
//! optimality gaps.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod generators;
pub mod io;
pub mod lagrangian;
pub mod linalg;
pub mod problem;
pub mod prox;
pub mod solvers;
pub mod trace;

pub use error::{AdmmError, Result};
pub use problem::{build_problem, Block, BoxBounds, Problem, SmoothTerm};
pub use prox::ProxTerm;
pub use solvers::{run, AlphaPolicy, IterateState, RunResult, SolverConfig, Termination, Variant};
