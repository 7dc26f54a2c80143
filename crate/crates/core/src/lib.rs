//! Numerical toolkit for `−Δ_p u = λ c(x)|u|^{p−2}u + μ|∇u|^p + h(x)` with
//! homogeneous Dirichlet data on intervals and balls (radial reduction).
//!
//! The gradient term is removed by the Hopf-Cole change of unknown, which
//! turns the problem into a variational one for a truncated reaction. The
//! crate discretizes that energy, computes the spectral quantities that decide
//! solvability, finds minimizers and mountain-pass critical points, traces
//! branches in `λ` and in the datum scaling `k`, and checks the qualitative
//! properties (comparison, uniqueness, Picone identity) on discrete data.

pub mod cli;
pub mod continuation;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod nonlinearity;
pub mod operators;
mod parallel;
pub mod problem;
pub mod solvers;
pub mod spectra;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{make_grid, norm_lq, norm_w1p, Domain, Field, Grid};
pub use nonlinearity::{hopf_cole, hopf_cole_inv, ReactionKernel};
pub use problem::{ProblemSpec, Reaction, TruncationData};
