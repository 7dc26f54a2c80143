//! Solution pipelines for the original problem through its transformed,
//! variational form.

pub mod lower;
pub mod mountain;
pub mod newton;
pub mod pipeline;

pub use lower::{build_lower_solution, estimate_lower_bound};
pub use mountain::{pass, PassOutcome, PathOptions};
pub use newton::{find_root, minimize, NewtonOptions, Outcome, Status};
pub use pipeline::{find_local_min, mountain_pass, solve_Plambda, solve_between, OrderedPair, SolveOptions, SolveReport};
