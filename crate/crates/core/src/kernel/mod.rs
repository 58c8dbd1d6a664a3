//! Potential-reduction interior-point kernel for the ℓq power-control problem.
//!
//! [`AugmentedProblem`] holds the slack form, [`solve_potential_reduction`]
//! runs the method from one interior point, and [`multistart_solve`] keeps
//! the best rounded result over a default start plus random starts.

mod multistart;
mod problem;
mod solver;

pub use multistart::{
    multistart_solve, round_to_power, support_score, write_trace, MultistartResult, Rounded,
    StartOutcome, StartSuccess,
};
pub use problem::AugmentedProblem;
pub use solver::{
    guaranteed_decrease, reduction_step, solve_potential_reduction, IterateState, KktCertificate,
    Solution, SolverConfig, StepOutcome, Termination, TraceRecord, DEFAULT_BETA,
};
