//! BFGS-SQP solver for nonsmooth inequality-constrained problems, with
//! penalty-parameter steering, a weak Wolfe line search, and termination on
//! a min-norm certificate over recently cached gradients.

mod bandwidth;
mod linesearch;
mod problem;
mod qp;
mod solver;

pub use bandwidth::{analyze_loop, synthesize, synthesize_with_restarts, BandwidthProblem, LoopAnalysis, SolverConfig, SynthesisReport};
pub use linesearch::{weak_wolfe, LineSearchOutcome, LineSearchParams, LineSearchResult};
pub use problem::{ConstraintValue, MaxOfTwo, Problem, ProblemPoint};
pub use qp::{penalty_direction, predicted_reduction, simplex_qp, steer, LinearizedConstraint, Steering, SteeringParams};
pub use solver::{solve, DirectionMode, IterationRecord, SolveResult, SolverOptions, Status};
