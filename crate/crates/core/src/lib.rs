//! Bandwidth-optimal synthesis of decentralized PID + low-pass + notch
//! controllers for decoupled precision motion systems.
//!
//! The synthesis problem maximizes the MIMO crossover bandwidth subject to an
//! H-infinity bound on the sensitivity function. Both the bandwidth and the
//! sensitivity norm are nonsmooth in the controller parameters; the solver is
//! a BFGS-SQP method with penalty steering that works with Clarke
//! subgradients, optionally replacing each subgradient set by its min-norm
//! element (the steepest-descent direction).

pub mod controller;
pub mod error;
pub mod freq;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod nsopt;
pub mod plants;
pub mod subgrad;

pub use error::{Error, Result};
