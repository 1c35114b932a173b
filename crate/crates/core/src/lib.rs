//! Reverse- and forward-engineering of discrete-time linear systems that
//! secretly run first-order optimization algorithms.
//!
//! A system `x_{k+1} = A x_k + C w` is tested for being a gradient-descent
//! iteration ([`classify::classify_o`]) or a primal-dual gradient iteration
//! ([`classify::classify_s`]); the implied problem is recovered, an accelerated
//! method is expressed as extra dynamics `Delta u_k` ([`redesign`]), and the
//! predicted convergence rates are certified against simulated trajectories
//! ([`rates`], [`simulate`]).
#![no_std]

extern crate alloc;

pub mod classify;
pub mod error;
pub mod linalg;
pub mod model;
pub mod rates;
pub mod redesign;
pub mod scenario;
pub mod simulate;

pub use error::{Error, Result};
pub use linalg::{Matrix, Tolerances, Vector};
pub use model::{
    FunctionClassParams, LtiSystem, PartitionedLtiSystem, QuadraticObjective, SaddleProblem,
    Trajectory,
};
