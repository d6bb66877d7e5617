//! Output-feedback IDA-PBC for two-dimensional systems, specialized to the
//! Buck, Boost and Buck-Boost DC-DC converters.
//!
//! The crate covers the normalized converter models, the voltage-feedback
//! laws, numerical certification of the stability conditions, closed-form
//! Lyapunov functions with region-of-attraction estimation, a least-squares
//! load estimator with finite convergence time, and a fixed-step
//! closed-loop simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contour;
pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod estimator;
pub mod lyapunov;
pub mod models;
pub mod ode;
pub mod plot;
pub mod quadrature;
pub mod sim;
pub mod verifier;

pub use error::{Error, Result};
