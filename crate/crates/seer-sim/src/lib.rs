//! seer-sim: a desk-scale microservice cluster pipeline — deterministic
//! queueing simulation with injectable resource contention, a learned
//! per-microservice QoS-violation predictor, online diagnosis of the
//! contended resource, and closed-loop allocation adjustment.

pub mod config;
pub mod error;
pub mod mitigator;
pub mod predictor;
pub mod sim;
pub mod trace;

pub use error::{Result, SeerError};
