//! Virtual energy tank passivization of reinforcement-learning policies.
//!
//! The crate simulates a torque-controlled pendulum, accounts for the
//! energy its actuator injects with a discrete-time tank, and trains
//! soft actor-critic agents with or without the tank in the loop.

pub mod checkpoint;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod experiment;
pub mod neural;
pub mod passivize;
pub mod sac;
pub mod tank;

pub use error::{Error, Result};
