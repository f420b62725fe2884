//! Quadrotor neural position control, end to end: a rigid-body simulator, a
//! classical cascade, PPO training, a frozen binary model format, an
//! allocation-free inference runtime and a small pub/sub flight stack.

pub mod bench;
pub mod cascade;
pub mod config;
pub mod error;
pub mod flight;
pub mod middleware;
pub mod modelpack;
pub mod observation;
pub mod runtime;
pub mod training;
pub mod vehicle;

pub use error::{Error, Result};
