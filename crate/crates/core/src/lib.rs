//! Learning feedback controls for non-Markovian stochastic control problems
//! with Neural RDE policies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diffcore;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod noise;
pub mod policies;
pub mod problems;
pub mod signature;
pub mod training;
pub use error::{Error, Result};
