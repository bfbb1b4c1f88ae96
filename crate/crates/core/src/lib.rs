//! Gradient-enhanced ("Sobolev") training of small ReLU networks on responses
//! and their input sensitivities, with adaptive residual weighting of the
//! response and sensitivity loss terms, and a seeded multi-run experiment
//! harness for comparing weighting modes.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod loss;
pub mod mathcore;
pub mod network;
pub mod optim;
pub mod problems;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
