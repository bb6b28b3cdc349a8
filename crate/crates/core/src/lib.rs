//! Simulation and receiver for multihop amplify-and-forward OFDM over
//! doubly-selective channels.
//!
//! The receiver models the end-to-end channel with a generalized complex
//! exponential basis expansion, learns a sparse set of basis coefficients by
//! variational Bayesian inference, and detects data with a banded Viterbi
//! search that accounts for channel uncertainty.

pub mod bem;
pub mod error;
pub mod fading;
pub mod harness;
pub mod init;
pub mod linalg;
pub mod ofdm;
pub mod random;
pub mod selftest;
pub mod relay;
pub mod special;
pub mod vi;
pub mod viterbi;

pub use error::{Error, Result};

/// Complex sample type used throughout.
pub type C64 = num_complex::Complex64;
