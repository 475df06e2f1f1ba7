//! Switching multivariate Gaussian processes over a hidden semi-Markov chain: training,
//! explicit-duration filtering and adaptive sensor-group selection.

#![allow(clippy::needless_range_loop)]

pub mod circulant;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod gp_predict;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod monitor;
pub mod statespace;

pub use error::{Error, Result};
