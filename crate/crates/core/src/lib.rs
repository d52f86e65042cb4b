//! Reconstruction-based time-series anomaly detection with hyperbolic
//! uncertainty.
//!
//! Windows of a signal are encoded and decoded by LSTM mappings trained
//! against two Wasserstein critics. The input window and its reconstruction
//! are projected into the Poincaré ball by a shared hyperbolic layer; their
//! geodesic distance is the reconstruction error, and the radius of the
//! reconstruction gives a certainty that scales the anomaly score.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod hypgeo;
pub mod nets;
pub mod optim;
pub mod pipeline;
pub mod scoring;
pub mod series;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
