//! Signal-processing core for model-order estimation under coherent
//! multipath.

pub mod association;
pub mod channel;
pub mod covariance;
pub mod dataset;
pub mod eigen;
pub mod error;
pub mod label;
pub mod manifold;
pub mod moe;
pub mod music;
pub mod waveform;

pub use error::{Error, Result};
