//! End-to-end flow from raw array blocks to grouped directions, the
//! evaluation harnesses, and the `moe` command-line front end.

pub mod arrays;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod pipeline;

pub use arrays::ArrayPreset;
pub use error::{Error, Result};
pub use estimator::{ModelOrderEstimator, PredictedOrder};
pub use pipeline::{run_pipeline, simulate_scenario, PipelineOptions, PipelineReport};
