//! Layer engine and classifiers for model-order estimation from covariance
//! features: residual CNN, MLP baseline, weighted cross-entropy, Adam.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use layers::Mode;
pub use network::{build_mlp, build_rcnn, count_parameters, ArchKind, ArchSpec, Network, Prediction};
pub use tensor::Tensor;
pub use train::{train, Adam, LabeledSet, TrainConfig, TrainReport};
