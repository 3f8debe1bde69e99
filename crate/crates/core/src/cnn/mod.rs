//! A small from-scratch convolutional network for dish colors.
//!
//! Activations are row-major `[height, width, channels]` tensors. The
//! classifier is three valid convolutions (ReLU after each, 2x2 max pooling
//! after the first two) followed by a fully connected softmax layer.

pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use layers::{Conv2d, Dense, Layer, Network};
pub use model::{Architecture, CnnModel};
pub use tensor::Tensor;
pub use train::{augment, train, EpochLog, TrainConfig, TrainOutcome};
