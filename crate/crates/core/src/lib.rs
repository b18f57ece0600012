//! Unsupervised moving-target detection in infrared video.
//!
//! A pair of hourglass 3-d CNNs is trained jointly without labels: one
//! produces a per-pixel moving-target mask over a frame sequence, the
//! other a static pseudo-background, coupled by a masked squared-error
//! loss with a constant masking cost. A supervised twin trained on
//! synthetic labels serves as the benchmark. Everything runs on a small
//! from-scratch tensor/autodiff core.

pub mod autodiff;
pub mod conv;
pub mod error;
pub mod eval;
pub mod jht;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod panel;
pub mod pipeline;
pub mod pool;
pub mod presets;
pub mod scene;
pub mod tensor;

pub use autodiff::no_grad;
pub use error::TensorError;
pub use optim::Adam;
pub use pool::PoolIndices;
pub use tensor::Tensor;
