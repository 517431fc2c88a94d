//! Minimal reverse-mode differentiation with the handful of layers the
//! classifier needs: valid 1-D convolution, max-pooling, GRU cells, dense
//! layers, softmax, weighted cross-entropy and gradient reversal.

mod tape;
mod tensor;

pub use tape::{Activation, Gradients, GrlConfig, GruParams, NodeId, Tape, LOG_CLAMP};
pub use tensor::Tensor;
