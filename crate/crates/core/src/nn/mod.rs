//! Minimal layer engine with exact backpropagation.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
pub mod ops;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{finite_diff_check, max_relative_error, numeric_gradient, DEFAULT_EPSILON};
pub use graph::{InputSpec, LayerSpec, ModelGraph, ParamSet, Trace};
pub use ops::{
    conv1d_apply, dense_apply, dropout_apply, lstm_step, maxpool1d_apply, softmax, softmax_cross_entropy,
    DropoutMode, LstmParams,
};
pub use tensor::Tensor;
