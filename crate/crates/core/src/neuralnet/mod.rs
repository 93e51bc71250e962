//! Dense networks with batch normalization, MSE loss, backpropagation and Adam.
//!
//! Batch normalization sits between a block's affine transform and its
//! activation. All arithmetic is f64.

mod adam;
mod matrix;
mod network;

pub use adam::AdamState;
pub use matrix::Matrix;
pub use network::{
    mse_loss, row_mse, Activation, BatchNormLayer, Block, BlockGrads, DenseLayer, Forward,
    Gradients, LayerSpec, Mode, Network,
};
