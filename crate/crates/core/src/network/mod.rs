//! Layer descriptors, lowering to GEMM, and the toy networks used for
//! end-to-end checks.

mod dataset;
mod descriptor;
mod im2col;
mod model;
mod train;

pub use dataset::{gaussian_blobs, patterned_images, Dataset, SplitDataset};
pub use descriptor::{
    lower_to_gemm, ConvSpec, LayerActivation, LayerDescriptor, LayerKind, NetworkDescriptor, TensorShape,
};
pub use im2col::{col2im, im2col, rows_to_tensor, tensor_to_rows, Tensor};
pub use model::{accuracy, batch_shape, forward, forward_against, predict_classes, ForwardOutput, ToyModel};
pub use train::{evaluate, train_toy, TrainConfig, TrainReport};
