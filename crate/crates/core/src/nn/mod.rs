//! A small deterministic neural-network engine: dense and convolutional
//! layers, ReLU, flatten, two classification losses, reverse-mode gradients
//! (parameters and inputs), SGD with momentum, and a binary checkpoint
//! format.

mod io;
mod layer;
mod loss;
mod model;
mod train;

pub use io::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use layer::{Layer, LayerGrads, LayerSpec};
pub use loss::{loss, loss_and_grad, softmax_rows, LossKind};
pub use model::{mlp_arch, small_cnn_arch, ForwardTrace, Gradients, Model};
pub use train::{sgd_train, TrainConfig};
