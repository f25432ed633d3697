//! Minimal dense-network core: layers, forward pass, losses,
//! backpropagation and optimizers. Just enough to train the small
//! classifiers that populate a model pool.

mod backprop;
mod loss;
mod model;
mod optim;

pub use backprop::{backward, backward_labels, Gradients};
pub use loss::{loss, one_hot, LossKind};
pub use model::{Activation, Layer, LayerSpec, Model, ModelMetadata};
pub use optim::{OptimizerKind, OptimizerState};

pub(crate) use model::forward_cached;
