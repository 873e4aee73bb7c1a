//! Convolutional encoder-decoder with hand-written backward passes.
//!
//! Tensors are NHWC. Every layer caches what its backward pass needs during
//! a training-mode forward and consumes that cache on `backward`; calling
//! `backward` twice, or without a forward, is a [`crate::Error::StaleCache`].

mod activation;
mod adam;
mod block;
mod checkpoint;
mod conv;
mod loss;
mod network;
mod norm;

pub use activation::LeakyRelu;
pub use adam::{lr_at_epoch, AdamState, LrSchedule};
pub use block::{Block, CenterCrop, LinearOp, ResidualBlock};
pub use checkpoint::{Checkpoint, CrfSettings, EpochStats};
pub use conv::{conv2d, conv2d_kernel_grad, conv2d_transpose, Conv2d, ConvGeom, ConvTranspose2d, Padding};
pub use loss::loss_l2;
pub use network::{predict, LayerSpec, Network, NetworkSpec};
pub use norm::BatchNorm;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated, caches kept.
    Train,
    /// Running statistics, no caches: inference only.
    Eval,
    /// Running statistics with caches, for differentiating the frozen
    /// network.
    Frozen,
}

/// Trainable tensor plus its accumulated gradient.
///
/// Serializes as the value alone; the gradient comes back zeroed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Tensor", into = "Tensor")]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

impl From<Tensor> for Param {
    fn from(value: Tensor) -> Self {
        Param::new(value)
    }
}

impl From<Param> for Tensor {
    fn from(p: Param) -> Self {
        p.value
    }
}

/// Shape of an NHWC tensor as `(n, h, w, c)`; panics on other ranks.
pub(crate) fn nhwc(t: &Tensor) -> (usize, usize, usize, usize) {
    match t.shape() {
        [n, h, w, c] => (*n, *h, *w, *c),
        s => panic!("expected NHWC tensor, got {s:?}"),
    }
}
