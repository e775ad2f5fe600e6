//! Message-passing convolutions, the classifier head and the neighborhood
//! multi-head attention layer.

mod attention;
mod checkpoint;
mod context;
mod conv;
mod head;
mod model;

pub use attention::{pe_inject, AttentionRecord, AttentionVars, GkedmAttentionLayer, HeadRecord, HeadVars};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use context::GraphContext;
pub use conv::{Activation, GcnConv, SageConv};
pub use head::ClassifierHead;
pub use model::{ArchSpec, ConvKind, ConvLayer, Enhancement, GnnModel, ModelOutput};

use rand::Rng;

use crate::tensor::Tensor;

/// Anything holding trainable tensors. `params` and `params_mut` list the
/// tensors in the same order the layer binds them onto a tape.
pub trait Module {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }
}

/// Glorot-uniform `[fan_in × fan_out]` matrix with gain 1.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("glorot shape")
}
