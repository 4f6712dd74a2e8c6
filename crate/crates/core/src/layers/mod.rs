//! Network layers evaluated on any [`Backend`](crate::slot_engine::Backend).

pub mod activation;
pub mod conv;
pub mod dense;
pub mod model;
pub mod pack;
pub mod pipeline;

pub use activation::{
    apply_activation, fit_tanh_poly8, relu_approx, tanh_poly, ActivationKind, ActivationSpec, RELU_DEAD_BAND,
    TANH_RANGE,
};
pub use conv::{apply_stride, conv2d_freq, filter_spectrum, ConvKernel, ConvSpec, SpectralGeometry};
pub use dense::{action_head, dense, flatten_dense};
pub use model::{ArchConfig, ConvDims, DenseWeights, ModelConfig, ModelWeights, Tensor, LATENT_DIM};
pub use pack::{pack_input, pack_vector, unpack_vector, Frame};
pub use pipeline::{Block, BlockKind, EncryptedModel, State};
