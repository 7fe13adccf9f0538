//! Attention layers, encodings and the decoder-only transformer.

mod decode;
mod layer;
mod matrix;
mod positional;
mod random;
mod transformer;
mod weight;

pub use decode::{decode_autoregressive, generate, DecodeMode, DecodeState, Generation};
pub use layer::{
    layer_forward, Activation, Affine, AttentionLayer, Mlp, Nonlinearity, LAYER_NORM_EPS,
};
pub(crate) use layer::MlpTrace;
pub use matrix::Matrix;
pub use positional::{PositionalEncoding, DEFAULT_MAX_OFFSET};
pub(crate) use positional::OffsetCache;
pub use random::{random_model, ArchitectureConfig, AttentionKind, PositionalKind};
pub use transformer::{
    check_compactness, transformer_forward, CompactnessReport, Embedding, PositionTable, Readout,
    TransformerModel,
};
pub use weight::{Bilinear, WeightFunction, SCORE_CLAMP};
pub(crate) use weight::{rotary_transpose_acc, rotate_into};
