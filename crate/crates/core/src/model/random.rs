use serde::{Deserialize, Serialize};

use super::layer::{Activation, Affine, AttentionLayer, Mlp, Nonlinearity};
use super::matrix::Matrix;
use super::positional::{PositionalEncoding, DEFAULT_MAX_OFFSET};
use super::transformer::{Embedding, Readout, TransformerModel};
use super::weight::{Bilinear, WeightFunction};
use crate::error::{Error, Result};
use crate::numeric::RngStream;
use crate::sequence::Alphabet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionalKind {
    Sinusoidal,
    RotaryRelative,
    ConstantZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    /// Additive positional term with sinusoidal/zero encodings, rotation
    /// with the rotary encoding.
    Softmax,
    /// Scalable softmax with `s = 1`.
    Ssmax,
}

/// Architecture of the standard trainable instantiation: token embedding,
/// dot-product attention, residual MLP, affine + softmax readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    #[serde(default)]
    pub alphabet: Alphabet,
    pub dim: usize,
    pub layers: usize,
    #[serde(default = "default_hidden_mult")]
    pub hidden_mult: usize,
    #[serde(default = "default_positional")]
    pub positional: PositionalKind,
    #[serde(default = "default_attention")]
    pub attention: AttentionKind,
    #[serde(default = "default_max_offset")]
    pub max_offset: usize,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub layer_norm: bool,
    /// Multiplier on the `1/sqrt(d)` init range.
    #[serde(default = "default_init_gain")]
    pub init_gain: f64,
}

fn default_hidden_mult() -> usize {
    2
}
fn default_positional() -> PositionalKind {
    PositionalKind::RotaryRelative
}
fn default_attention() -> AttentionKind {
    AttentionKind::Softmax
}
fn default_max_offset() -> usize {
    DEFAULT_MAX_OFFSET
}
fn default_nonlinearity() -> Nonlinearity {
    Nonlinearity::Gelu
}
fn default_init_gain() -> f64 {
    1.0
}

impl ArchitectureConfig {
    pub fn new(dim: usize, layers: usize) -> Self {
        Self {
            alphabet: Alphabet::binary(),
            dim,
            layers,
            hidden_mult: default_hidden_mult(),
            positional: default_positional(),
            attention: default_attention(),
            max_offset: default_max_offset(),
            nonlinearity: default_nonlinearity(),
            layer_norm: false,
            init_gain: default_init_gain(),
        }
    }
}

/// Parameters uniform in `±gain/sqrt(d)`, biases zero.
pub fn random_model(arch: &ArchitectureConfig, seed: u64) -> Result<TransformerModel> {
    let d = arch.dim;
    if d == 0 || arch.layers == 0 {
        return Err(Error::invalid("model needs dim >= 1 and at least one layer"));
    }
    let v = arch.alphabet.size();
    let h = (arch.hidden_mult * d).max(1);
    let mut rng = RngStream::new(seed).rng();
    let range = arch.init_gain / (d as f64).sqrt();
    let token = Matrix::random(v, d, 1.0, &mut rng);
    let embedding_bound = token.max_abs();
    let mut layers = Vec::with_capacity(arch.layers);
    for _ in 0..arch.layers {
        let positional = match arch.positional {
            PositionalKind::Sinusoidal => PositionalEncoding::sinusoidal(d),
            PositionalKind::RotaryRelative => PositionalEncoding::rotary(d, arch.max_offset),
            PositionalKind::ConstantZero => PositionalEncoding::ConstantZero { dim: d },
        };
        let bilinear = Bilinear {
            query: Matrix::random(d, d, range, &mut rng),
            key: Matrix::random(d, d, range, &mut rng),
            scale: 1.0 / (d as f64).sqrt(),
        };
        let rotary = arch.positional == PositionalKind::RotaryRelative;
        let weight = match (arch.attention, rotary) {
            (AttentionKind::Softmax, true) => WeightFunction::DotProductExpRotary { bilinear },
            (AttentionKind::Softmax, false) => WeightFunction::DotProductExp { bilinear },
            (AttentionKind::Ssmax, rotary) => WeightFunction::SsmaxScaled {
                bilinear,
                s: 1.0,
                rotary,
            },
        };
        let value = Affine {
            matrix: Matrix::random(d, d, range, &mut rng),
            bias: vec![0.0; d],
        };
        let mlp = Mlp {
            w1: Matrix::random(h, d, range, &mut rng),
            b1: vec![0.0; h],
            w2: Matrix::random(d, h, 1.0 / (h as f64).sqrt() * arch.init_gain, &mut rng),
            b2: vec![0.0; d],
            nonlinearity: arch.nonlinearity,
            layer_norm: arch.layer_norm,
        };
        layers.push(AttentionLayer {
            positional,
            weight,
            value,
            activation: Activation::ResidualMlp(mlp),
        });
    }
    let readout = Readout::Softmax {
        weight: Matrix::random(v, d, range, &mut rng),
        bias: vec![0.0; v],
    };
    let model = TransformerModel {
        alphabet: arch.alphabet.clone(),
        dim: d,
        embedding: Embedding {
            token,
            position: None,
        },
        embedding_bound,
        layers,
        readout,
    };
    model.validate()?;
    Ok(model)
}
