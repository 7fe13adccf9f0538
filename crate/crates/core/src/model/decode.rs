use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::attend;
use super::positional::OffsetCache;
use super::transformer::TransformerModel;
use crate::error::{Error, Result};
use crate::numeric::{all_finite, softmax_vec, Dist, RngStream};
use crate::sequence::Token;

struct LayerCache {
    keys: Vec<f64>,
    values: Vec<f64>,
    outputs: Vec<f64>,
    offsets: OffsetCache,
}

/// Incremental evaluation state. Layer outputs at earlier positions never
/// change when tokens are appended, so each step only computes the new
/// position; attention weights are recomputed against the cached keys.
pub struct DecodeState<'m> {
    model: &'m TransformerModel,
    tokens: Vec<Token>,
    layers: Vec<LayerCache>,
}

impl<'m> DecodeState<'m> {
    pub fn new(model: &'m TransformerModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| LayerCache {
                keys: Vec::new(),
                values: Vec::new(),
                outputs: Vec::new(),
                offsets: OffsetCache::new(&l.positional, 1),
            })
            .collect();
        Self {
            model,
            tokens: Vec::new(),
            layers,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Cached outputs of layer `layer` at positions `1..=len`, flattened.
    pub fn layer_outputs(&self, layer: usize) -> &[f64] {
        &self.layers[layer].outputs
    }

    /// Appends one token and returns `T` on the extended prompt.
    pub fn push(&mut self, token: Token) -> Result<Dist> {
        let model = self.model;
        if !model.alphabet.contains(token) {
            return Err(Error::TokenOutOfAlphabet(token.to_string()));
        }
        let d = model.dim;
        let j = self.tokens.len();
        let mut x = model.embedding.embed(token, j + 1);
        let mut a = vec![0.0; d];
        for (layer, cache) in model.layers.iter().zip(self.layers.iter_mut()) {
            cache.offsets.ensure(&layer.positional, j + 1);
            cache.keys.extend(layer.weight.project_key(&x));
            let mut v = vec![0.0; d];
            layer.value.apply_into(&x, &mut v);
            cache.values.extend(v);
            let q = layer.weight.project_query(&x);
            attend(&layer.weight, &q, &cache.keys, &cache.values, &cache.offsets, j, d, &mut a);
            let mut y = vec![0.0; d];
            layer.activation.apply_into(&a, &x, &mut y);
            if !all_finite(&y) {
                return Err(Error::NonFinite(format!("layer output at position {}", j + 1)));
            }
            cache.outputs.extend_from_slice(&y);
            x = y;
        }
        self.tokens.push(token);
        Ok(model.readout.apply(&x, model.vocab()))
    }

    pub fn prefill(&mut self, tokens: &[Token]) -> Result<Dist> {
        if tokens.is_empty() {
            return Err(Error::invalid("prompt must be nonempty"));
        }
        let mut last = None;
        for t in tokens {
            last = Some(self.push(*t)?);
        }
        Ok(last.expect("nonempty prompt"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum DecodeMode {
    Greedy,
    Sampled { temperature: f64, rng: RngStream },
}

/// Generated tokens together with the distribution each one was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<Token>,
    pub dists: Vec<Dist>,
}

pub fn decode_autoregressive(
    model: &TransformerModel,
    prompt: &[Token],
    steps: usize,
    mode: DecodeMode,
) -> Result<Vec<Token>> {
    Ok(generate(model, prompt, steps, mode)?.tokens)
}

pub fn generate(
    model: &TransformerModel,
    prompt: &[Token],
    steps: usize,
    mode: DecodeMode,
) -> Result<Generation> {
    if let DecodeMode::Sampled { temperature, .. } = mode {
        if !(temperature > 0.0) {
            return Err(Error::invalid("sampling temperature must be positive"));
        }
    }
    let mut state = DecodeState::new(model);
    let mut dist = state.prefill(prompt)?;
    let mut rng = match mode {
        DecodeMode::Sampled { rng, .. } => Some(rng.rng()),
        DecodeMode::Greedy => None,
    };
    let mut out = Generation {
        tokens: Vec::with_capacity(steps),
        dists: Vec::with_capacity(steps),
    };
    for step in 0..steps {
        let next = match (&mode, rng.as_mut()) {
            (DecodeMode::Sampled { temperature, .. }, Some(r)) => {
                sample_tempered(&dist, *temperature, r)
            }
            _ => dist.argmax_with_margin().0,
        };
        out.tokens.push(next);
        out.dists.push(dist);
        if step + 1 < steps {
            dist = state.push(next)?;
        } else {
            break;
        }
    }
    Ok(out)
}

fn sample_tempered<R: Rng>(dist: &Dist, temperature: f64, rng: &mut R) -> Token {
    let logits: Vec<f64> = dist
        .probs()
        .iter()
        .map(|p| p.max(f64::MIN_POSITIVE).ln() / temperature)
        .collect();
    let probs = softmax_vec(&logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
