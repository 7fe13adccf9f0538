use serde::{Deserialize, Serialize};

use super::layer::AttentionLayer;
use super::matrix::{b64_vec, Matrix};
use crate::error::{Error, Result};
use crate::numeric::{linf_norm, softmax_vec, Dist};
use crate::sequence::{Alphabet, Token};

/// Position-dependent rows of an input embedding, indexed so that only
/// finitely many distinct rows exist: positions `1..=preamble` get their own
/// row, later positions cycle through `period` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionTable {
    pub preamble: usize,
    pub period: usize,
    pub rows: Matrix,
}

impl PositionTable {
    pub fn row_index(&self, i: usize) -> usize {
        debug_assert!(i >= 1);
        if i <= self.preamble {
            i - 1
        } else {
            self.preamble + (i - 1 - self.preamble) % self.period
        }
    }
}

/// `e(σ, i) = token[σ] + position[row(i)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub token: Matrix,
    pub position: Option<PositionTable>,
}

impl Embedding {
    pub fn embed_into(&self, token: Token, i: usize, out: &mut [f64]) {
        out.copy_from_slice(self.token.row(token));
        if let Some(table) = &self.position {
            for (o, p) in out.iter_mut().zip(table.rows.row(table.row_index(i))) {
                *o += p;
            }
        }
    }

    pub fn embed(&self, token: Token, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.token.cols()];
        self.embed_into(token, i, &mut out);
        out
    }

    /// Largest l∞ norm over all tokens and positions `1..=horizon`.
    pub fn max_norm(&self, horizon: usize) -> f64 {
        let reachable = match &self.position {
            None => 1,
            Some(t) => horizon.min(t.preamble + t.period),
        };
        (0..self.token.rows())
            .flat_map(|tok| (1..=reachable.max(1)).map(move |i| (tok, i)))
            .map(|(tok, i)| linf_norm(&self.embed(tok, i)))
            .fold(0.0, f64::max)
    }
}

/// Continuous map `P: R^d -> Δ(Σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Readout {
    /// `softmax(W y + b)`
    Softmax {
        weight: Matrix,
        #[serde(with = "b64_vec")]
        bias: Vec<f64>,
    },
    /// Convex lookup: block `y[offset..offset+|Σ|]` clamped to `[0, 1]`
    /// selects a mixture of `rows`; missing mass goes to the uniform
    /// distribution. Exact for one-hot blocks.
    Lookup { offset: usize, rows: Matrix },
    /// Ignores `y`.
    Constant {
        #[serde(with = "b64_vec")]
        probs: Vec<f64>,
    },
    /// Soft-min selection over candidates: weights `softmax(-β·rate_t)`
    /// mix the candidates' next-token blocks, then `softmax(τ·mix)`.
    SoftMinSelect {
        rate_offset: usize,
        next_offset: usize,
        candidates: usize,
        select_sharpness: f64,
        output_sharpness: f64,
    },
}

impl Readout {
    pub fn apply(&self, y: &[f64], vocab: usize) -> Dist {
        Dist::from_raw(self.apply_vec(y, vocab))
    }

    pub(crate) fn apply_vec(&self, y: &[f64], vocab: usize) -> Vec<f64> {
        match self {
            Self::Softmax { weight, bias } => {
                let mut logits = weight.matvec(y);
                for (l, b) in logits.iter_mut().zip(bias) {
                    *l += b;
                }
                softmax_vec(&logits)
            }
            Self::Lookup { offset, rows } => {
                let coeffs: Vec<f64> = y[*offset..offset + vocab]
                    .iter()
                    .map(|c| c.clamp(0.0, 1.0))
                    .collect();
                let total: f64 = coeffs.iter().sum();
                let mut out = vec![0.0; vocab];
                for (c, row) in coeffs.iter().zip(0..vocab) {
                    for (o, r) in out.iter_mut().zip(rows.row(row)) {
                        *o += c * r;
                    }
                }
                if total >= 1.0 {
                    out.iter_mut().for_each(|o| *o /= total);
                } else {
                    let fill = (1.0 - total) / vocab as f64;
                    out.iter_mut().for_each(|o| *o += fill);
                }
                out
            }
            Self::Constant { probs } => probs.clone(),
            Self::SoftMinSelect {
                rate_offset,
                next_offset,
                candidates,
                select_sharpness,
                output_sharpness,
            } => {
                let neg_rates: Vec<f64> = y[*rate_offset..rate_offset + candidates]
                    .iter()
                    .map(|r| -select_sharpness * r)
                    .collect();
                let select = softmax_vec(&neg_rates);
                let mut mix = vec![0.0; vocab];
                for (t, pi) in select.iter().enumerate() {
                    let block = &y[next_offset + t * vocab..next_offset + (t + 1) * vocab];
                    for (m, b) in mix.iter_mut().zip(block) {
                        *m += pi * b;
                    }
                }
                let logits: Vec<f64> = mix.iter().map(|m| output_sharpness * m).collect();
                softmax_vec(&logits)
            }
        }
    }

    fn validate(&self, d: usize, vocab: usize) -> Result<()> {
        let ok = match self {
            Self::Softmax { weight, bias } => {
                weight.rows() == vocab && weight.cols() == d && bias.len() == vocab
            }
            Self::Lookup { offset, rows } => {
                offset + vocab <= d
                    && rows.rows() == vocab
                    && rows.cols() == vocab
                    && (0..vocab).all(|r| Dist::new(rows.row(r).to_vec()).is_ok())
            }
            Self::Constant { probs } => {
                probs.len() == vocab && Dist::new(probs.clone()).is_ok()
            }
            Self::SoftMinSelect {
                rate_offset,
                next_offset,
                candidates,
                ..
            } => {
                *candidates >= 1
                    && rate_offset + candidates <= d
                    && next_offset + candidates * vocab <= d
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("readout does not match model width or alphabet"))
        }
    }
}

/// A `d`-dimensional `k`-layer decoder-only transformer over `alphabet`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerModel {
    pub alphabet: Alphabet,
    pub dim: usize,
    pub embedding: Embedding,
    /// Declared l∞ bound on every input embedding vector.
    pub embedding_bound: f64,
    pub layers: Vec<AttentionLayer>,
    pub readout: Readout,
}

impl TransformerModel {
    pub fn vocab(&self) -> usize {
        self.alphabet.size()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, v) = (self.dim, self.vocab());
        if self.embedding.token.rows() != v || self.embedding.token.cols() != d {
            return Err(Error::invalid("token embedding shape must be |alphabet| x dim"));
        }
        if let Some(t) = &self.embedding.position {
            if t.period == 0 || t.rows.rows() != t.preamble + t.period || t.rows.cols() != d {
                return Err(Error::invalid("position table shape is inconsistent"));
            }
        }
        for layer in &self.layers {
            if layer.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: layer.dim(),
                });
            }
            layer.validate()?;
        }
        self.readout.validate(d, v)
    }

    /// `x_j = e(α_j, j)` for the whole prompt, flattened.
    pub(crate) fn embed_prompt(&self, tokens: &[Token]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::invalid("prompt must be nonempty"));
        }
        let d = self.dim;
        let mut xs = vec![0.0; tokens.len() * d];
        for (j, tok) in tokens.iter().enumerate() {
            if !self.alphabet.contains(*tok) {
                return Err(Error::TokenOutOfAlphabet(tok.to_string()));
            }
            self.embedding.embed_into(*tok, j + 1, &mut xs[j * d..(j + 1) * d]);
        }
        Ok(xs)
    }

    /// Outputs of every layer at every position (`layers.len() + 1` flat
    /// arrays, the first being the embeddings).
    pub fn layer_outputs(&self, tokens: &[Token]) -> Result<Vec<Vec<f64>>> {
        let n = tokens.len();
        let mut states = vec![self.embed_prompt(tokens)?];
        for layer in &self.layers {
            let next = layer.forward_flat(states.last().expect("nonempty"), n, 0)?;
            states.push(next);
        }
        Ok(states)
    }

    /// `T(α) = P(y_n)`. The final layer is evaluated only at position `n`.
    pub fn forward(&self, tokens: &[Token]) -> Result<Dist> {
        let n = tokens.len();
        let d = self.dim;
        let mut xs = self.embed_prompt(tokens)?;
        let k = self.layers.len();
        for (idx, layer) in self.layers.iter().enumerate() {
            let from = if idx + 1 == k { n - 1 } else { 0 };
            let ys = layer.forward_flat(&xs, n, from)?;
            if idx + 1 == k {
                let mut last = vec![0.0; n * d];
                last[(n - 1) * d..].copy_from_slice(&ys);
                xs = last;
            } else {
                xs = ys;
            }
        }
        Ok(self.readout.apply(&xs[(n - 1) * d..], self.vocab()))
    }

    /// `T(α_1..α_j)` for every `j`, read off one pass by prefix-monotonicity.
    pub fn forward_prefixes(&self, tokens: &[Token]) -> Result<Vec<Dist>> {
        let states = self.layer_outputs(tokens)?;
        let last = states.last().expect("nonempty");
        Ok(last
            .chunks(self.dim)
            .map(|y| self.readout.apply(y, self.vocab()))
            .collect())
    }
}

pub fn transformer_forward(model: &TransformerModel, tokens: &[Token]) -> Result<Dist> {
    model.forward(tokens)
}

/// Observed norms versus declared bounds up to a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactnessReport {
    pub horizon: usize,
    pub max_embedding_norm: f64,
    pub embedding_bound: f64,
    /// `(observed max, declared bound)` per layer.
    pub positional: Vec<(f64, f64)>,
    pub pass: bool,
}

pub fn check_compactness(model: &TransformerModel, horizon: usize) -> CompactnessReport {
    let horizon = horizon.max(1);
    let max_embedding_norm = model.embedding.max_norm(horizon);
    let positional: Vec<(f64, f64)> = model
        .layers
        .iter()
        .map(|l| (l.positional.max_norm(horizon), l.positional.declared_bound()))
        .collect();
    let pass = max_embedding_norm <= model.embedding_bound
        && positional.iter().all(|(seen, bound)| seen <= bound);
    CompactnessReport {
        horizon,
        max_embedding_norm,
        embedding_bound: model.embedding_bound,
        positional,
        pass,
    }
}
