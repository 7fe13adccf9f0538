use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecodeState, TransformerModel};
use crate::numeric::{argmax_with_margin, Dist};
use crate::sequence::Token;

/// Prefix used for text models in the perturbation-sensitivity protocols.
pub const NTS_INSTRUCTION: &str = "Complete the sequence with 0s and 1s:";
/// Prefix used for text models in the periodic-continuation protocol.
pub const PERIODIC_INSTRUCTION: &str = "Complete the following periodic sequence with 0s and 1s:";

/// What a model says about the next token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Probability of each alphabet symbol; may sum to less than 1 when the
    /// model's vocabulary is larger than the alphabet.
    pub probs: Vec<f64>,
    /// Known mass on tokens outside the alphabet.
    pub other: f64,
    /// Greedy next token, `None` if it lies outside the alphabet.
    pub token: Option<Token>,
    /// Top-1 minus top-2 probability over everything the model reported.
    pub margin: f64,
}

impl Prediction {
    pub fn from_dist(dist: &Dist) -> Self {
        let (token, margin) = dist.argmax_with_margin();
        Self {
            probs: dist.probs().to_vec(),
            other: 0.0,
            token: Some(token),
            margin,
        }
    }

    pub fn prob(&self, token: Token) -> f64 {
        self.probs.get(token).copied().unwrap_or(0.0)
    }
}

/// A prompt-to-distribution map over a small alphabet.
///
/// Local models ignore the instruction; text models prepend it to the
/// rendered tokens.
pub trait NextTokenModel: Send + Sync {
    fn vocab(&self) -> usize;

    fn predict(&self, instruction: &str, prompt: &[Token]) -> Result<Prediction>;

    /// Greedy continuation: entry `s` is the prediction after the prompt
    /// and the first `s` generated tokens. Stops early after a token outside
    /// the alphabet.
    fn continue_greedy(
        &self,
        instruction: &str,
        prompt: &[Token],
        steps: usize,
    ) -> Result<Vec<Prediction>> {
        let mut seq = prompt.to_vec();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let p = self.predict(instruction, &seq)?;
            let next = p.token;
            out.push(p);
            match next {
                Some(t) => seq.push(t),
                None => break,
            }
        }
        Ok(out)
    }

    fn describe(&self) -> String;
}

impl NextTokenModel for TransformerModel {
    fn vocab(&self) -> usize {
        TransformerModel::vocab(self)
    }

    fn predict(&self, _instruction: &str, prompt: &[Token]) -> Result<Prediction> {
        Ok(Prediction::from_dist(&self.forward(prompt)?))
    }

    fn continue_greedy(
        &self,
        _instruction: &str,
        prompt: &[Token],
        steps: usize,
    ) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(steps);
        if steps == 0 {
            return Ok(out);
        }
        let mut state = DecodeState::new(self);
        let mut dist = state.prefill(prompt)?;
        for s in 0..steps {
            let p = Prediction::from_dist(&dist);
            let next = p.token.expect("local models stay in the alphabet");
            out.push(p);
            if s + 1 < steps {
                dist = state.push(next)?;
            }
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        format!("transformer d={} k={}", self.dim, self.layers.len())
    }
}

type StubFn = dyn Fn(&[Token]) -> Vec<f64> + Send + Sync;

/// A model given by a closure from prompt to probabilities; used for
/// oracle and control models.
pub struct StubModel {
    name: String,
    vocab: usize,
    f: Box<StubFn>,
}

impl StubModel {
    pub fn new(
        name: impl Into<String>,
        vocab: usize,
        f: impl Fn(&[Token]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            vocab,
            f: Box::new(f),
        }
    }

    /// Always predicts `token` with probability 1.
    pub fn constant(vocab: usize, token: Token) -> Self {
        Self::new(format!("constant-{token}"), vocab, move |_| {
            Dist::point_mass(vocab, token).into_vec()
        })
    }

    /// Continues any prompt ending in `(0^{p−1}1)^r 0` with period `p`, and
    /// any all-zero prompt with 0.
    pub fn period_oracle() -> Self {
        Self::new("period-oracle", 2, |prompt: &[Token]| {
            let ones: Vec<usize> = prompt
                .iter()
                .enumerate()
                .filter(|(_, t)| **t == 1)
                .map(|(i, _)| i)
                .collect();
            let period = match ones.as_slice() {
                [.., a, b] => Some((b - a, *b)),
                [b] => Some((b + 1, *b)),
                [] => None,
            };
            let next = period.map_or(0, |(p, b)| usize::from((prompt.len() - b) % p == 0));
            Dist::point_mass(2, next).into_vec()
        })
    }
}

impl fmt::Debug for StubModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StubModel").field("name", &self.name).finish()
    }
}

impl NextTokenModel for StubModel {
    fn vocab(&self) -> usize {
        self.vocab
    }

    fn predict(&self, _instruction: &str, prompt: &[Token]) -> Result<Prediction> {
        let probs = (self.f)(prompt);
        if probs.len() != self.vocab {
            return Err(Error::DimensionMismatch {
                expected: self.vocab,
                found: probs.len(),
            });
        }
        let (token, margin) = argmax_with_margin(&probs);
        Ok(Prediction {
            probs,
            other: 0.0,
            token: Some(token),
            margin,
        })
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}
