//! Numeric primitives shared by every module: l∞ distances, probability
//! vectors, a stabilized softmax, and splittable seeded randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating that a probability vector sums to one.
pub const DIST_SUM_TOL: f64 = 1e-9;

/// Maximum absolute coordinate difference between two vectors.
pub fn linf_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// l∞ norm of a vector.
pub fn linf_norm(u: &[f64]) -> f64 {
    u.iter().map(|a| a.abs()).fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn all_finite(u: &[f64]) -> bool {
    u.iter().all(|x| x.is_finite())
}

/// A probability distribution over the token indices of an alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dist(Vec<f64>);

impl Dist {
    /// Validates entries in `[0, 1]` summing to one within [`DIST_SUM_TOL`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "distribution entries must lie in [0, 1]: {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DIST_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "distribution sums to {total}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn uniform(size: usize) -> Self {
        Self(vec![1.0 / size as f64; size])
    }

    pub fn point_mass(size: usize, index: usize) -> Self {
        let mut probs = vec![0.0; size];
        probs[index] = 1.0;
        Self(probs)
    }

    /// Builds a distribution without validation. Callers guarantee the
    /// invariants (used on the hot path after softmax or convex mixing).
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the most likely token (lowest index on ties) and the gap
    /// between the top two probabilities.
    pub fn argmax_with_margin(&self) -> (usize, f64) {
        argmax_with_margin(&self.0)
    }
}

/// Softmax with max-subtraction; entries are `exp(l - max) / sum`.
pub fn softmax(logits: &[f64]) -> Dist {
    Dist(softmax_vec(logits))
}

pub(crate) fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of an empty vector");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Top index (ties resolved toward the lowest index) and `top1 - top2`.
/// A single-entry vector has margin equal to its only value.
pub fn argmax_with_margin(probs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    let runner_up = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, p)| *p)
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = if runner_up.is_finite() {
        probs[best] - runner_up
    } else {
        probs[best]
    };
    (best, margin)
}

/// A seeded, splittable random stream.
///
/// The pair `(seed, stream)` selects a ChaCha12 keystream; `fork` derives
/// child streams by mixing the child index into the stream id, so samples
/// drawn from forked streams do not depend on evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn fork(&self, child: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(child.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
