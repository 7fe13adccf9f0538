use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::alphabet::Token;
use crate::error::{Error, Result};
use crate::numeric::RngStream;

/// How a chosen position gets its new symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplacementRule {
    /// `0 ↔ 1`; binary alphabets only.
    FlipBinary,
    /// Uniform over the symbols different from the current one.
    UniformDifferentSymbol,
}

impl ReplacementRule {
    pub fn for_vocab(vocab: usize) -> Self {
        if vocab == 2 {
            ReplacementRule::FlipBinary
        } else {
            ReplacementRule::UniformDifferentSymbol
        }
    }

    fn replace<R: Rng>(self, current: Token, vocab: usize, rng: &mut R) -> Token {
        match self {
            ReplacementRule::FlipBinary => 1 - current,
            ReplacementRule::UniformDifferentSymbol => {
                let pick = rng.random_range(0..vocab - 1);
                if pick >= current {
                    pick + 1
                } else {
                    pick
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    /// Sorted, distinct, 1-based.
    pub positions: Vec<usize>,
    pub rule: ReplacementRule,
    pub protect_last: bool,
}

/// Number of perturbed positions at level `γ` for a word of length `len`:
/// `max(1, ⌊γ·(len − 1)⌋)`.
pub fn nts_count(gamma: f64, len: usize) -> usize {
    // the tolerance keeps e.g. 0.29·100 from flooring to 28
    let raw = (gamma * (len.saturating_sub(1)) as f64 + 1e-9).floor() as usize;
    raw.max(1).min(len.saturating_sub(1))
}

fn check_rule(rule: ReplacementRule, vocab: usize) -> Result<()> {
    match rule {
        ReplacementRule::FlipBinary if vocab != 2 => Err(Error::invalid(format!(
            "flip-binary needs a binary alphabet, got {vocab} symbols"
        ))),
        _ if vocab < 2 => Err(Error::invalid("cannot perturb over a one-symbol alphabet")),
        _ => Ok(()),
    }
}

/// Replaces the symbols at the given 1-based positions.
pub fn apply_positions(
    seq: &[Token],
    positions: &[usize],
    rule: ReplacementRule,
    vocab: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Token>> {
    check_rule(rule, vocab)?;
    let mut out = seq.to_vec();
    for &p in positions {
        if p == 0 || p > seq.len() {
            return Err(Error::invalid(format!(
                "position {p} outside 1..={}",
                seq.len()
            )));
        }
        if out[p - 1] >= vocab {
            return Err(Error::TokenOutOfAlphabet(out[p - 1].to_string()));
        }
        out[p - 1] = rule.replace(out[p - 1], vocab, rng);
    }
    Ok(out)
}

/// Changes exactly `count` distinct positions among `1..len−1`, chosen
/// uniformly without replacement; the last symbol is never touched.
pub fn perturb(
    seq: &[Token],
    count: usize,
    rule: ReplacementRule,
    vocab: usize,
    rng: &RngStream,
) -> Result<(Vec<Token>, PerturbationPlan)> {
    let free = seq.len().saturating_sub(1);
    if count > free {
        return Err(Error::invalid(format!(
            "cannot perturb {count} positions of a length-{} word with the last protected",
            seq.len()
        )));
    }
    let mut r = rng.rng();
    let mut positions: Vec<usize> = index::sample(&mut r, free, count)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    positions.sort_unstable();
    let out = apply_positions(seq, &positions, rule, vocab, &mut r)?;
    Ok((
        out,
        PerturbationPlan {
            positions,
            rule,
            protect_last: true,
        },
    ))
}

/// A uniformly random ordering of the positions `1..len−1`; taking its
/// first `c` entries gives nested uniform position sets across levels.
pub fn random_order(len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let free = len.saturating_sub(1);
    index::sample(rng, free, free)
        .into_iter()
        .map(|i| i + 1)
        .collect()
}
