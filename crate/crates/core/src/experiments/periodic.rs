use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::interface::{NextTokenModel, PERIODIC_INSTRUCTION};
use crate::error::{Error, Result};
use crate::sequence::{beta_block, Token};

pub const DEFAULT_PERIOD_RANGE: RangeInclusive<usize> = 2..=40;
pub const DEFAULT_REPEATS: [usize; 3] = [1, 4, 10];
pub const DEFAULT_STEPS: usize = 505;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicResult {
    pub p: usize,
    pub r: usize,
    pub steps: usize,
    /// Every one of the `steps` generated tokens matches the continuation.
    pub success: bool,
    /// Top-1 minus top-2 at the step where the first 1 is due.
    pub certainty: f64,
    /// 0-based index of the first wrong (or missing) generated token.
    pub first_mismatch: Option<usize>,
    /// `None` marks a token outside the alphabet, after which generation stops.
    pub generated: Vec<Option<Token>>,
}

/// The `steps` tokens that follow `(0^{p−1}1)^r 0`: `0^{p−2} 1 (0^{p−1} 1)…`.
pub fn expected_continuation(p: usize, steps: usize) -> Vec<Token> {
    // the prompt ends one symbol into a period
    (0..steps).map(|s| usize::from((s + 2) % p == 0)).collect()
}

pub fn periodic_eval<M: NextTokenModel + ?Sized>(
    model: &M,
    p: usize,
    r: usize,
    steps: usize,
) -> Result<PeriodicResult> {
    let prompt = beta_block(p, r)?;
    let probe = p - 2;
    let preds = model.continue_greedy(PERIODIC_INSTRUCTION, &prompt, steps.max(probe + 1))?;
    let expected = expected_continuation(p, steps);
    let first_mismatch = (0..steps).find(|&s| preds.get(s).and_then(|x| x.token) != Some(expected[s]));
    let certainty = preds.get(probe).map_or(0.0, |x| x.margin);
    Ok(PeriodicResult {
        p,
        r,
        steps,
        success: first_mismatch.is_none(),
        certainty,
        first_mismatch,
        generated: preds.iter().take(steps).map(|x| x.token).collect(),
    })
}

/// [`periodic_eval`] over every `(p, r)` pair, ordered by `p` then `r`.
pub fn periodic_grid<M: NextTokenModel + ?Sized>(
    model: &M,
    periods: &[usize],
    repeats: &[usize],
    steps: usize,
) -> Result<Vec<PeriodicResult>> {
    let pairs: Vec<(usize, usize)> = periods
        .iter()
        .flat_map(|p| repeats.iter().map(move |r| (*p, *r)))
        .collect();
    pairs
        .par_iter()
        .map(|&(p, r)| periodic_eval(model, p, r, steps))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPeriodScan {
    pub r: usize,
    pub steps: usize,
    /// One entry per `p` in `2..=p_max`.
    pub results: Vec<PeriodicResult>,
    /// Smallest `p` whose continuation fails.
    pub critical: Option<usize>,
}

impl CriticalPeriodScan {
    pub fn result(&self, p: usize) -> Option<&PeriodicResult> {
        self.results.iter().find(|x| x.p == p)
    }
}

pub fn critical_period<M: NextTokenModel + ?Sized>(
    model: &M,
    r: usize,
    p_max: usize,
    steps: usize,
) -> Result<CriticalPeriodScan> {
    if p_max < 2 {
        return Err(Error::invalid(format!("p_max must be at least 2, got {p_max}")));
    }
    let periods: Vec<usize> = (2..=p_max).collect();
    let results = periodic_grid(model, &periods, &[r], steps)?;
    let critical = results.iter().find(|x| !x.success).map(|x| x.p);
    Ok(CriticalPeriodScan {
        r,
        steps,
        results,
        critical,
    })
}
