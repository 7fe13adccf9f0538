use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::interface::{NextTokenModel, NTS_INSTRUCTION};
use crate::constructive::verify_eventual_learning;
use crate::error::{Error, Result};
use crate::model::TransformerModel;
use crate::numeric::{linf_distance, RngStream};
use crate::sequence::{random_order, InfiniteSequenceSpec, ReplacementRule, Token};

/// One sample's nested perturbations: a random order of the positions
/// `1..n−1` and, for each, the symbol it is replaced with. Taking the first
/// `c` entries gives the variant with `c` changes.
struct NestedPerturbation {
    order: Vec<usize>,
    replacement: Vec<Token>,
}

impl NestedPerturbation {
    fn draw(base: &[Token], vocab: usize, stream: &RngStream) -> Self {
        let mut rng = stream.rng();
        let order = random_order(base.len(), &mut rng);
        let rule = ReplacementRule::for_vocab(vocab);
        let replacement = order
            .iter()
            .map(|&p| {
                let cur = base[p - 1];
                match rule {
                    ReplacementRule::FlipBinary => 1 - cur,
                    ReplacementRule::UniformDifferentSymbol => {
                        let pick = rng.random_range(0..vocab - 1);
                        if pick >= cur {
                            pick + 1
                        } else {
                            pick
                        }
                    }
                }
            })
            .collect();
        Self { order, replacement }
    }

    fn variant(&self, base: &[Token], count: usize) -> Vec<Token> {
        let mut out = base.to_vec();
        for (p, t) in self.order.iter().zip(&self.replacement).take(count) {
            out[p - 1] = *t;
        }
        out
    }
}

/// Number of changed positions at level `γ` in a length-`n` prompt,
/// `⌊γ(n−1)⌋`; zero for `γ = 0`.
fn level_count(gamma: f64, n: usize) -> usize {
    ((gamma * (n - 1) as f64 + 1e-9).floor() as usize).min(n - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusCell {
    pub gamma: f64,
    pub n: usize,
    pub count: usize,
    /// Max over samples of `∥T(α) − T(β)∥∞` with exactly `count` changes.
    pub d: f64,
    /// Running max of `d` over the levels up to this one.
    pub d_cummax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusTable {
    pub base: InfiniteSequenceSpec,
    pub samples: usize,
    pub seed: u64,
    /// Row-major: all `γ` for the first `n`, then the next `n`.
    pub cells: Vec<ModulusCell>,
}

impl ModulusTable {
    pub fn row(&self, n: usize) -> Vec<&ModulusCell> {
        self.cells.iter().filter(|c| c.n == n).collect()
    }

    pub fn get(&self, gamma: f64, n: usize) -> Option<&ModulusCell> {
        self.cells.iter().find(|c| c.n == n && c.gamma == gamma)
    }

    /// Whether `d` is non-decreasing in `γ` along every row.
    pub fn rows_monotone(&self) -> bool {
        let mut ns: Vec<usize> = self.cells.iter().map(|c| c.n).collect();
        ns.dedup();
        ns.iter().all(|n| self.row(*n).windows(2).all(|w| w[0].d <= w[1].d))
    }
}

/// Largest change of the output distribution over sampled prompts that
/// share the base's last token, per perturbation level and prompt length.
///
/// `gammas` are sorted ascending before use. Variants of one sample are
/// nested across levels.
pub fn continuity_modulus<M: NextTokenModel + ?Sized>(
    model: &M,
    base: &InfiniteSequenceSpec,
    gammas: &[f64],
    ns: &[usize],
    samples: usize,
    seed: u64,
) -> Result<ModulusTable> {
    let mut gammas = gammas.to_vec();
    if gammas.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::invalid("gamma values must lie in [0, 1]"));
    }
    gammas.sort_by(f64::total_cmp);
    let vocab = model.vocab();
    let root = RngStream::new(seed);
    let mut cells = Vec::with_capacity(gammas.len() * ns.len());
    for &n in ns {
        if n < 2 {
            return Err(Error::invalid("prompt length must be at least 2"));
        }
        let alpha = base.prefix(n);
        let t_alpha = model.predict(NTS_INSTRUCTION, &alpha)?.probs;
        let counts: Vec<usize> = gammas.iter().map(|g| level_count(*g, n)).collect();
        let per_sample: Vec<Vec<f64>> = (0..samples)
            .into_par_iter()
            .map(|s| {
                let nest = NestedPerturbation::draw(&alpha, vocab, &root.fork(n as u64).fork(s as u64));
                counts
                    .iter()
                    .map(|&c| {
                        if c == 0 {
                            return Ok(0.0);
                        }
                        let beta = nest.variant(&alpha, c);
                        linf_distance(&t_alpha, &model.predict(NTS_INSTRUCTION, &beta)?.probs)
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let mut running = 0.0f64;
        for (gi, (&gamma, &count)) in gammas.iter().zip(&counts).enumerate() {
            let d = per_sample.iter().map(|row| row[gi]).fold(0.0, f64::max);
            running = running.max(d);
            cells.push(ModulusCell {
                gamma,
                n,
                count,
                d,
                d_cummax: running,
            });
        }
    }
    Ok(ModulusTable {
        base: base.clone(),
        samples,
        seed,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimMeasure {
    pub value: f64,
    /// Positions within `value` of each other at the optimum.
    pub within: usize,
}

fn position_distances(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.is_empty() {
        return Err(Error::invalid("sim-measure of empty sequences"));
    }
    xs.iter().zip(ys).map(|(x, y)| linf_distance(x, y)).collect()
}

/// Smallest `δ ≥ 0` such that `∥x_i − y_i∥∞ ≤ δ` for at least `(1 − δ)n`
/// positions: `min_k max(d_(k), (n − k)/n)` over the sorted distances.
pub fn sim_measure(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<SimMeasure> {
    let mut d = position_distances(xs, ys)?;
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let mut best = SimMeasure {
        value: 1.0,
        within: 0,
    };
    for k in 1..=n {
        let v = d[k - 1].max((n - k) as f64 / n as f64);
        if v < best.value {
            best = SimMeasure { value: v, within: k };
        }
    }
    Ok(best)
}

/// Scans every candidate threshold and keeps the smallest one that
/// satisfies the defining condition.
pub fn sim_measure_brute_force(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<SimMeasure> {
    let d = position_distances(xs, ys)?;
    let n = d.len();
    let candidates = d
        .iter()
        .copied()
        .chain((0..=n).map(|j| j as f64 / n as f64));
    let mut best: Option<SimMeasure> = None;
    for delta in candidates {
        let within = d.iter().filter(|x| **x <= delta).count();
        let needed = (n - within) as f64 / n as f64;
        if needed <= delta && best.is_none_or(|b| delta < b.value) {
            best = Some(SimMeasure {
                value: delta,
                within,
            });
        }
    }
    Ok(best.expect("delta = 1 always qualifies"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub gamma: f64,
    pub count: usize,
    /// Fraction of perturbed prompts whose greedy token is the true next symbol.
    pub agreement: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseResult {
    pub spec: InfiniteSequenceSpec,
    pub n: usize,
    pub true_next: Token,
    pub rows: Vec<CollapseRow>,
    pub warnings: Vec<String>,
}

/// Margin used when checking that the probed model learned the target.
pub const COLLAPSE_EPSILON: f64 = 1e-3;

/// How often prompts near the length-`n` prefix of a learned sequence are
/// still continued with that sequence's next symbol.
pub fn collapse_probe(
    model: &TransformerModel,
    spec: &InfiniteSequenceSpec,
    gammas: &[f64],
    samples: usize,
    n: usize,
    seed: u64,
) -> Result<CollapseResult> {
    if n < 2 {
        return Err(Error::invalid("prompt length must be at least 2"));
    }
    if gammas.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::invalid("gamma values must lie in [0, 1]"));
    }
    let mut warnings = Vec::new();
    let witness = verify_eventual_learning(model, spec, COLLAPSE_EPSILON, (n / 2).max(1), n)?;
    if !witness.learned() {
        warnings.push(format!(
            "model does not learn {spec} with margin {COLLAPSE_EPSILON} on n in {}..={n} (first failure at {})",
            (n / 2).max(1),
            witness.first_failing.unwrap_or(0)
        ));
    }
    let alpha = spec.prefix(n);
    let true_next = spec.symbol_at(n + 1);
    let vocab = model.vocab();
    let root = RngStream::new(seed);
    let counts: Vec<usize> = gammas.iter().map(|g| level_count(*g, n)).collect();
    let hits: Vec<Vec<bool>> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let nest = NestedPerturbation::draw(&alpha, vocab, &root.fork(s as u64));
            counts
                .iter()
                .map(|&c| {
                    let beta = nest.variant(&alpha, c);
                    Ok(NextTokenModel::predict(model, NTS_INSTRUCTION, &beta)?.token == Some(true_next))
                })
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<_>>()?;
    let rows = gammas
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(gi, (&gamma, &count))| CollapseRow {
            gamma,
            count,
            agreement: hits.iter().filter(|h| h[gi]).count() as f64 / samples.max(1) as f64,
            samples,
        })
        .collect();
    Ok(CollapseResult {
        spec: spec.clone(),
        n,
        true_next,
        rows,
        warnings,
    })
}
