use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::interface::{NextTokenModel, NTS_INSTRUCTION};
use crate::error::{Error, Result};
use crate::numeric::RngStream;
use crate::sequence::{
    apply_positions, nts_count, perturb, sample_positions_betabinomial, ReplacementRule, Token,
};

pub const DEFAULT_GAMMAS: [f64; 7] = [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5];
pub const DEFAULT_SAMPLES: usize = 100;
pub const DEFAULT_LENGTH: usize = 190;

/// Next-token sensitivity at one perturbation level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtsResult {
    pub gamma: f64,
    /// Perturbed positions per sample.
    pub count: usize,
    /// Samples whose greedy next token differs from the base prompt's.
    pub nts: usize,
    pub samples: usize,
    pub base_next: Option<Token>,
    pub next_tokens: Vec<Option<Token>>,
    pub seed: u64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1/2], got {gamma}")));
    }
    Ok(())
}

fn check_length(length: usize) -> Result<()> {
    if length < 2 {
        return Err(Error::invalid("perturbation protocols need length >= 2"));
    }
    Ok(())
}

fn gamma_stream(seed: u64, gamma: f64) -> RngStream {
    RngStream::new(seed).fork(gamma.to_bits())
}

/// The perturbation-sensitivity protocol on an arbitrary base prompt.
pub fn nts_on<M: NextTokenModel + ?Sized>(
    model: &M,
    instruction: &str,
    base: &[Token],
    gammas: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<NtsResult>> {
    check_length(base.len())?;
    for g in gammas {
        check_gamma(*g)?;
    }
    let vocab = model.vocab();
    let rule = ReplacementRule::for_vocab(vocab);
    let base_next = model.predict(instruction, base)?.token;
    gammas
        .iter()
        .map(|&gamma| {
            let count = nts_count(gamma, base.len());
            let root = gamma_stream(seed, gamma);
            let next_tokens = (0..samples)
                .into_par_iter()
                .map(|s| {
                    let (beta, _) = perturb(base, count, rule, vocab, &root.fork(s as u64))?;
                    Ok(model.predict(instruction, &beta)?.token)
                })
                .collect::<Result<Vec<_>>>()?;
            let nts = next_tokens.iter().filter(|t| **t != base_next).count();
            Ok(NtsResult {
                gamma,
                count,
                nts,
                samples,
                base_next,
                next_tokens,
                seed,
            })
        })
        .collect()
}

/// Sensitivity of the all-zero prompt of the given length.
pub fn nts_zero<M: NextTokenModel + ?Sized>(
    model: &M,
    gammas: &[f64],
    samples: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<NtsResult>> {
    check_length(length)?;
    nts_on(model, NTS_INSTRUCTION, &vec![0; length], gammas, samples, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtsPositionalRow {
    pub u: f64,
    pub v: f64,
    pub gamma: f64,
    pub count: usize,
    pub nts: usize,
    pub samples: usize,
}

/// Like [`nts_zero`], with perturbed positions drawn from a Beta-Binomial
/// over `1..length−1` instead of uniformly.
pub fn nts_positional<M: NextTokenModel + ?Sized>(
    model: &M,
    shapes: &[(f64, f64)],
    gamma: f64,
    samples: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<NtsPositionalRow>> {
    check_gamma(gamma)?;
    check_length(length)?;
    let vocab = model.vocab();
    let rule = ReplacementRule::for_vocab(vocab);
    let base = vec![0; length];
    let base_next = model.predict(NTS_INSTRUCTION, &base)?.token;
    let count = nts_count(gamma, length);
    shapes
        .iter()
        .map(|&(u, v)| {
            let root = gamma_stream(seed, gamma).fork(u.to_bits()).fork(v.to_bits());
            let diverged = (0..samples)
                .into_par_iter()
                .map(|s| {
                    let stream = root.fork(s as u64);
                    let positions =
                        sample_positions_betabinomial(count, length - 1, u, v, &stream.fork(0))?;
                    let beta =
                        apply_positions(&base, &positions, rule, vocab, &mut stream.fork(1).rng())?;
                    Ok(model.predict(NTS_INSTRUCTION, &beta)?.token != base_next)
                })
                .collect::<Result<Vec<bool>>>()?;
            Ok(NtsPositionalRow {
                u,
                v,
                gamma,
                count,
                nts: diverged.iter().filter(|d| **d).count(),
                samples,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructive::{build_single_learner, SingleLearnerSpec, DEFAULT_LEAK};
    use crate::experiments::StubModel;
    use crate::model::{random_model, ArchitectureConfig};
    use crate::numeric::Dist;
    use crate::sequence::{InfiniteSequenceSpec, DEFAULT_SHAPES};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn single_learner_is_insensitive() {
        let m = build_single_learner(&SingleLearnerSpec::new(
            InfiniteSequenceSpec::constant(0),
            DEFAULT_LEAK,
        ))
        .unwrap();
        for r in nts_zero(&m, &DEFAULT_GAMMAS, 40, DEFAULT_LENGTH, 3).unwrap() {
            assert_eq!(r.nts, 0);
            assert_eq!(r.base_next, Some(0));
        }
        for r in nts_positional(&m, &DEFAULT_SHAPES, 0.1, 20, DEFAULT_LENGTH, 3).unwrap() {
            assert_eq!(r.nts, 0);
        }
    }

    #[test]
    fn one_flip_at_smallest_gamma() {
        let m = StubModel::constant(2, 0);
        let r = &nts_zero(&m, &[0.01], 5, 190, 0).unwrap()[0];
        assert_eq!(r.count, 1);
        assert_eq!(r.next_tokens.len(), 5);
    }

    #[test]
    fn flip_detector_counts_every_sample() {
        let detector = StubModel::new("any-one", 2, |p: &[Token]| {
            Dist::point_mass(2, usize::from(p.contains(&1))).into_vec()
        });
        for r in nts_zero(&detector, &DEFAULT_GAMMAS, 30, 190, 9).unwrap() {
            assert_eq!(r.nts, 30);
        }
    }

    #[test]
    fn gamma_range_is_enforced() {
        let m = StubModel::constant(2, 0);
        assert!(nts_zero(&m, &[0.0], 1, 10, 0).is_err());
        assert!(nts_zero(&m, &[0.51], 1, 10, 0).is_err());
        assert!(nts_zero(&m, &[0.1], 1, 1, 0).is_err());
        assert!(nts_positional(&m, &[(0.0, 1.0)], 0.1, 1, 10, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let m = random_model(&ArchitectureConfig::new(8, 2), 4).unwrap();
        let a = nts_zero(&m, &[0.1, 0.3], 20, 60, 11).unwrap();
        let b = nts_zero(&m, &[0.1, 0.3], 20, 60, 11).unwrap();
        assert_eq!(a, b);
    }

    // Which positions the uniform and the u = v = 1 protocols touch should
    // follow the same law: pool the hit counts and run a two-sample test.
    #[test]
    fn uniform_shape_matches_uniform_protocol() {
        let length = 12;
        let free = length - 1;
        let trials = 20_000u64;
        let mut a = vec![0f64; free];
        let mut b = vec![0f64; free];
        let base = vec![0; length];
        for s in 0..trials {
            let root = RngStream::new(77).fork(s);
            let (pa, _) = perturb(&base, 1, ReplacementRule::FlipBinary, 2, &root.fork(0)).unwrap();
            a[pa.iter().position(|t| *t == 1).unwrap()] += 1.0;
            let pb = sample_positions_betabinomial(1, free, 1.0, 1.0, &root.fork(1)).unwrap();
            b[pb[0] - 1] += 1.0;
        }
        let stat: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).powi(2) / (x + y))
            .sum();
        let p = 1.0 - ChiSquared::new((free - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.001, "chi2={stat} p={p}");
    }
}
