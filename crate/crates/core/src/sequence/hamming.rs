use num_rational::Ratio;

use super::alphabet::Token;
use super::spec::InfiniteSequenceSpec;
use crate::error::{Error, Result};

/// Exact relative Hamming distance between equal-length words.
pub fn hamming_rel(a: &[Token], b: &[Token]) -> Result<Ratio<u64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("relative Hamming distance of empty words"));
    }
    let diff = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(Ratio::new(diff as u64, a.len() as u64))
}

/// Result of [`dh_asymptotic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsymptoticDistance {
    Exact(Ratio<u64>),
    NotComputable,
}

impl AsymptoticDistance {
    pub fn exact(self) -> Option<Ratio<u64>> {
        match self {
            AsymptoticDistance::Exact(r) => Some(r),
            AsymptoticDistance::NotComputable => None,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Replaces a density-zero indicator sequence by the all-zero sequence,
/// which it agrees with on all but a density-zero set of positions.
fn reduce(spec: &InfiniteSequenceSpec) -> Option<(Vec<Token>, Vec<Token>)> {
    if spec.is_density_zero() {
        Some((Vec::new(), vec![0]))
    } else {
        spec.eventually_periodic_parts()
    }
}

/// `liminf_n d_H(a_1..a_n, b_1..b_n)`.
///
/// Exact for pairs of eventually periodic sequences, where the relative
/// distance converges to the mean disagreement over one common period past
/// both preambles. Density-zero indicator sequences are handled by comparing
/// the all-zero sequence instead, which leaves the limit unchanged.
pub fn dh_asymptotic(a: &InfiniteSequenceSpec, b: &InfiniteSequenceSpec) -> AsymptoticDistance {
    if a == b {
        return AsymptoticDistance::Exact(Ratio::from_integer(0));
    }
    let (Some((pa, qa)), Some((pb, qb))) = (reduce(a), reduce(b)) else {
        return AsymptoticDistance::NotComputable;
    };
    let start = pa.len().max(pb.len());
    let period = qa.len() / gcd(qa.len(), qb.len()) * qb.len();
    let at = |pre: &[Token], pat: &[Token], i: usize| {
        if i < pre.len() {
            pre[i]
        } else {
            pat[(i - pre.len()) % pat.len()]
        }
    };
    let diff = (start..start + period)
        .filter(|&i| at(&pa, &qa, i) != at(&pb, &qb, i))
        .count();
    AsymptoticDistance::Exact(Ratio::new(diff as u64, period as u64))
}

/// Length of the common period used by [`dh_asymptotic`], when both
/// sequences are eventually periodic.
pub fn common_period(a: &InfiniteSequenceSpec, b: &InfiniteSequenceSpec) -> Option<usize> {
    let (_, qa) = reduce(a)?;
    let (_, qb) = reduce(b)?;
    Some(qa.len() / gcd(qa.len(), qb.len()) * qb.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::IndicatorSet;
    use proptest::prelude::*;

    fn r(n: u64, d: u64) -> Ratio<u64> {
        Ratio::new(n, d)
    }

    #[test]
    fn finite_examples() {
        assert_eq!(hamming_rel(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap(), r(0, 1));
        assert_eq!(hamming_rel(&[0, 0], &[0, 1]).unwrap(), r(1, 2));
        let k = 4;
        let zeros = InfiniteSequenceSpec::constant(0).prefix(7 * k);
        let sparse = InfiniteSequenceSpec::sparse_periodic(k).unwrap().prefix(7 * k);
        assert_eq!(hamming_rel(&zeros, &sparse).unwrap(), r(1, 4));
        assert!(matches!(
            hamming_rel(&[0], &[0, 1]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(hamming_rel(&[], &[]).is_err());
    }

    #[test]
    fn asymptotic_examples() {
        let zero = InfiniteSequenceSpec::constant(0);
        let k5 = InfiniteSequenceSpec::sparse_periodic(5).unwrap();
        assert_eq!(dh_asymptotic(&zero, &k5), AsymptoticDistance::Exact(r(1, 5)));
        let pow2 = InfiniteSequenceSpec::Indicator {
            set: IndicatorSet::PowersOfTwo,
        };
        assert_eq!(dh_asymptotic(&zero, &pow2), AsymptoticDistance::Exact(r(0, 1)));
        assert_eq!(dh_asymptotic(&k5, &k5), AsymptoticDistance::Exact(r(0, 1)));
        let a = InfiniteSequenceSpec::periodic("01").unwrap();
        let b = InfiniteSequenceSpec::eventually_periodic("1", "10").unwrap();
        assert_eq!(dh_asymptotic(&a, &b), AsymptoticDistance::Exact(r(0, 1)));
        let c = InfiniteSequenceSpec::periodic("001").unwrap();
        // "01" vs "001" over six positions: 010101 / 001001
        assert_eq!(dh_asymptotic(&a, &c), AsymptoticDistance::Exact(r(1, 2)));
        assert_eq!(
            dh_asymptotic(&InfiniteSequenceSpec::IncreasingSpacing, &a),
            AsymptoticDistance::Exact(r(1, 2))
        );
    }

    fn ep_spec() -> impl Strategy<Value = InfiniteSequenceSpec> {
        proptest::collection::vec(0usize..2, 1..7)
            .prop_flat_map(|p| (proptest::collection::vec(0usize..2, 0..=p.len()), Just(p)))
            .prop_map(|(pre, p)| InfiniteSequenceSpec::EventuallyPeriodic {
                preamble: pre,
                pattern: super::super::spec::Pattern::new(p).unwrap(),
            })
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(
            (a, b, c) in (1usize..40).prop_flat_map(|n| (
                proptest::collection::vec(0usize..3, n),
                proptest::collection::vec(0usize..3, n),
                proptest::collection::vec(0usize..3, n),
            ))
        ) {
            prop_assert_eq!(hamming_rel(&a, &a).unwrap(), r(0, 1));
            prop_assert_eq!(hamming_rel(&a, &b).unwrap(), hamming_rel(&b, &a).unwrap());
            if a != b {
                prop_assert!(hamming_rel(&a, &b).unwrap() > r(0, 1));
            }
            prop_assert!(
                hamming_rel(&a, &c).unwrap() <= hamming_rel(&a, &b).unwrap() + hamming_rel(&b, &c).unwrap()
            );
        }

        #[test]
        fn windowed_distance_converges(a in ep_spec(), b in ep_spec(), m in 50usize..400) {
            let exact = dh_asymptotic(&a, &b).exact().unwrap();
            let l = common_period(&a, &b).unwrap();
            let emp = hamming_rel(&a.prefix(m), &b.prefix(m)).unwrap();
            let gap = (*emp.numer() as f64 / *emp.denom() as f64)
                - (*exact.numer() as f64 / *exact.denom() as f64);
            prop_assert!(gap.abs() <= 2.0 * l as f64 / m as f64);
        }
    }
}
