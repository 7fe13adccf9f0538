use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::alphabet::{Alphabet, Token};
use crate::error::{Error, Result};

/// Density-zero sets whose indicator sequences the library can enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndicatorSet {
    PowersOfTwo,
    Squares,
    Primes,
}

impl IndicatorSet {
    fn contains(self, i: usize) -> bool {
        match self {
            IndicatorSet::PowersOfTwo => i.is_power_of_two(),
            IndicatorSet::Squares => {
                let r = i.isqrt();
                r * r == i
            }
            IndicatorSet::Primes => is_prime(i),
        }
    }

    fn name(self) -> &'static str {
        match self {
            IndicatorSet::PowersOfTwo => "powers-of-two",
            IndicatorSet::Squares => "squares",
            IndicatorSet::Primes => "primes",
        }
    }
}

fn is_prime(i: usize) -> bool {
    if i < 2 {
        return false;
    }
    let mut f = 2;
    while f * f <= i {
        if i % f == 0 {
            return false;
        }
        f += 1;
    }
    true
}

/// Sieve of Eratosthenes: `out[i]` is true iff `i` is prime, for `i <= n`.
pub fn prime_sieve(n: usize) -> Vec<bool> {
    let mut sieve = vec![true; n + 1];
    for s in sieve.iter_mut().take(2.min(n + 1)) {
        *s = false;
    }
    let mut p = 2;
    while p * p <= n {
        if sieve[p] {
            for m in (p * p..=n).step_by(p) {
                sieve[m] = false;
            }
        }
        p += 1;
    }
    sieve
}

/// Nonempty token word written as a digit string (`"001"`), or as a JSON
/// array for alphabets with more than ten symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pattern(Vec<Token>);

impl Pattern {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("pattern must be nonempty"));
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn digits(&self) -> Option<String> {
        self.0
            .iter()
            .map(|t| char::from_digit(*t as u32, 10).filter(|_| *t < 10))
            .collect()
    }
}

fn parse_digits(text: &str) -> Result<Vec<Token>> {
    text.chars()
        .map(|c| {
            c.to_digit(10)
                .map(|d| d as Token)
                .ok_or_else(|| Error::invalid(format!("pattern symbol {c:?} is not a digit")))
        })
        .collect()
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::new(parse_digits(s)?)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.digits() {
            Some(d) => f.write_str(&d),
            None => {
                let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
        }
    }
}

impl Serialize for Pattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.digits() {
            Some(d) => s.serialize_str(&d),
            None => self.0.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            List(Vec<Token>),
        }
        let tokens = match Repr::deserialize(d)? {
            Repr::Text(t) => parse_digits(&t).map_err(serde::de::Error::custom)?,
            Repr::List(l) => l,
        };
        Pattern::new(tokens).map_err(serde::de::Error::custom)
    }
}

/// A finitely described infinite sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InfiniteSequenceSpec {
    Constant {
        symbol: Token,
    },
    Periodic {
        pattern: Pattern,
    },
    EventuallyPeriodic {
        preamble: Vec<Token>,
        pattern: Pattern,
    },
    /// 1s at the triangular numbers 1, 3, 6, 10, ..., 0s elsewhere.
    IncreasingSpacing,
    Indicator {
        set: IndicatorSet,
    },
}

impl InfiniteSequenceSpec {
    pub fn constant(symbol: Token) -> Self {
        Self::Constant { symbol }
    }

    pub fn periodic(pattern: &str) -> Result<Self> {
        Ok(Self::Periodic {
            pattern: pattern.parse()?,
        })
    }

    pub fn eventually_periodic(preamble: &str, pattern: &str) -> Result<Self> {
        Ok(Self::EventuallyPeriodic {
            preamble: parse_digits(preamble)?,
            pattern: pattern.parse()?,
        })
    }

    /// `(0^{k-1} 1)^ω`.
    pub fn sparse_periodic(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("period must be at least 1"));
        }
        let mut p = vec![0; k];
        p[k - 1] = 1;
        Ok(Self::Periodic {
            pattern: Pattern::new(p)?,
        })
    }

    /// Symbol at the 1-based position `i`.
    pub fn symbol_at(&self, i: usize) -> Token {
        assert!(i >= 1, "positions are 1-based");
        match self {
            Self::Constant { symbol } => *symbol,
            Self::Periodic { pattern } => pattern.0[(i - 1) % pattern.len()],
            Self::EventuallyPeriodic { preamble, pattern } => {
                if i <= preamble.len() {
                    preamble[i - 1]
                } else {
                    pattern.0[(i - 1 - preamble.len()) % pattern.len()]
                }
            }
            Self::IncreasingSpacing => {
                // i is triangular iff 8i + 1 is a perfect square
                let s = (8 * i + 1).isqrt();
                usize::from(s * s == 8 * i + 1)
            }
            Self::Indicator { set } => usize::from(set.contains(i)),
        }
    }

    /// First `n` symbols.
    pub fn prefix(&self, n: usize) -> Vec<Token> {
        match self {
            Self::Indicator {
                set: IndicatorSet::Primes,
            } => prime_sieve(n).into_iter().skip(1).map(usize::from).collect(),
            _ => (1..=n).map(|i| self.symbol_at(i)).collect(),
        }
    }

    /// `(preamble, period)` when the sequence is eventually periodic.
    pub fn eventually_periodic_parts(&self) -> Option<(Vec<Token>, Vec<Token>)> {
        match self {
            Self::Constant { symbol } => Some((Vec::new(), vec![*symbol])),
            Self::Periodic { pattern } => Some((Vec::new(), pattern.0.clone())),
            Self::EventuallyPeriodic { preamble, pattern } => {
                Some((preamble.clone(), pattern.0.clone()))
            }
            _ => None,
        }
    }

    /// Binary sequences whose set of 1s has natural density zero.
    pub fn is_density_zero(&self) -> bool {
        matches!(self, Self::IncreasingSpacing | Self::Indicator { .. })
    }

    pub fn max_symbol(&self) -> Token {
        match self {
            Self::Constant { symbol } => *symbol,
            Self::Periodic { pattern } => *pattern.0.iter().max().expect("nonempty"),
            Self::EventuallyPeriodic { preamble, pattern } => preamble
                .iter()
                .chain(&pattern.0)
                .copied()
                .max()
                .expect("nonempty"),
            Self::IncreasingSpacing | Self::Indicator { .. } => 1,
        }
    }

    pub fn validate(&self, alphabet: &Alphabet) -> Result<()> {
        let m = self.max_symbol();
        if !alphabet.contains(m) {
            return Err(Error::TokenOutOfAlphabet(m.to_string()));
        }
        Ok(())
    }
}

/// Compact text form: `constant:0`, `periodic:001`,
/// `eventually-periodic:111:0`, `increasing-spacing`, `powers-of-two`,
/// `squares`, `primes`, or a JSON object.
impl FromStr for InfiniteSequenceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return Ok(serde_json::from_str(s)?);
        }
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::invalid(format!("unrecognized sequence spec {s:?}"));
        match parts.as_slice() {
            ["constant", sym] => Ok(Self::constant(parse_single(sym)?)),
            [c] if c.starts_with("constant") && c.len() > "constant".len() => {
                Ok(Self::constant(parse_single(&c["constant".len()..])?))
            }
            ["periodic", p] => Self::periodic(p),
            ["eventually-periodic", pre, p] => Self::eventually_periodic(pre, p),
            ["increasing-spacing"] => Ok(Self::IncreasingSpacing),
            ["powers-of-two"] => Ok(Self::Indicator {
                set: IndicatorSet::PowersOfTwo,
            }),
            ["squares"] => Ok(Self::Indicator {
                set: IndicatorSet::Squares,
            }),
            ["primes"] => Ok(Self::Indicator {
                set: IndicatorSet::Primes,
            }),
            _ => Err(bad()),
        }
    }
}

fn parse_single(s: &str) -> Result<Token> {
    s.parse::<Token>()
        .map_err(|_| Error::invalid(format!("bad symbol {s:?}")))
}

impl fmt::Display for InfiniteSequenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant { symbol } => write!(f, "constant:{symbol}"),
            Self::Periodic { pattern } => write!(f, "periodic:{pattern}"),
            Self::EventuallyPeriodic { preamble, pattern } => {
                let pre: String = preamble.iter().map(|t| t.to_string()).collect();
                write!(f, "eventually-periodic:{pre}:{pattern}")
            }
            Self::IncreasingSpacing => f.write_str("increasing-spacing"),
            Self::Indicator { set } => f.write_str(set.name()),
        }
    }
}

/// `β_p^r = (0^{p-1} 1)^r 0`.
pub fn beta_block(p: usize, r: usize) -> Result<Vec<Token>> {
    if p < 2 || r < 1 {
        return Err(Error::invalid(format!(
            "beta_block needs p >= 2 and r >= 1, got p={p}, r={r}"
        )));
    }
    let mut out = Vec::with_capacity(r * p + 1);
    for _ in 0..r {
        out.extend(std::iter::repeat_n(0, p - 1));
        out.push(1);
    }
    out.push(0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn text(seq: &[Token]) -> String {
        Alphabet::binary().render(seq)
    }

    #[test]
    fn prefix_examples() {
        assert_eq!(
            text(&InfiniteSequenceSpec::IncreasingSpacing.prefix(26)),
            "10100100010000100000100000"
        );
        assert_eq!(text(&InfiniteSequenceSpec::periodic("01").unwrap().prefix(5)), "01010");
        let pow2 = InfiniteSequenceSpec::Indicator {
            set: IndicatorSet::PowersOfTwo,
        };
        assert_eq!(text(&pow2.prefix(8)), "11010001");
        let sq = InfiniteSequenceSpec::Indicator {
            set: IndicatorSet::Squares,
        };
        assert_eq!(text(&sq.prefix(10)), "1001000010");
        let primes = InfiniteSequenceSpec::Indicator {
            set: IndicatorSet::Primes,
        };
        assert_eq!(text(&primes.prefix(12)), "011010100010");
        assert_eq!(
            text(&InfiniteSequenceSpec::eventually_periodic("111", "0").unwrap().prefix(5)),
            "11100"
        );
        assert!(InfiniteSequenceSpec::IncreasingSpacing.prefix(0).is_empty());
    }

    #[test]
    fn sieve_agrees_with_trial_division() {
        let sieve = prime_sieve(2000);
        for (i, s) in sieve.iter().enumerate() {
            assert_eq!(*s, is_prime(i), "{i}");
        }
        assert_eq!(prime_sieve(0), vec![false]);
        assert_eq!(prime_sieve(1), vec![false, false]);
    }

    #[test]
    fn beta_block_examples() {
        assert_eq!(text(&beta_block(3, 2).unwrap()), "0010010");
        assert_eq!(text(&beta_block(2, 1).unwrap()), "010");
        let b = beta_block(5, 10).unwrap();
        assert_eq!(b.len(), 51);
        assert_eq!(b.iter().filter(|t| **t == 1).count(), 10);
        assert!(beta_block(1, 3).is_err());
        assert!(beta_block(3, 0).is_err());
    }

    #[test]
    fn text_forms_round_trip() {
        for s in [
            "constant:0",
            "periodic:001",
            "eventually-periodic:111:0",
            "increasing-spacing",
            "powers-of-two",
            "squares",
            "primes",
        ] {
            let spec: InfiniteSequenceSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        let spec: InfiniteSequenceSpec = "constant0".parse().unwrap();
        assert_eq!(spec, InfiniteSequenceSpec::constant(0));
        let spec: InfiniteSequenceSpec = r#"{"kind":"periodic","pattern":"001"}"#.parse().unwrap();
        assert_eq!(spec, InfiniteSequenceSpec::periodic("001").unwrap());
        assert!("periodic:".parse::<InfiniteSequenceSpec>().is_err());
        assert!(r#"{"kind":"periodic","pattern":""}"#
            .parse::<InfiniteSequenceSpec>()
            .is_err());
        assert!("fibonacci".parse::<InfiniteSequenceSpec>().is_err());
    }

    #[test]
    fn wide_patterns_serialize_as_lists() {
        let spec = InfiniteSequenceSpec::Periodic {
            pattern: Pattern::new(vec![3, 12]).unwrap(),
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"periodic","pattern":[3,12]}"#);
        assert_eq!(serde_json::from_str::<InfiniteSequenceSpec>(&json).unwrap(), spec);
    }

    fn any_spec() -> impl Strategy<Value = InfiniteSequenceSpec> {
        prop_oneof![
            (0usize..2).prop_map(InfiniteSequenceSpec::constant),
            proptest::collection::vec(0usize..2, 1..8).prop_map(|p| InfiniteSequenceSpec::Periodic {
                pattern: Pattern::new(p).unwrap()
            }),
            (
                proptest::collection::vec(0usize..2, 0..8),
                proptest::collection::vec(0usize..2, 1..8)
            )
                .prop_map(|(pre, p)| InfiniteSequenceSpec::EventuallyPeriodic {
                    preamble: pre,
                    pattern: Pattern::new(p).unwrap()
                }),
            Just(InfiniteSequenceSpec::IncreasingSpacing),
            Just(InfiniteSequenceSpec::Indicator { set: IndicatorSet::PowersOfTwo }),
            Just(InfiniteSequenceSpec::Indicator { set: IndicatorSet::Squares }),
            Just(InfiniteSequenceSpec::Indicator { set: IndicatorSet::Primes }),
        ]
    }

    proptest! {
        #[test]
        fn prefixes_are_consistent(spec in any_spec(), n in 0usize..=10_000) {
            let long = spec.prefix(2 * n);
            let short = spec.prefix(n);
            prop_assert_eq!(&long[..n], &short[..]);
            if n > 0 {
                prop_assert_eq!(short[n - 1], spec.symbol_at(n));
            }
        }
    }
}
