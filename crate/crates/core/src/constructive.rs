//! Hand-built compact transformers that eventually learn given sequences,
//! and the finite-horizon checks used to certify or refute learning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Activation, Affine, AttentionLayer, Bilinear, Embedding, Matrix, Mlp, Nonlinearity,
    PositionTable, PositionalEncoding, Readout, TransformerModel, WeightFunction,
};
use crate::sequence::{Alphabet, InfiniteSequenceSpec, Token};

pub const DEFAULT_LEAK: f64 = 0.1;
pub const DEFAULT_SHARPNESS: f64 = 20.0;

/// Slack allowed when comparing a margin computed in floating point with the
/// closed-form value it should equal.
const MARGIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleLearnerSpec {
    pub target: InfiniteSequenceSpec,
    #[serde(default = "default_leak")]
    pub leak: f64,
    #[serde(default)]
    pub alphabet: Alphabet,
}

fn default_leak() -> f64 {
    DEFAULT_LEAK
}

impl SingleLearnerSpec {
    pub fn new(target: InfiniteSequenceSpec, leak: f64) -> Self {
        Self {
            target,
            leak,
            alphabet: Alphabet::binary(),
        }
    }

    /// `(1 − η) − η/(|Σ| − 1)`.
    pub fn margin(&self) -> f64 {
        let v = self.alphabet.size();
        if v == 1 {
            return 1.0;
        }
        (1.0 - self.leak) - self.leak / (v - 1) as f64
    }
}

/// One layer that forwards its input; the embedding at position `i` is the
/// one-hot of the target symbol `α_{i+1}`, so the output ignores the prompt.
pub fn build_single_learner(spec: &SingleLearnerSpec) -> Result<TransformerModel> {
    let v = spec.alphabet.size();
    if !(spec.leak > 0.0 && spec.leak < 0.5) {
        return Err(Error::invalid(format!("leak must lie in (0, 1/2), got {}", spec.leak)));
    }
    spec.target.validate(&spec.alphabet)?;
    let (pre, period) = spec.target.eventually_periodic_parts().ok_or_else(|| {
        Error::invalid(format!(
            "single learner needs an eventually periodic target, got {}",
            spec.target
        ))
    })?;
    if spec.margin() <= 0.0 {
        return Err(Error::invalid("leak leaves no positive margin"));
    }
    let preamble = pre.len().saturating_sub(1);
    let table_rows = preamble + period.len();
    let mut rows = Matrix::zeros(table_rows, v);
    for r in 0..table_rows {
        rows.set(r, spec.target.symbol_at(r + 2), 1.0);
    }
    let mut lookup = Matrix::zeros(v, v);
    for a in 0..v {
        for b in 0..v {
            let p = if a == b {
                1.0 - spec.leak
            } else {
                spec.leak / (v - 1) as f64
            };
            lookup.set(a, b, p);
        }
    }
    let model = TransformerModel {
        alphabet: spec.alphabet.clone(),
        dim: v,
        embedding: Embedding {
            token: Matrix::zeros(v, v),
            position: Some(PositionTable {
                preamble,
                period: period.len(),
                rows,
            }),
        },
        embedding_bound: 1.0,
        layers: vec![AttentionLayer {
            positional: PositionalEncoding::ConstantZero { dim: v },
            weight: WeightFunction::ConstantOne,
            value: Affine::zero(v),
            activation: Activation::Residual,
        }],
        readout: Readout::Lookup {
            offset: 0,
            rows: lookup,
        },
    };
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyLearnerSpec {
    pub periods: Vec<usize>,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    /// Largest relative offset with its own encoding; defaults to four times
    /// the largest period.
    #[serde(default)]
    pub max_lag: Option<usize>,
    #[serde(default)]
    pub alphabet: Alphabet,
}

fn default_sharpness() -> f64 {
    DEFAULT_SHARPNESS
}

impl FamilyLearnerSpec {
    pub fn new(periods: Vec<usize>, sharpness: f64) -> Self {
        Self {
            periods,
            sharpness,
            max_lag: None,
            alphabet: Alphabet::binary(),
        }
    }

    pub fn lag_limit(&self) -> usize {
        self.max_lag
            .unwrap_or_else(|| 4 * self.periods.iter().copied().max().unwrap_or(2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyLearner {
    pub model: TransformerModel,
    /// Margin the construction is expected to reach on in-family sequences
    /// once every candidate's mismatch rate has separated.
    pub epsilon: f64,
}

/// Coordinates of the family learner's residual stream.
struct FamilyLayout {
    v: usize,
    t: usize,
    bias: usize,
    valid: usize,
    offset: usize,
    fetched: usize,
    next: usize,
    mismatch: usize,
    rate: usize,
    dim: usize,
}

impl FamilyLayout {
    fn new(v: usize, t: usize, l: usize) -> Self {
        let bias = v;
        let valid = bias + 1;
        let offset = valid + l + 1;
        let fetched = offset + l + 2;
        let next = fetched + t * v;
        let mismatch = next + t * v;
        let rate = mismatch + t;
        Self {
            v,
            t,
            bias,
            valid,
            offset,
            fetched,
            next,
            mismatch,
            rate,
            dim: rate + t,
        }
    }
}

/// Builds a learner for every periodic sequence whose period is in
/// `spec.periods`.
///
/// For each candidate period `P` two sharp single-head layers fetch the
/// tokens at lags `P` and `P − 1`; the last of these computes, through a
/// ReLU perceptron, whether the current token disagrees with the one `P`
/// back (zero while the lag is not yet available). A uniform-attention layer
/// turns those indicators into per-candidate mismatch rates, and the readout
/// soft-selects the candidate with the lowest rate and emits its lag `P − 1`
/// token. Multi-head attention is written as stacked single-head layers, so
/// the model has `2·|periods| + 1` layers.
pub fn build_family_learner(spec: &FamilyLearnerSpec) -> Result<FamilyLearner> {
    let periods = &spec.periods;
    if periods.is_empty() {
        return Err(Error::invalid("family needs at least one period"));
    }
    for (i, p) in periods.iter().enumerate() {
        if *p < 2 {
            return Err(Error::invalid(format!("periods must be at least 2, got {p}")));
        }
        if periods[..i].contains(p) {
            return Err(Error::invalid(format!("duplicate period {p}")));
        }
    }
    if !(spec.sharpness > 0.0) {
        return Err(Error::invalid("sharpness must be positive"));
    }
    let l = spec.lag_limit();
    let max_p = *periods.iter().max().expect("nonempty");
    if l < max_p {
        return Err(Error::invalid(format!(
            "max lag {l} is below the largest period {max_p}"
        )));
    }
    let v = spec.alphabet.size();
    let t_count = periods.len();
    let lay = FamilyLayout::new(v, t_count, l);
    let d = lay.dim;
    let beta = spec.sharpness;

    let mut token = Matrix::zeros(v, d);
    for s in 0..v {
        token.set(s, s, 1.0);
    }
    let mut pos_rows = Matrix::zeros(l + 1, d);
    for r in 0..=l {
        pos_rows.set(r, lay.bias, 1.0);
        pos_rows.set(r, lay.valid + r, 1.0);
    }
    let embedding = Embedding {
        token,
        position: Some(PositionTable {
            preamble: l,
            period: 1,
            rows: pos_rows,
        }),
    };

    let mut offsets = Matrix::zeros(l + 2, d);
    for delta in 0..l + 2 {
        offsets.set(delta, lay.offset + delta, 1.0);
    }
    let offset_pe = PositionalEncoding::TableBounded {
        table: offsets,
        bound: 1.0,
    };

    let fetch = |lag: usize, dest: usize| {
        let mut query = Matrix::zeros(d, d);
        query.set(lay.offset + lag, lay.bias, beta);
        let mut value = Affine::zero(d);
        for s in 0..v {
            value.matrix.set(dest + s, s, 1.0);
        }
        AttentionLayer {
            positional: offset_pe.clone(),
            weight: WeightFunction::DotProductExp {
                bilinear: Bilinear {
                    query,
                    key: Matrix::zeros(d, d),
                    scale: 1.0,
                },
            },
            value,
            activation: Activation::Residual,
        }
    };

    let mut layers = Vec::with_capacity(2 * t_count + 1);
    for (t, p) in periods.iter().enumerate() {
        layers.push(fetch(*p, lay.fetched + t * v));
        layers.push(fetch(p - 1, lay.next + t * v));
    }

    let hidden = t_count * v;
    let mut w1 = Matrix::zeros(hidden, d);
    let mut w2 = Matrix::zeros(d, hidden);
    for (t, p) in periods.iter().enumerate() {
        for s in 0..v {
            let h = t * v + s;
            w1.set(h, lay.fetched + t * v + s, 1.0);
            w1.set(h, s, -1.0);
            w1.set(h, lay.bias, -1.0);
            // position j has a token P back iff min(j, L+1) > P
            for m in p + 1..=l + 1 {
                w1.set(h, lay.valid + m - 1, 1.0);
            }
            w2.set(lay.mismatch + t, h, 1.0);
        }
    }
    let last = layers.last_mut().expect("at least two fetch layers");
    last.activation = Activation::ResidualMlp(Mlp {
        w1,
        b1: vec![0.0; hidden],
        w2,
        b2: vec![0.0; d],
        nonlinearity: Nonlinearity::Relu,
        layer_norm: false,
    });

    let mut average = Affine::zero(d);
    for t in 0..t_count {
        average.matrix.set(lay.rate + t, lay.mismatch + t, 1.0);
    }
    layers.push(AttentionLayer {
        positional: PositionalEncoding::ConstantZero { dim: d },
        weight: WeightFunction::ConstantOne,
        value: average,
        activation: Activation::Residual,
    });

    let tau = beta / 2.0;
    let model = TransformerModel {
        alphabet: spec.alphabet.clone(),
        dim: d,
        embedding,
        embedding_bound: 1.0,
        layers,
        readout: Readout::SoftMinSelect {
            rate_offset: lay.rate,
            next_offset: lay.next,
            candidates: lay.t,
            select_sharpness: beta,
            output_sharpness: tau,
        },
    };
    model.validate()?;
    debug_assert_eq!(lay.v, v);
    let ideal = (tau.exp() - 1.0) / (tau.exp() + (v - 1) as f64);
    Ok(FamilyLearner {
        model,
        epsilon: 0.5 * ideal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Learned,
    Refuted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnabilityWitness {
    pub verdict: Verdict,
    pub epsilon: f64,
    pub n0: usize,
    pub horizon: usize,
    pub first_failing: Option<usize>,
    /// `margins[n - 1]` is `T(α_1..α_n)(α_{n+1}) − max_{σ ≠ α_{n+1}} T(α_1..α_n)(σ)`
    /// for `n` in `1..=horizon`.
    pub margins: Vec<f64>,
}

impl LearnabilityWitness {
    pub fn learned(&self) -> bool {
        self.verdict == Verdict::Learned
    }

    /// Smallest margin over `n0..=horizon`.
    pub fn min_margin(&self) -> f64 {
        self.margins[self.n0 - 1..]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn next_token_margin(probs: &[f64], next: Token) -> f64 {
    let rival = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != next)
        .map(|(_, p)| *p)
        .fold(f64::NEG_INFINITY, f64::max);
    if rival == f64::NEG_INFINITY {
        probs[next]
    } else {
        probs[next] - rival
    }
}

/// Checks `T(α_1..α_n)(α_{n+1}) ≥ T(α_1..α_n)(σ) + ε` for every `σ ≠ α_{n+1}`
/// and every `n` in `n0..=horizon`.
pub fn verify_eventual_learning(
    model: &TransformerModel,
    spec: &InfiniteSequenceSpec,
    epsilon: f64,
    n0: usize,
    horizon: usize,
) -> Result<LearnabilityWitness> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if n0 < 1 || horizon < n0 {
        return Err(Error::invalid(format!(
            "need 1 <= n0 <= horizon, got n0={n0}, horizon={horizon}"
        )));
    }
    spec.validate(&model.alphabet)?;
    let seq = spec.prefix(horizon + 1);
    let dists = model.forward_prefixes(&seq[..horizon])?;
    let margins: Vec<f64> = dists
        .iter()
        .enumerate()
        .map(|(i, d)| next_token_margin(d.probs(), seq[i + 1]))
        .collect();
    let first_failing = (n0..=horizon).find(|n| margins[n - 1] < epsilon - MARGIN_TOL);
    Ok(LearnabilityWitness {
        verdict: if first_failing.is_some() {
            Verdict::Refuted
        } else {
            Verdict::Learned
        },
        epsilon,
        n0,
        horizon,
        first_failing,
        margins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposition1Report {
    pub a: LearnabilityWitness,
    pub b: LearnabilityWitness,
    /// Last 1-based position where the two sequences differ, 0 if none.
    pub last_difference: usize,
    pub pass: bool,
}

/// Last position where two eventually periodic sequences differ, or an
/// error when they differ infinitely often.
pub fn last_difference(a: &InfiniteSequenceSpec, b: &InfiniteSequenceSpec) -> Result<usize> {
    let (Some((pa, qa)), Some((pb, qb))) =
        (a.eventually_periodic_parts(), b.eventually_periodic_parts())
    else {
        return Err(Error::invalid(
            "finite-difference check needs eventually periodic sequences",
        ));
    };
    let start = pa.len().max(pb.len());
    let lcm = qa.len() / gcd(qa.len(), qb.len()) * qb.len();
    if (start + 1..=start + lcm).any(|i| a.symbol_at(i) != b.symbol_at(i)) {
        return Err(Error::invalid(format!(
            "{a} and {b} differ at infinitely many positions"
        )));
    }
    Ok((1..=start).rev().find(|i| a.symbol_at(*i) != b.symbol_at(*i)).unwrap_or(0))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Verifies both sequences with the same `ε` and a start index past the
/// last disagreement; passes iff the verdicts agree.
pub fn proposition1_check(
    model: &TransformerModel,
    a: &InfiniteSequenceSpec,
    b: &InfiniteSequenceSpec,
    epsilon: f64,
    n0: usize,
    horizon: usize,
) -> Result<Proposition1Report> {
    let last = last_difference(a, b)?;
    let start = n0.max(last + 1);
    let horizon = horizon.max(start);
    let wa = verify_eventual_learning(model, a, epsilon, start, horizon)?;
    let wb = verify_eventual_learning(model, b, epsilon, start, horizon)?;
    let pass = wa.verdict == wb.verdict;
    Ok(Proposition1Report {
        a: wa,
        b: wb,
        last_difference: last,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_compactness;

    fn zeros() -> InfiniteSequenceSpec {
        InfiniteSequenceSpec::constant(0)
    }

    #[test]
    fn single_learner_learns_constant() {
        let spec = SingleLearnerSpec::new(zeros(), 0.1);
        assert!((spec.margin() - 0.8).abs() < 1e-15);
        let model = build_single_learner(&spec).unwrap();
        let w = verify_eventual_learning(&model, &zeros(), 0.8, 1, 2000).unwrap();
        assert!(w.learned(), "{:?}", w.first_failing);
        let d = model.forward(&[1, 1, 0, 1]).unwrap();
        assert!((d.get(0) - 0.9).abs() < 1e-15 && (d.get(1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn single_learner_periodic_margin() {
        let target = InfiniteSequenceSpec::periodic("01").unwrap();
        let spec = SingleLearnerSpec::new(target.clone(), 0.25);
        assert!((spec.margin() - 0.5).abs() < 1e-15);
        let model = build_single_learner(&spec).unwrap();
        let w = verify_eventual_learning(&model, &target, 0.5, 1, 200).unwrap();
        assert!(w.learned());
        assert!(w.margins.iter().all(|m| (m - 0.5).abs() < 1e-15));
    }

    #[test]
    fn single_learner_is_content_independent() {
        let target = InfiniteSequenceSpec::eventually_periodic("110", "011").unwrap();
        let model = build_single_learner(&SingleLearnerSpec::new(target, 0.1)).unwrap();
        for n in 1..12usize {
            let a: Vec<Token> = (0..n).map(|i| i % 2).collect();
            let b: Vec<Token> = (0..n).map(|i| (i / 3) % 2).collect();
            assert_eq!(model.forward(&a).unwrap(), model.forward(&b).unwrap());
        }
        assert!(check_compactness(&model, 1000).pass);
    }

    #[test]
    fn single_learner_rejects_bad_targets() {
        let spec = SingleLearnerSpec::new(InfiniteSequenceSpec::IncreasingSpacing, 0.1);
        assert!(build_single_learner(&spec).is_err());
        assert!(build_single_learner(&SingleLearnerSpec::new(zeros(), 0.6)).is_err());
    }

    #[test]
    fn constant_learner_fails_on_other_targets() {
        let model = build_single_learner(&SingleLearnerSpec::new(zeros(), 0.1)).unwrap();
        let w = verify_eventual_learning(&model, &InfiniteSequenceSpec::IncreasingSpacing, 0.8, 1, 100)
            .unwrap();
        assert_eq!(w.verdict, Verdict::Refuted);
        assert_eq!(w.first_failing, Some(2));
        for k in [2usize, 5, 9] {
            let sparse = InfiniteSequenceSpec::sparse_periodic(k).unwrap();
            let w = verify_eventual_learning(&model, &sparse, 0.8, 1, 100).unwrap();
            assert_eq!(w.first_failing, Some(k - 1));
            assert!(w.margins[k - 2] < 0.0);
        }
    }

    #[test]
    fn verification_preconditions() {
        let model = build_single_learner(&SingleLearnerSpec::new(zeros(), 0.1)).unwrap();
        assert!(verify_eventual_learning(&model, &zeros(), 0.0, 1, 10).is_err());
        assert!(verify_eventual_learning(&model, &zeros(), 0.1, 0, 10).is_err());
        assert!(verify_eventual_learning(&model, &zeros(), 0.1, 11, 10).is_err());
    }

    #[test]
    fn proposition_one_on_single_learner() {
        let model = build_single_learner(&SingleLearnerSpec::new(zeros(), 0.1)).unwrap();
        let b = InfiniteSequenceSpec::eventually_periodic("111", "0").unwrap();
        let r = proposition1_check(&model, &zeros(), &b, 0.8, 1, 500).unwrap();
        assert_eq!(r.last_difference, 3);
        assert!(r.pass && r.a.learned() && r.b.learned());
        assert_eq!(&r.a.margins[3..], &r.b.margins[3..]);
        let same = proposition1_check(&model, &zeros(), &zeros(), 0.8, 1, 50).unwrap();
        assert!(same.pass);
        let sparse = InfiniteSequenceSpec::sparse_periodic(3).unwrap();
        assert!(proposition1_check(&model, &zeros(), &sparse, 0.8, 1, 50).is_err());
    }

    #[test]
    fn family_learner_learns_members() {
        let fam = build_family_learner(&FamilyLearnerSpec::new(vec![2, 3], 20.0)).unwrap();
        assert!(fam.epsilon > 0.49);
        assert!(check_compactness(&fam.model, 1000).pass);
        for target in ["01", "001", "011", "00"] {
            let spec = InfiniteSequenceSpec::periodic(target).unwrap();
            let w = verify_eventual_learning(&fam.model, &spec, fam.epsilon, 16, 200).unwrap();
            assert!(w.learned(), "{target}: {:?}", w.first_failing);
        }
    }

    #[test]
    fn family_learner_refutes_outsiders() {
        let fam = build_family_learner(&FamilyLearnerSpec::new(vec![2, 3], 20.0)).unwrap();
        let p7 = InfiniteSequenceSpec::sparse_periodic(7).unwrap();
        let w = verify_eventual_learning(&fam.model, &p7, fam.epsilon, 16, 200).unwrap();
        assert_eq!(w.verdict, Verdict::Refuted);
        assert_eq!(w.first_failing, Some(16));
    }

    #[test]
    fn single_period_family_copies_lag() {
        let p = 4;
        let fam = build_family_learner(&FamilyLearnerSpec::new(vec![p], 20.0)).unwrap();
        let seq = InfiniteSequenceSpec::sparse_periodic(p).unwrap().prefix(40);
        let dists = fam.model.forward_prefixes(&seq).unwrap();
        for n in p..=seq.len() {
            assert_eq!(dists[n - 1].argmax_with_margin().0, seq[n - p], "n={n}");
        }
    }

    #[test]
    fn family_builder_errors() {
        assert!(build_family_learner(&FamilyLearnerSpec::new(vec![], 20.0)).is_err());
        assert!(build_family_learner(&FamilyLearnerSpec::new(vec![1, 3], 20.0)).is_err());
        assert!(build_family_learner(&FamilyLearnerSpec::new(vec![3, 3], 20.0)).is_err());
        let mut spec = FamilyLearnerSpec::new(vec![2, 5], 20.0);
        spec.max_lag = Some(4);
        assert!(build_family_learner(&spec).is_err());
    }
}
