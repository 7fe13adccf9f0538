use serde::{Deserialize, Serialize};

use crate::constructive::{verify_eventual_learning, LearnabilityWitness};
use crate::error::{Error, Result};
use crate::model::TransformerModel;
use crate::sequence::InfiniteSequenceSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationRow {
    pub k: usize,
    pub refuted: bool,
    pub first_failing: Option<usize>,
    /// Prefix length just before the first 1 of `(0^{k−1}1)^ω`.
    pub first_one_check: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationReport {
    pub epsilon: f64,
    pub horizon: usize,
    pub learns_zero: bool,
    pub warnings: Vec<String>,
    pub rows: Vec<IsolationRow>,
}

impl IsolationReport {
    pub fn all_refuted(&self) -> bool {
        self.rows.iter().all(|r| r.refuted)
    }
}

/// A model that learns `0^ω` cannot learn any `(0^{k−1}1)^ω`; runs the
/// learnability check on each and reports where it fails.
pub fn isolation_demo(
    model: &TransformerModel,
    ks: &[usize],
    epsilon: f64,
    horizon: usize,
) -> Result<IsolationReport> {
    let zero = verify_eventual_learning(model, &InfiniteSequenceSpec::constant(0), epsilon, 1, horizon)?;
    let mut warnings = Vec::new();
    if !zero.learned() {
        warnings.push(format!(
            "model does not learn the all-zero sequence with margin {epsilon} (first failure at {}); isolation is not implied",
            zero.first_failing.unwrap_or(0)
        ));
    }
    let rows = ks
        .iter()
        .map(|&k| {
            if k < 2 {
                return Err(Error::invalid(format!("k must be at least 2, got {k}")));
            }
            let spec = InfiniteSequenceSpec::sparse_periodic(k)?;
            let w: LearnabilityWitness = verify_eventual_learning(model, &spec, epsilon, 1, horizon)?;
            Ok(IsolationRow {
                k,
                refuted: !w.learned(),
                first_failing: w.first_failing,
                first_one_check: k - 1,
            })
        })
        .collect::<Result<_>>()?;
    Ok(IsolationReport {
        epsilon,
        horizon,
        learns_zero: zero.learned(),
        warnings,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructive::{build_single_learner, SingleLearnerSpec, DEFAULT_LEAK};

    #[test]
    fn zero_learner_refutes_every_k_at_the_first_one() {
        let m = build_single_learner(&SingleLearnerSpec::new(
            InfiniteSequenceSpec::constant(0),
            DEFAULT_LEAK,
        ))
        .unwrap();
        let r = isolation_demo(&m, &[2, 4, 8, 16], 0.8, 200).unwrap();
        assert!(r.learns_zero && r.warnings.is_empty() && r.all_refuted());
        for row in &r.rows {
            assert_eq!(row.first_failing, Some(row.first_one_check));
        }
    }

    #[test]
    fn non_learner_gets_a_warning() {
        let m = build_single_learner(&SingleLearnerSpec::new(
            InfiniteSequenceSpec::constant(1),
            DEFAULT_LEAK,
        ))
        .unwrap();
        let r = isolation_demo(&m, &[3], 0.8, 50).unwrap();
        assert!(!r.learns_zero);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.rows.len(), 1);
    }
}
