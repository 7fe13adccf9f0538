use serde::{Deserialize, Serialize};

use super::nts::nts_zero;
use crate::error::{Error, Result};
use crate::model::{TransformerModel, WeightFunction};

/// The same model with every dot-product weight swapped for ssmax with
/// parameter `s`.
pub fn ssmax_pair(model: &TransformerModel, s: f64) -> Result<TransformerModel> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!("ssmax parameter must be positive, got {s}")));
    }
    let mut out = model.clone();
    for layer in &mut out.layers {
        if let Some(w) = layer.weight.to_ssmax(s) {
            layer.weight = w;
        }
    }
    Ok(out)
}

fn strip_length_awareness(model: &TransformerModel) -> TransformerModel {
    let mut out = model.clone();
    for layer in &mut out.layers {
        if let WeightFunction::SsmaxScaled {
            bilinear, rotary, ..
        } = &layer.weight
        {
            let bilinear = bilinear.clone();
            layer.weight = if *rotary {
                WeightFunction::DotProductExpRotary { bilinear }
            } else {
                WeightFunction::DotProductExp { bilinear }
            };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmaxRow {
    pub gamma: f64,
    pub count: usize,
    pub nts_softmax: usize,
    pub nts_ssmax: usize,
    /// `nts_ssmax − nts_softmax`
    pub diff: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmaxComparison {
    pub rows: Vec<SsmaxRow>,
    pub mean_softmax: f64,
    pub mean_ssmax: f64,
    pub mean_diff: f64,
}

/// Runs the all-zero sensitivity protocol on two models that differ only in
/// their attention weight kind, with shared perturbations.
pub fn ssmax_compare(
    softmax: &TransformerModel,
    ssmax: &TransformerModel,
    gammas: &[f64],
    samples: usize,
    length: usize,
    seed: u64,
) -> Result<SsmaxComparison> {
    if strip_length_awareness(softmax) != strip_length_awareness(ssmax) {
        return Err(Error::invalid(
            "compared models must be identical apart from the attention weight kind",
        ));
    }
    let a = nts_zero(softmax, gammas, samples, length, seed)?;
    let b = nts_zero(ssmax, gammas, samples, length, seed)?;
    let rows: Vec<SsmaxRow> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| SsmaxRow {
            gamma: x.gamma,
            count: x.count,
            nts_softmax: x.nts,
            nts_ssmax: y.nts,
            diff: y.nts as i64 - x.nts as i64,
        })
        .collect();
    let k = rows.len().max(1) as f64;
    let mean_softmax = rows.iter().map(|r| r.nts_softmax as f64).sum::<f64>() / k;
    let mean_ssmax = rows.iter().map(|r| r.nts_ssmax as f64).sum::<f64>() / k;
    Ok(SsmaxComparison {
        rows,
        mean_softmax,
        mean_ssmax,
        mean_diff: mean_ssmax - mean_softmax,
    })
}
