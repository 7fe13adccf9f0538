use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

/// Scores are clamped to `[-SCORE_CLAMP, SCORE_CLAMP]` before `exp`, which
/// keeps every weight finite and strictly positive.
pub const SCORE_CLAMP: f64 = 80.0;

/// Query/key projections shared by the dot-product weight kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bilinear {
    pub query: Matrix,
    pub key: Matrix,
    pub scale: f64,
}

/// Attention weight `w(x_i, x_j, p(i, j)) > 0`; `x_j` supplies the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightFunction {
    ConstantOne,
    /// `exp(scale * <Wq x_j, Wk x_i + p>)`
    DotProductExp {
        #[serde(flatten)]
        bilinear: Bilinear,
    },
    /// `exp(scale * <Wq x_j, R(p) Wk x_i>)`, `R(p)` rotating coordinate pairs
    /// by the `(cos, sin)` pairs stored in `p`.
    DotProductExpRotary {
        #[serde(flatten)]
        bilinear: Bilinear,
    },
    /// Scalable softmax: the dot-product score multiplied by `s * ln(n)`,
    /// where `n` is the number of attended positions. Depends on sequence
    /// length, so it lies outside the fixed-weight model.
    SsmaxScaled {
        #[serde(flatten)]
        bilinear: Bilinear,
        s: f64,
        rotary: bool,
    },
}

impl WeightFunction {
    pub fn bilinear(&self) -> Option<&Bilinear> {
        match self {
            Self::ConstantOne => None,
            Self::DotProductExp { bilinear }
            | Self::DotProductExpRotary { bilinear }
            | Self::SsmaxScaled { bilinear, .. } => Some(bilinear),
        }
    }

    pub fn bilinear_mut(&mut self) -> Option<&mut Bilinear> {
        match self {
            Self::ConstantOne => None,
            Self::DotProductExp { bilinear }
            | Self::DotProductExpRotary { bilinear }
            | Self::SsmaxScaled { bilinear, .. } => Some(bilinear),
        }
    }

    pub fn is_length_aware(&self) -> bool {
        matches!(self, Self::SsmaxScaled { .. })
    }

    pub(crate) fn is_rotary(&self) -> bool {
        matches!(
            self,
            Self::DotProductExpRotary { .. } | Self::SsmaxScaled { rotary: true, .. }
        )
    }

    /// Same parameters, swapped into the scalable-softmax kind.
    pub fn to_ssmax(&self, s: f64) -> Option<Self> {
        let rotary = self.is_rotary();
        self.bilinear().map(|b| Self::SsmaxScaled {
            bilinear: b.clone(),
            s,
            rotary,
        })
    }

    /// Multiplier applied to the inner product for a query attending over
    /// `count` positions.
    #[inline]
    pub(crate) fn score_factor(&self, count: usize) -> f64 {
        match self {
            Self::ConstantOne => 0.0,
            Self::DotProductExp { bilinear } | Self::DotProductExpRotary { bilinear } => {
                bilinear.scale
            }
            Self::SsmaxScaled { bilinear, s, .. } => bilinear.scale * s * (count as f64).ln(),
        }
    }

    pub(crate) fn project_query(&self, x: &[f64]) -> Vec<f64> {
        self.bilinear().map_or_else(Vec::new, |b| b.query.matvec(x))
    }

    pub(crate) fn project_key(&self, x: &[f64]) -> Vec<f64> {
        self.bilinear().map_or_else(Vec::new, |b| b.key.matvec(x))
    }

    /// Unscaled inner product between a projected query and key under `p`.
    #[inline]
    pub(crate) fn inner(&self, q: &[f64], k: &[f64], p: &[f64]) -> f64 {
        match self {
            Self::ConstantOne => 0.0,
            _ if self.is_rotary() => rotary_inner(q, k, p),
            _ => q
                .iter()
                .zip(k)
                .zip(p)
                .map(|((qa, ka), pa)| qa * (ka + pa))
                .sum(),
        }
    }

    /// Clamped score for projected vectors; the weight is `exp` of this.
    #[inline]
    pub(crate) fn clamped_score(&self, q: &[f64], k: &[f64], p: &[f64], count: usize) -> (f64, bool) {
        if let Self::ConstantOne = self {
            return (0.0, false);
        }
        let raw = self.score_factor(count) * self.inner(q, k, p);
        if raw > SCORE_CLAMP {
            (SCORE_CLAMP, true)
        } else if raw < -SCORE_CLAMP {
            (-SCORE_CLAMP, true)
        } else {
            (raw, false)
        }
    }

    /// `w(x_i, x_j, p)` evaluated from raw layer inputs, `count` being the
    /// number of positions the query at `j` attends over (used only by the
    /// length-aware kind).
    pub fn weight(&self, x_i: &[f64], x_j: &[f64], p: &[f64], count: usize) -> f64 {
        let q = self.project_query(x_j);
        let k = self.project_key(x_i);
        self.clamped_score(&q, &k, p, count).0.exp()
    }
}

/// `<q, R(p) k>` where pair `m` of `k` is rotated by `(p[2m], p[2m+1])`.
#[inline]
pub(crate) fn rotary_inner(q: &[f64], k: &[f64], p: &[f64]) -> f64 {
    let d = q.len();
    let mut acc = 0.0;
    for m in 0..d / 2 {
        let (c, s) = (p[2 * m], p[2 * m + 1]);
        let (k0, k1) = (k[2 * m], k[2 * m + 1]);
        acc += q[2 * m] * (c * k0 - s * k1) + q[2 * m + 1] * (s * k0 + c * k1);
    }
    if d % 2 == 1 {
        acc += q[d - 1] * k[d - 1];
    }
    acc
}

/// Accumulates `R(p)^T g` into `out` (gradient of the rotated key).
#[inline]
pub(crate) fn rotary_transpose_acc(g: &[f64], p: &[f64], scale: f64, out: &mut [f64]) {
    let d = g.len();
    for m in 0..d / 2 {
        let (c, s) = (p[2 * m], p[2 * m + 1]);
        let (g0, g1) = (g[2 * m], g[2 * m + 1]);
        out[2 * m] += scale * (c * g0 + s * g1);
        out[2 * m + 1] += scale * (-s * g0 + c * g1);
    }
    if d % 2 == 1 {
        out[d - 1] += scale * g[d - 1];
    }
}

/// `R(p) k` written into `out`.
#[inline]
pub(crate) fn rotate_into(k: &[f64], p: &[f64], out: &mut [f64]) {
    let d = k.len();
    for m in 0..d / 2 {
        let (c, s) = (p[2 * m], p[2 * m + 1]);
        let (k0, k1) = (k[2 * m], k[2 * m + 1]);
        out[2 * m] = c * k0 - s * k1;
        out[2 * m + 1] = s * k0 + c * k1;
    }
    if d % 2 == 1 {
        out[d - 1] = k[d - 1];
    }
}
