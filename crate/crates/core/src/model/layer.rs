use serde::{Deserialize, Serialize};

use super::matrix::{b64_vec, Matrix};
use super::positional::{OffsetCache, PositionalEncoding};
use super::weight::WeightFunction;
use crate::error::{Error, Result};
use crate::numeric::all_finite;

/// Added to the variance inside layer normalization; keeps `F` continuous.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map `x -> M x + b`, used as the value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub matrix: Matrix,
    #[serde(with = "b64_vec")]
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn identity(d: usize) -> Self {
        Self {
            matrix: Matrix::identity(d),
            bias: vec![0.0; d],
        }
    }

    pub fn zero(d: usize) -> Self {
        Self {
            matrix: Matrix::zeros(d, d),
            bias: vec![0.0; d],
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.matrix.matvec_into(x, out);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    Relu,
    Tanh,
    /// tanh approximation of GELU
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

impl Nonlinearity {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Tanh => x.tanh(),
            Self::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - x.tanh().powi(2),
            Self::Gelu => {
                let inner = GELU_C * (x + 0.044715 * x * x * x);
                let t = inner.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
            }
        }
    }
}

/// Two-layer perceptron applied on the residual stream:
/// `y = r + W2 σ(W1 norm(r) + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Matrix,
    #[serde(with = "b64_vec")]
    pub b1: Vec<f64>,
    pub w2: Matrix,
    #[serde(with = "b64_vec")]
    pub b2: Vec<f64>,
    pub nonlinearity: Nonlinearity,
    pub layer_norm: bool,
}

/// Intermediate values of one MLP evaluation, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub(crate) struct MlpTrace {
    pub normed: Vec<f64>,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub inv_std: f64,
}

impl Mlp {
    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub(crate) fn apply_traced(&self, r: &[f64], out: &mut [f64]) -> MlpTrace {
        let (normed, inv_std) = if self.layer_norm {
            layer_norm(r)
        } else {
            (r.to_vec(), 1.0)
        };
        let mut pre = self.w1.matvec(&normed);
        for (p, b) in pre.iter_mut().zip(&self.b1) {
            *p += b;
        }
        let hidden: Vec<f64> = pre.iter().map(|p| self.nonlinearity.apply(*p)).collect();
        self.w2.matvec_into(&hidden, out);
        for ((o, b), ri) in out.iter_mut().zip(&self.b2).zip(r) {
            *o += b + ri;
        }
        MlpTrace {
            normed,
            pre,
            hidden,
            inv_std,
        }
    }
}

/// Centers and scales `r` to unit variance, `eps` added under the root.
pub(crate) fn layer_norm(r: &[f64]) -> (Vec<f64>, f64) {
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (r.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

/// Activation `F(a, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Activation {
    /// `F(a, x) = a`
    PassThrough,
    /// `F(a, x) = a + x`
    Residual,
    /// `F(a, x) = mlp(a + x)` with the MLP's own residual connection.
    ResidualMlp(Mlp),
}

impl Activation {
    pub fn apply_into(&self, a: &[f64], x: &[f64], out: &mut [f64]) {
        match self {
            Self::PassThrough => out.copy_from_slice(a),
            Self::Residual => {
                for ((o, ai), xi) in out.iter_mut().zip(a).zip(x) {
                    *o = ai + xi;
                }
            }
            Self::ResidualMlp(mlp) => {
                let r: Vec<f64> = a.iter().zip(x).map(|(ai, xi)| ai + xi).collect();
                mlp.apply_traced(&r, out);
            }
        }
    }
}

/// One decoder-only attention layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionLayer {
    pub positional: PositionalEncoding,
    pub weight: WeightFunction,
    pub value: Affine,
    pub activation: Activation,
}

impl AttentionLayer {
    pub fn dim(&self) -> usize {
        self.value.matrix.cols()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let d = self.dim();
        let check = |what: &str, found: usize| {
            if found == d {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} has dimension {found}, layer width is {d}")))
            }
        };
        check("value map rows", self.value.matrix.rows())?;
        check("value bias", self.value.bias.len())?;
        check("positional encoding", self.positional.dim())?;
        if let Some(b) = self.weight.bilinear() {
            check("query rows", b.query.rows())?;
            check("query cols", b.query.cols())?;
            check("key rows", b.key.rows())?;
            check("key cols", b.key.cols())?;
        }
        if let Activation::ResidualMlp(mlp) = &self.activation {
            let h = mlp.hidden_dim();
            if mlp.w1.cols() != d || mlp.w2.rows() != d || mlp.w2.cols() != h || mlp.b1.len() != h || mlp.b2.len() != d {
                return Err(Error::invalid("mlp shapes do not match layer width"));
            }
        }
        Ok(())
    }

    /// Outputs for positions `from..n` of a flat `n x d` input.
    pub(crate) fn forward_flat(&self, xs: &[f64], n: usize, from: usize) -> Result<Vec<f64>> {
        let d = self.dim();
        let cache = OffsetCache::new(&self.positional, n);
        let mut keys = Vec::with_capacity(if self.weight.bilinear().is_some() { n * d } else { 0 });
        let mut values = vec![0.0; n * d];
        for i in 0..n {
            let x = &xs[i * d..(i + 1) * d];
            keys.extend(self.weight.project_key(x));
            self.value.apply_into(x, &mut values[i * d..(i + 1) * d]);
        }
        let mut out = vec![0.0; (n - from) * d];
        let mut a = vec![0.0; d];
        for j in from..n {
            let x = &xs[j * d..(j + 1) * d];
            let q = self.weight.project_query(x);
            attend(&self.weight, &q, &keys, &values, &cache, j, d, &mut a);
            if !all_finite(&a) {
                return Err(Error::NonFinite(format!("attention vector at position {}", j + 1)));
            }
            let y = &mut out[(j - from) * d..(j - from + 1) * d];
            self.activation.apply_into(&a, x, y);
            if !all_finite(y) {
                return Err(Error::NonFinite(format!("layer output at position {}", j + 1)));
            }
        }
        Ok(out)
    }
}

/// Attention vector for 0-based query index `j` over cached keys/values of
/// positions `0..=j`: `a_j = Σ w_ij v_i / Σ w_ij`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend(
    weight: &WeightFunction,
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    cache: &OffsetCache,
    j: usize,
    d: usize,
    a: &mut [f64],
) {
    a.fill(0.0);
    let mut total = 0.0;
    let count = j + 1;
    let constant = matches!(weight, WeightFunction::ConstantOne);
    for i in 0..=j {
        let w = if constant {
            1.0
        } else {
            let k = &keys[i * d..(i + 1) * d];
            weight.clamped_score(q, k, cache.get(j - i), count).0.exp()
        };
        total += w;
        for (ac, v) in a.iter_mut().zip(&values[i * d..(i + 1) * d]) {
            *ac += w * v;
        }
    }
    for ac in a.iter_mut() {
        *ac /= total;
    }
}

/// Applies `layer` to a sequence of vectors, returning `y_1..y_n`.
pub fn layer_forward(layer: &AttentionLayer, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if xs.is_empty() {
        return Err(Error::invalid("layer_forward needs a nonempty input"));
    }
    layer.validate()?;
    let d = layer.dim();
    for x in xs {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
    }
    let flat: Vec<f64> = xs.iter().flatten().copied().collect();
    let out = layer.forward_flat(&flat, xs.len(), 0)?;
    Ok(out.chunks(d).map(<[f64]>::to_vec).collect())
}
