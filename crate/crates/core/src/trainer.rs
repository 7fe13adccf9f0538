//! Next-token training of the standard instantiation: hand-written reverse
//! mode through attention, perceptron and readout, Adam updates, and a
//! finite-difference gradient check.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    random_model, rotary_transpose_acc, rotate_into, Activation, ArchitectureConfig,
    AttentionKind, MlpTrace, Nonlinearity, OffsetCache, PositionalKind, Readout,
    TransformerModel, DEFAULT_MAX_OFFSET,
};
use crate::numeric::{dot, softmax_vec, RngStream};
use crate::sequence::{Alphabet, InfiniteSequenceSpec, Token};

/// Next-token examples; `targets[e][j] == inputs[e][j + 1]` for the windows
/// the batch was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub inputs: Vec<Vec<Token>>,
    pub targets: Vec<Vec<Token>>,
}

impl Batch {
    /// Splits each window `w` into `w[..len-1]` and `w[1..]`.
    pub fn from_windows(windows: &[Vec<Token>]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::invalid("batch needs at least one window"));
        }
        let mut inputs = Vec::with_capacity(windows.len());
        let mut targets = Vec::with_capacity(windows.len());
        for w in windows {
            if w.len() < 2 {
                return Err(Error::invalid("windows need at least two tokens"));
            }
            inputs.push(w[..w.len() - 1].to_vec());
            targets.push(w[1..].to_vec());
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn positions(&self) -> usize {
        self.inputs.iter().map(Vec::len).sum()
    }

    fn check(&self, alphabet: &Alphabet) -> Result<()> {
        if self.inputs.is_empty() || self.inputs.len() != self.targets.len() {
            return Err(Error::invalid("batch inputs and targets must pair up"));
        }
        for (x, t) in self.inputs.iter().zip(&self.targets) {
            if x.is_empty() || x.len() != t.len() {
                return Err(Error::LengthMismatch {
                    left: x.len(),
                    right: t.len(),
                });
            }
            if let Some(bad) = x.iter().chain(t).find(|s| !alphabet.contains(**s)) {
                return Err(Error::TokenOutOfAlphabet(bad.to_string()));
            }
        }
        Ok(())
    }
}

/// Names of the trainable parameter blocks, in the order used by
/// [`params`] and [`params_mut`].
pub fn param_names(model: &TransformerModel) -> Vec<String> {
    let mut names = vec!["embedding.token".to_string()];
    if model.embedding.position.is_some() {
        names.push("embedding.position".into());
    }
    for (l, layer) in model.layers.iter().enumerate() {
        if layer.weight.bilinear().is_some() {
            names.push(format!("layer{l}.query"));
            names.push(format!("layer{l}.key"));
        }
        names.push(format!("layer{l}.value.matrix"));
        names.push(format!("layer{l}.value.bias"));
        if let Activation::ResidualMlp(_) = layer.activation {
            for p in ["w1", "b1", "w2", "b2"] {
                names.push(format!("layer{l}.mlp.{p}"));
            }
        }
    }
    if let Readout::Softmax { .. } = model.readout {
        names.push("readout.weight".into());
        names.push("readout.bias".into());
    }
    names
}

pub fn params(model: &TransformerModel) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = vec![model.embedding.token.data()];
    if let Some(t) = &model.embedding.position {
        out.push(t.rows.data());
    }
    for layer in &model.layers {
        if let Some(b) = layer.weight.bilinear() {
            out.push(b.query.data());
            out.push(b.key.data());
        }
        out.push(layer.value.matrix.data());
        out.push(&layer.value.bias);
        if let Activation::ResidualMlp(m) = &layer.activation {
            out.push(m.w1.data());
            out.push(&m.b1);
            out.push(m.w2.data());
            out.push(&m.b2);
        }
    }
    if let Readout::Softmax { weight, bias } = &model.readout {
        out.push(weight.data());
        out.push(bias);
    }
    out
}

pub fn params_mut(model: &mut TransformerModel) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = vec![model.embedding.token.data_mut()];
    if let Some(t) = &mut model.embedding.position {
        out.push(t.rows.data_mut());
    }
    for layer in &mut model.layers {
        if let Some(b) = layer.weight.bilinear_mut() {
            out.push(b.query.data_mut());
            out.push(b.key.data_mut());
        }
        out.push(layer.value.matrix.data_mut());
        out.push(&mut layer.value.bias);
        if let Activation::ResidualMlp(m) = &mut layer.activation {
            out.push(m.w1.data_mut());
            out.push(&mut m.b1);
            out.push(m.w2.data_mut());
            out.push(&mut m.b2);
        }
    }
    if let Readout::Softmax { weight, bias } = &mut model.readout {
        out.push(weight.data_mut());
        out.push(bias);
    }
    out
}

pub fn param_count(model: &TransformerModel) -> usize {
    params(model).iter().map(|p| p.len()).sum()
}

/// Partial derivatives of the mean next-token loss, stored in a copy of the
/// model so every block has its parameter's shape.
#[derive(Debug, Clone)]
pub struct GradientRecord {
    pub loss: f64,
    pub grads: TransformerModel,
    /// Attention scores that hit the clamp; their derivative is taken as 0.
    pub clamp_hits: usize,
}

impl GradientRecord {
    pub fn blocks(&self) -> Vec<&[f64]> {
        params(&self.grads)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|g| g.is_finite()))
    }
}

fn zeroed(model: &TransformerModel) -> TransformerModel {
    let mut g = model.clone();
    for block in params_mut(&mut g) {
        block.fill(0.0);
    }
    g
}

fn check_trainable(model: &TransformerModel) -> Result<()> {
    model.validate()?;
    if !matches!(model.readout, Readout::Softmax { .. }) {
        return Err(Error::invalid("training needs an affine + softmax readout"));
    }
    Ok(())
}

struct LayerTape {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    a: Vec<f64>,
    /// `alpha[j]` holds the normalized weights over `i = 0..=j`.
    alpha: Vec<Vec<f64>>,
    clamped: Vec<Vec<bool>>,
    mlp: Vec<MlpTrace>,
}

struct ExampleTape {
    layers: Vec<LayerTape>,
    offsets: Vec<OffsetCache>,
    out: Vec<f64>,
}

fn forward_tape(model: &TransformerModel, tokens: &[Token]) -> Result<ExampleTape> {
    let n = tokens.len();
    let d = model.dim;
    let mut x = vec![0.0; n * d];
    for (j, t) in tokens.iter().enumerate() {
        model.embedding.embed_into(*t, j + 1, &mut x[j * d..(j + 1) * d]);
    }
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut offsets = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let cache = OffsetCache::new(&layer.positional, n);
        let bil = layer.weight.bilinear();
        let (mut q, mut k) = if bil.is_some() {
            (vec![0.0; n * d], vec![0.0; n * d])
        } else {
            (Vec::new(), Vec::new())
        };
        let mut v = vec![0.0; n * d];
        for i in 0..n {
            let xi = &x[i * d..(i + 1) * d];
            if let Some(b) = bil {
                b.query.matvec_into(xi, &mut q[i * d..(i + 1) * d]);
                b.key.matvec_into(xi, &mut k[i * d..(i + 1) * d]);
            }
            layer.value.apply_into(xi, &mut v[i * d..(i + 1) * d]);
        }
        let mut a = vec![0.0; n * d];
        let mut y = vec![0.0; n * d];
        let mut alpha = Vec::with_capacity(n);
        let mut clamped = Vec::with_capacity(n);
        let mut mlp = Vec::new();
        for j in 0..n {
            let mut w = Vec::with_capacity(j + 1);
            let mut c = Vec::with_capacity(j + 1);
            for i in 0..=j {
                let (s, hit) = if bil.is_some() {
                    layer.weight.clamped_score(
                        &q[j * d..(j + 1) * d],
                        &k[i * d..(i + 1) * d],
                        cache.get(j - i),
                        j + 1,
                    )
                } else {
                    (0.0, false)
                };
                w.push(s.exp());
                c.push(hit);
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|wi| *wi /= total);
            let aj = &mut a[j * d..(j + 1) * d];
            for (i, wi) in w.iter().enumerate() {
                for (ac, vi) in aj.iter_mut().zip(&v[i * d..(i + 1) * d]) {
                    *ac += wi * vi;
                }
            }
            let xj = &x[j * d..(j + 1) * d];
            let yj = &mut y[j * d..(j + 1) * d];
            match &layer.activation {
                Activation::ResidualMlp(m) => {
                    let r: Vec<f64> = aj.iter().zip(xj).map(|(p, q)| p + q).collect();
                    mlp.push(m.apply_traced(&r, yj));
                }
                act => act.apply_into(aj, xj, yj),
            }
            alpha.push(w);
            clamped.push(c);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer output during training".into()));
        }
        layers.push(LayerTape {
            x: std::mem::replace(&mut x, y),
            q,
            k,
            v,
            a,
            alpha,
            clamped,
            mlp,
        });
        offsets.push(cache);
    }
    Ok(ExampleTape {
        layers,
        offsets,
        out: x,
    })
}

/// Summed (not averaged) loss and gradient of one example.
fn example_grad(
    model: &TransformerModel,
    tokens: &[Token],
    targets: &[Token],
) -> Result<(f64, TransformerModel, usize)> {
    let n = tokens.len();
    let d = model.dim;
    let tape = forward_tape(model, tokens)?;
    let mut g = zeroed(model);
    let mut loss = 0.0;
    let mut dy = vec![0.0; n * d];
    let Readout::Softmax { weight, bias } = &model.readout else {
        unreachable!("checked by check_trainable");
    };
    {
        let Readout::Softmax {
            weight: gw,
            bias: gb,
        } = &mut g.readout
        else {
            unreachable!()
        };
        for j in 0..n {
            let yj = &tape.out[j * d..(j + 1) * d];
            let mut logits = weight.matvec(yj);
            for (l, b) in logits.iter_mut().zip(bias) {
                *l += b;
            }
            let mut p = softmax_vec(&logits);
            loss -= p[targets[j]].max(f64::MIN_POSITIVE).ln();
            p[targets[j]] -= 1.0;
            gw.add_outer(&p, yj);
            for (b, pi) in gb.iter_mut().zip(&p) {
                *b += pi;
            }
            weight.matvec_t_acc(&p, &mut dy[j * d..(j + 1) * d]);
        }
    }

    let mut clamp_hits = 0;
    for (l, layer) in model.layers.iter().enumerate().rev() {
        let t = &tape.layers[l];
        let cache = &tape.offsets[l];
        let gl = &mut g.layers[l];
        let mut da = vec![0.0; n * d];
        let mut dx = vec![0.0; n * d];
        for j in 0..n {
            let dyj = &dy[j * d..(j + 1) * d];
            match (&layer.activation, &mut gl.activation) {
                (Activation::PassThrough, _) => da[j * d..(j + 1) * d].copy_from_slice(dyj),
                (Activation::Residual, _) => {
                    da[j * d..(j + 1) * d].copy_from_slice(dyj);
                    dx[j * d..(j + 1) * d].copy_from_slice(dyj);
                }
                (Activation::ResidualMlp(m), Activation::ResidualMlp(gm)) => {
                    let tr = &t.mlp[j];
                    let mut dr = dyj.to_vec();
                    gm.w2.add_outer(dyj, &tr.hidden);
                    for (b, v) in gm.b2.iter_mut().zip(dyj) {
                        *b += v;
                    }
                    let mut dh = vec![0.0; tr.hidden.len()];
                    m.w2.matvec_t_acc(dyj, &mut dh);
                    let dpre: Vec<f64> = dh
                        .iter()
                        .zip(&tr.pre)
                        .map(|(h, p)| h * m.nonlinearity.derivative(*p))
                        .collect();
                    gm.w1.add_outer(&dpre, &tr.normed);
                    for (b, v) in gm.b1.iter_mut().zip(&dpre) {
                        *b += v;
                    }
                    let mut du = vec![0.0; d];
                    m.w1.matvec_t_acc(&dpre, &mut du);
                    if m.layer_norm {
                        let mean_du = du.iter().sum::<f64>() / d as f64;
                        let mean_duu =
                            du.iter().zip(&tr.normed).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for ((r, g), u) in dr.iter_mut().zip(&du).zip(&tr.normed) {
                            *r += tr.inv_std * (g - mean_du - u * mean_duu);
                        }
                    } else {
                        for (r, g) in dr.iter_mut().zip(&du) {
                            *r += g;
                        }
                    }
                    da[j * d..(j + 1) * d].copy_from_slice(&dr);
                    dx[j * d..(j + 1) * d].copy_from_slice(&dr);
                }
                _ => unreachable!("gradient mirrors the model"),
            }
        }

        let bil = layer.weight.bilinear();
        let mut dv = vec![0.0; n * d];
        let (mut dq, mut dk) = if bil.is_some() {
            (vec![0.0; n * d], vec![0.0; n * d])
        } else {
            (Vec::new(), Vec::new())
        };
        let rotary = layer.weight.is_rotary();
        let mut rot = vec![0.0; d];
        for j in 0..n {
            let daj = &da[j * d..(j + 1) * d];
            let ga = dot(daj, &t.a[j * d..(j + 1) * d]);
            let factor = layer.weight.score_factor(j + 1);
            for i in 0..=j {
                let alpha = t.alpha[j][i];
                let vi = &t.v[i * d..(i + 1) * d];
                for (dvc, dac) in dv[i * d..(i + 1) * d].iter_mut().zip(daj) {
                    *dvc += alpha * dac;
                }
                if bil.is_none() {
                    continue;
                }
                if t.clamped[j][i] {
                    clamp_hits += 1;
                    continue;
                }
                let ds = alpha * (dot(daj, vi) - ga) * factor;
                if ds == 0.0 {
                    continue;
                }
                let p = cache.get(j - i);
                let qj = &t.q[j * d..(j + 1) * d];
                let ki = &t.k[i * d..(i + 1) * d];
                if rotary {
                    rotate_into(ki, p, &mut rot);
                    for (g, r) in dq[j * d..(j + 1) * d].iter_mut().zip(&rot) {
                        *g += ds * r;
                    }
                    rotary_transpose_acc(qj, p, ds, &mut dk[i * d..(i + 1) * d]);
                } else {
                    for ((g, kc), pc) in dq[j * d..(j + 1) * d].iter_mut().zip(ki).zip(p) {
                        *g += ds * (kc + pc);
                    }
                    for (g, qc) in dk[i * d..(i + 1) * d].iter_mut().zip(qj) {
                        *g += ds * qc;
                    }
                }
            }
        }
        for i in 0..n {
            let xi = &t.x[i * d..(i + 1) * d];
            let dvi = &dv[i * d..(i + 1) * d];
            gl.value.matrix.add_outer(dvi, xi);
            for (b, v) in gl.value.bias.iter_mut().zip(dvi) {
                *b += v;
            }
            layer.value.matrix.matvec_t_acc(dvi, &mut dx[i * d..(i + 1) * d]);
            if let (Some(b), Some(gb)) = (bil, gl.weight.bilinear_mut()) {
                let dqi = &dq[i * d..(i + 1) * d];
                let dki = &dk[i * d..(i + 1) * d];
                gb.query.add_outer(dqi, xi);
                gb.key.add_outer(dki, xi);
                b.query.matvec_t_acc(dqi, &mut dx[i * d..(i + 1) * d]);
                b.key.matvec_t_acc(dki, &mut dx[i * d..(i + 1) * d]);
            }
        }
        dy = dx;
    }

    for (j, tok) in tokens.iter().enumerate() {
        let dxj = &dy[j * d..(j + 1) * d];
        let cols = g.embedding.token.cols();
        let row = &mut g.embedding.token.data_mut()[tok * cols..(tok + 1) * cols];
        for (r, v) in row.iter_mut().zip(dxj) {
            *r += v;
        }
        if let Some(table) = &mut g.embedding.position {
            let idx = table.row_index(j + 1);
            let cols = table.rows.cols();
            let row = &mut table.rows.data_mut()[idx * cols..(idx + 1) * cols];
            for (r, v) in row.iter_mut().zip(dxj) {
                *r += v;
            }
        }
    }
    Ok((loss, g, clamp_hits))
}

/// Mean cross-entropy of `T(α_1..α_j)` against `targets[j]` over every
/// position of every example.
pub fn loss_next_token(model: &TransformerModel, batch: &Batch) -> Result<f64> {
    batch.check(&model.alphabet)?;
    let total: Result<Vec<f64>> = batch
        .inputs
        .par_iter()
        .zip(&batch.targets)
        .map(|(x, t)| {
            let dists = model.forward_prefixes(x)?;
            Ok(dists
                .iter()
                .zip(t)
                .map(|(d, tok)| -d.get(*tok).max(f64::MIN_POSITIVE).ln())
                .sum())
        })
        .collect();
    Ok(total?.iter().sum::<f64>() / batch.positions() as f64)
}

/// Exact reverse-mode gradient of [`loss_next_token`].
pub fn grad(model: &TransformerModel, batch: &Batch) -> Result<GradientRecord> {
    check_trainable(model)?;
    batch.check(&model.alphabet)?;
    let parts: Result<Vec<(f64, TransformerModel, usize)>> = batch
        .inputs
        .par_iter()
        .zip(&batch.targets)
        .map(|(x, t)| example_grad(model, x, t))
        .collect();
    let parts = parts?;
    let scale = 1.0 / batch.positions() as f64;
    let mut total = zeroed(model);
    let mut loss = 0.0;
    let mut clamp_hits = 0;
    {
        let mut acc = params_mut(&mut total);
        for (l, g, c) in &parts {
            loss += l;
            clamp_hits += c;
            for (dst, src) in acc.iter_mut().zip(params(g)) {
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        for block in acc.iter_mut() {
            block.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(GradientRecord {
        loss: loss * scale,
        grads: total,
        clamp_hits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub block: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub clamp_hits: usize,
}

/// Below this magnitude both derivatives count as zero and the error is
/// measured absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a − f| / max(|a|, |f|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares [`grad`] with central differences of step `h` at `samples`
/// uniformly chosen parameters.
pub fn gradient_check(
    model: &TransformerModel,
    batch: &Batch,
    samples: usize,
    h: f64,
    rng: &RngStream,
) -> Result<GradCheckReport> {
    let record = grad(model, batch)?;
    let analytic = record.flat();
    let names = param_names(model);
    let sizes: Vec<usize> = params(model).iter().map(|b| b.len()).collect();
    let mut r = rng.rng();
    let mut probe = model.clone();
    let mut entries = Vec::with_capacity(samples);
    for _ in 0..samples {
        let flat_idx = r.random_range(0..analytic.len());
        let (mut block, mut local) = (0, flat_idx);
        while local >= sizes[block] {
            local -= sizes[block];
            block += 1;
        }
        let original = params(&probe)[block][local];
        params_mut(&mut probe)[block][local] = original + h;
        let plus = loss_next_token(&probe, batch)?;
        params_mut(&mut probe)[block][local] = original - h;
        let minus = loss_next_token(&probe, batch)?;
        params_mut(&mut probe)[block][local] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[flat_idx];
        entries.push(GradCheckEntry {
            block: names[block].clone(),
            index: local,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        clamp_hits: record.clamp_hits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub spec: InfiniteSequenceSpec,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Linear warmup, then cosine decay to `floor · lr`.
    WarmupCosine { warmup: usize, floor: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::WarmupCosine { warmup, floor } => {
                if step < warmup {
                    base * (step + 1) as f64 / warmup as f64
                } else {
                    let span = total.saturating_sub(warmup).max(1) as f64;
                    let t = ((step - warmup) as f64 / span).min(1.0);
                    let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
                    base * (floor + (1.0 - floor) * cos)
                }
            }
        }
    }
}

fn default_lr() -> f64 {
    3e-4
}
fn default_schedule() -> LrSchedule {
    LrSchedule::Constant
}
fn default_hidden_mult() -> usize {
    2
}
fn default_positional() -> PositionalKind {
    PositionalKind::RotaryRelative
}
fn default_attention() -> AttentionKind {
    AttentionKind::Softmax
}
fn default_nonlinearity() -> Nonlinearity {
    Nonlinearity::Gelu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainableConfig {
    #[serde(default)]
    pub alphabet: Alphabet,
    pub dim: usize,
    pub layers: usize,
    #[serde(default = "default_hidden_mult")]
    pub hidden_mult: usize,
    #[serde(default = "default_positional")]
    pub positional: PositionalKind,
    #[serde(default = "default_attention")]
    pub attention: AttentionKind,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub layer_norm: bool,
    /// Rotary clipping offset; defaults to half the context so that clipped
    /// offsets occur during training.
    #[serde(default)]
    pub max_offset: Option<usize>,
    pub context: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_schedule")]
    pub schedule: LrSchedule,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mixture: Vec<MixtureComponent>,
    /// Window starts are uniform in `0..=start_range`; defaults to the context.
    #[serde(default)]
    pub start_range: Option<usize>,
}

impl TrainableConfig {
    pub fn new(dim: usize, layers: usize, context: usize, mixture: Vec<MixtureComponent>) -> Self {
        Self {
            alphabet: Alphabet::binary(),
            dim,
            layers,
            hidden_mult: default_hidden_mult(),
            positional: default_positional(),
            attention: default_attention(),
            nonlinearity: default_nonlinearity(),
            layer_norm: false,
            max_offset: None,
            context,
            lr: default_lr(),
            schedule: default_schedule(),
            steps: 0,
            batch_size: 8,
            seed: 0,
            mixture,
            start_range: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context < 2 {
            return Err(Error::Config("context length must be at least 2".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.mixture.is_empty()
            || self.mixture.iter().any(|c| !(c.weight >= 0.0) || !c.weight.is_finite())
            || self.mixture.iter().map(|c| c.weight).sum::<f64>() <= 0.0
        {
            return Err(Error::Config(
                "mixture weights must be nonnegative with a positive sum".into(),
            ));
        }
        for c in &self.mixture {
            c.spec
                .validate(&self.alphabet)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn architecture(&self) -> ArchitectureConfig {
        let mut arch = ArchitectureConfig::new(self.dim, self.layers);
        arch.alphabet = self.alphabet.clone();
        arch.hidden_mult = self.hidden_mult;
        arch.positional = self.positional;
        arch.attention = self.attention;
        arch.nonlinearity = self.nonlinearity;
        arch.layer_norm = self.layer_norm;
        arch.max_offset = self
            .max_offset
            .unwrap_or((self.context / 2).clamp(1, DEFAULT_MAX_OFFSET));
        arch
    }
}

/// Draws `batch_size` windows of `context + 1` tokens from the mixture.
pub fn sample_batch<R: Rng>(config: &TrainableConfig, rng: &mut R) -> Result<Batch> {
    let weights: Vec<f64> = config.mixture.iter().map(|c| c.weight).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let range = config.start_range.unwrap_or(config.context);
    let windows: Vec<Vec<Token>> = (0..config.batch_size)
        .map(|_| {
            let spec = &config.mixture[pick.sample(rng)].spec;
            let start = rng.random_range(0..=range);
            spec.prefix(start + config.context + 1)[start..].to_vec()
        })
        .collect();
    Batch::from_windows(&windows)
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(size: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; size],
            v: vec![0.0; size],
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut TransformerModel, grad: &GradientRecord, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut idx = 0;
        for (p, g) in params_mut(model).into_iter().zip(grad.blocks()) {
            for (pv, gv) in p.iter_mut().zip(g) {
                let m = &mut self.m[idx];
                let v = &mut self.v[idx];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                *pv -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                idx += 1;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TransformerModel,
    pub losses: Vec<f64>,
    pub clamp_hits: usize,
}

/// Seeded minibatch training from a fresh random model.
pub fn train(config: &TrainableConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let root = RngStream::new(config.seed);
    let init_seed = root.fork(0).rng().random::<u64>();
    let model = random_model(&config.architecture(), init_seed)?;
    train_from(model, config, &root.fork(1))
}

/// Continues training `model` with `config`'s data and optimizer settings.
pub fn train_from(
    mut model: TransformerModel,
    config: &TrainableConfig,
    data: &RngStream,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_trainable(&model)?;
    let mut rng = data.rng();
    let mut adam = Adam::new(param_count(&model));
    let mut losses = Vec::with_capacity(config.steps);
    let mut clamp_hits = 0;
    for step in 0..config.steps {
        let batch = sample_batch(config, &mut rng)?;
        let g = grad(&model, &batch)?;
        if !g.loss.is_finite() || !g.all_finite() {
            return Err(Error::Divergence { step, loss: g.loss });
        }
        clamp_hits += g.clamp_hits;
        losses.push(g.loss);
        adam.step(&mut model, &g, config.schedule.rate(config.lr, step, config.steps));
    }
    Ok(TrainOutcome {
        model,
        losses,
        clamp_hits,
    })
}

/// Plain gradient descent with a fixed step; used to check descent.
pub fn sgd_step(model: &mut TransformerModel, grad: &GradientRecord, lr: f64) {
    for (p, g) in params_mut(model).into_iter().zip(grad.blocks()) {
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv -= lr * gv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructive::{build_single_learner, SingleLearnerSpec};
    use crate::model::{Embedding, Matrix};

    fn small_model(seed: u64, attention: AttentionKind, positional: PositionalKind) -> TransformerModel {
        let mut arch = ArchitectureConfig::new(6, 2);
        arch.attention = attention;
        arch.positional = positional;
        arch.max_offset = 5;
        arch.layer_norm = seed % 2 == 0;
        random_model(&arch, seed).unwrap()
    }

    fn batch(seed: u64, examples: usize, len: usize) -> Batch {
        let mut r = RngStream::new(seed).rng();
        let windows: Vec<Vec<Token>> = (0..examples)
            .map(|_| (0..len).map(|_| r.random_range(0..2)).collect())
            .collect();
        Batch::from_windows(&windows).unwrap()
    }

    #[test]
    fn batch_targets_shift_inputs() {
        let b = Batch::from_windows(&[vec![0, 1, 1, 0]]).unwrap();
        assert_eq!(b.inputs[0], vec![0, 1, 1]);
        assert_eq!(b.targets[0], vec![1, 1, 0]);
        assert!(Batch::from_windows(&[vec![0]]).is_err());
    }

    #[test]
    fn uniform_readout_gives_ln2() {
        let mut m = small_model(1, AttentionKind::Softmax, PositionalKind::RotaryRelative);
        if let Readout::Softmax { weight, bias } = &mut m.readout {
            weight.data_mut().fill(0.0);
            bias.fill(0.0);
        }
        let b = batch(2, 3, 9);
        assert!((loss_next_token(&m, &b).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((grad(&m, &b).unwrap().loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn near_perfect_learner_loss() {
        let m = build_single_learner(&SingleLearnerSpec::new(
            InfiniteSequenceSpec::constant(0),
            1e-6,
        ))
        .unwrap();
        let b = Batch::from_windows(&[vec![0; 12], vec![0; 12]]).unwrap();
        let loss = loss_next_token(&m, &b).unwrap();
        assert!((loss + (1.0 - 1e-6f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn tape_loss_matches_forward_oracle() {
        for seed in 0..4 {
            let m = small_model(seed, AttentionKind::Softmax, PositionalKind::Sinusoidal);
            let b = batch(seed + 10, 3, 11);
            let oracle = loss_next_token(&m, &b).unwrap();
            let taped = grad(&m, &b).unwrap().loss;
            assert!((oracle - taped).abs() < 1e-12, "{oracle} vs {taped}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let kinds = [
            (AttentionKind::Softmax, PositionalKind::RotaryRelative),
            (AttentionKind::Softmax, PositionalKind::Sinusoidal),
            (AttentionKind::Ssmax, PositionalKind::RotaryRelative),
            (AttentionKind::Ssmax, PositionalKind::ConstantZero),
        ];
        for (s, (att, pos)) in kinds.iter().enumerate() {
            let m = small_model(s as u64 + 20, *att, *pos);
            let b = batch(s as u64 + 30, 2, 8);
            let report = gradient_check(&m, &b, 60, 1e-5, &RngStream::new(s as u64)).unwrap();
            assert_eq!(report.clamp_hits, 0);
            assert!(report.max_rel_error <= 1e-4, "{att:?}/{pos:?}: {:?}", report
                .entries
                .iter()
                .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)));
        }
    }

    #[test]
    fn trainable_position_table_gets_gradients() {
        let mut m = small_model(3, AttentionKind::Softmax, PositionalKind::RotaryRelative);
        let mut r = RngStream::new(4).rng();
        m.embedding = Embedding {
            token: m.embedding.token.clone(),
            position: Some(crate::model::PositionTable {
                preamble: 2,
                period: 3,
                rows: Matrix::random(5, 6, 0.5, &mut r),
            }),
        };
        let b = batch(5, 2, 9);
        let report = gradient_check(&m, &b, 80, 1e-5, &RngStream::new(6)).unwrap();
        assert!(report.max_rel_error <= 1e-4);
    }

    #[test]
    fn duplicated_examples_do_not_change_gradient() {
        let m = small_model(9, AttentionKind::Softmax, PositionalKind::RotaryRelative);
        let one = batch(11, 1, 10);
        let two = Batch {
            inputs: vec![one.inputs[0].clone(), one.inputs[0].clone()],
            targets: vec![one.targets[0].clone(), one.targets[0].clone()],
        };
        let g1 = grad(&m, &one).unwrap().flat();
        let g2 = grad(&m, &two).unwrap().flat();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let m = small_model(12, AttentionKind::Softmax, PositionalKind::RotaryRelative);
        let b = batch(13, 4, 9);
        let mut rev = b.clone();
        rev.inputs.reverse();
        rev.targets.reverse();
        let (l1, l2) = (loss_next_token(&m, &b).unwrap(), loss_next_token(&m, &rev).unwrap());
        assert!((l1 - l2).abs() < 1e-14);
    }

    #[test]
    fn zero_signal_gives_small_gradient() {
        let mut m = small_model(14, AttentionKind::Softmax, PositionalKind::RotaryRelative);
        if let Readout::Softmax { weight, bias } = &mut m.readout {
            weight.data_mut().fill(0.0);
            bias.copy_from_slice(&[60.0, -60.0]);
        }
        let b = Batch::from_windows(&[vec![0; 10]]).unwrap();
        assert!(grad(&m, &b).unwrap().norm() < 1e-20);
    }

    fn zeros_config(steps: usize) -> TrainableConfig {
        let mut c = TrainableConfig::new(
            8,
            1,
            16,
            vec![MixtureComponent {
                spec: InfiniteSequenceSpec::constant(0),
                weight: 1.0,
            }],
        );
        c.steps = steps;
        c.seed = 5;
        c
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let c = zeros_config(0);
        let out = train(&c).unwrap();
        assert!(out.losses.is_empty());
        let again = train(&c).unwrap();
        assert_eq!(out.model, again.model);
    }

    #[test]
    fn learns_constant_sequence() {
        let mut c = zeros_config(200);
        c.lr = 1e-2;
        let out = train(&c).unwrap();
        assert!(*out.losses.last().unwrap() < 0.01, "{:?}", out.losses.last());
        let again = train(&c).unwrap();
        assert_eq!(out.losses, again.losses);
        assert_eq!(out.model, again.model);
    }

    #[test]
    fn small_steps_descend() {
        let c = zeros_config(0);
        let mut model = train(&c).unwrap().model;
        let b = Batch::from_windows(&[vec![0; 17], vec![0; 17]]).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let g = grad(&model, &b).unwrap();
            assert!(g.loss <= prev + 1e-15, "{} > {prev}", g.loss);
            prev = g.loss;
            sgd_step(&mut model, &g, 1e-3);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = zeros_config(1);
        c.context = 1;
        assert!(train(&c).is_err());
        let mut c = zeros_config(1);
        c.mixture[0].weight = 0.0;
        assert!(matches!(train(&c), Err(Error::Config(_))));
    }
}
