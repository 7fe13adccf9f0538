use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::numeric::linf_norm;

/// Default clipping horizon for rotary offsets.
pub const DEFAULT_MAX_OFFSET: usize = 512;

/// Positional encodings `p(i, j)` for key position `i <= j`.
///
/// Every kind is a function of the relative offset `j - i` and takes values
/// in a bounded set, so each one is compact with the l∞ bound returned by
/// [`PositionalEncoding::declared_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PositionalEncoding {
    /// `sin(Δ ω_m), cos(Δ ω_m)` pairs with `ω_m = base^(-2m/d)`.
    Sinusoidal { dim: usize, base: f64 },
    /// `cos(Δ' θ_m), sin(Δ' θ_m)` pairs with `Δ' = min(Δ, max_offset)`.
    /// Consumed by rotary weight functions as rotation angles.
    RotaryRelative {
        dim: usize,
        base: f64,
        max_offset: usize,
    },
    /// Row `min(Δ, rows - 1)` of a fixed table.
    TableBounded { table: Matrix, bound: f64 },
    ConstantZero { dim: usize },
}

impl PositionalEncoding {
    pub fn sinusoidal(dim: usize) -> Self {
        Self::Sinusoidal { dim, base: 10_000.0 }
    }

    pub fn rotary(dim: usize, max_offset: usize) -> Self {
        Self::RotaryRelative {
            dim,
            base: 10_000.0,
            max_offset,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Sinusoidal { dim, .. }
            | Self::RotaryRelative { dim, .. }
            | Self::ConstantZero { dim } => *dim,
            Self::TableBounded { table, .. } => table.cols(),
        }
    }

    pub fn declared_bound(&self) -> f64 {
        match self {
            Self::Sinusoidal { .. } | Self::RotaryRelative { .. } => 1.0,
            Self::TableBounded { bound, .. } => *bound,
            Self::ConstantZero { .. } => 0.0,
        }
    }

    /// Number of distinct offsets that need materializing for a sequence of
    /// length `n` (clipped kinds saturate).
    fn distinct_offsets(&self, n: usize) -> usize {
        match self {
            Self::Sinusoidal { .. } => n,
            Self::RotaryRelative { max_offset, .. } => n.min(max_offset + 1),
            Self::TableBounded { table, .. } => n.min(table.rows()),
            Self::ConstantZero { .. } => n.min(1),
        }
    }

    pub fn encode_offset_into(&self, delta: usize, out: &mut [f64]) {
        match self {
            Self::Sinusoidal { dim, base } => {
                for m in 0..dim / 2 {
                    let freq = base.powf(-2.0 * m as f64 / *dim as f64);
                    let angle = delta as f64 * freq;
                    out[2 * m] = angle.sin();
                    out[2 * m + 1] = angle.cos();
                }
                if dim % 2 == 1 {
                    out[dim - 1] = (delta as f64).sin();
                }
            }
            Self::RotaryRelative {
                dim,
                base,
                max_offset,
            } => {
                let clipped = delta.min(*max_offset) as f64;
                for m in 0..dim / 2 {
                    let theta = base.powf(-2.0 * m as f64 / *dim as f64);
                    let angle = clipped * theta;
                    out[2 * m] = angle.cos();
                    out[2 * m + 1] = angle.sin();
                }
                if dim % 2 == 1 {
                    out[dim - 1] = 0.0;
                }
            }
            Self::TableBounded { table, .. } => {
                out.copy_from_slice(table.row(delta.min(table.rows() - 1)));
            }
            Self::ConstantZero { .. } => out.fill(0.0),
        }
    }

    /// `p(i, j)` for 1-based positions `i <= j`.
    pub fn encode(&self, i: usize, j: usize) -> Vec<f64> {
        assert!(1 <= i && i <= j, "positional encoding needs 1 <= i <= j");
        let mut out = vec![0.0; self.dim()];
        self.encode_offset_into(j - i, &mut out);
        out
    }

    /// Largest l∞ norm over all offsets `0..horizon`.
    pub fn max_norm(&self, horizon: usize) -> f64 {
        let mut buf = vec![0.0; self.dim()];
        (0..self.distinct_offsets(horizon))
            .map(|delta| {
                self.encode_offset_into(delta, &mut buf);
                linf_norm(&buf)
            })
            .fold(0.0, f64::max)
    }
}

/// Materialized encodings for offsets `0..len`, grown on demand.
#[derive(Debug, Clone)]
pub(crate) struct OffsetCache {
    dim: usize,
    rows: Vec<f64>,
    count: usize,
}

impl OffsetCache {
    pub fn new(pe: &PositionalEncoding, n: usize) -> Self {
        let mut cache = Self {
            dim: pe.dim(),
            rows: Vec::new(),
            count: 0,
        };
        cache.ensure(pe, n);
        cache
    }

    pub fn ensure(&mut self, pe: &PositionalEncoding, n: usize) {
        let want = pe.distinct_offsets(n).max(1);
        if want <= self.count {
            return;
        }
        self.rows.resize(want * self.dim, 0.0);
        for delta in self.count..want {
            let (start, end) = (delta * self.dim, (delta + 1) * self.dim);
            pe.encode_offset_into(delta, &mut self.rows[start..end]);
        }
        self.count = want;
    }

    #[inline]
    pub fn get(&self, delta: usize) -> &[f64] {
        let idx = delta.min(self.count - 1);
        &self.rows[idx * self.dim..(idx + 1) * self.dim]
    }
}
