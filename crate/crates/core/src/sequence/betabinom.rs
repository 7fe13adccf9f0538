use rand::Rng;
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numeric::RngStream;

/// Shape settings `(u, v)` swept by the positional perturbation experiment.
pub const DEFAULT_SHAPES: [(f64, f64); 8] = [
    (1.0, 1.0),
    (0.5, 0.5),
    (2.0, 2.0),
    (8.0, 8.0),
    (1.0, 8.0),
    (2.0, 5.0),
    (5.0, 2.0),
    (8.0, 1.0),
];

const MAX_CONSECUTIVE_REJECTIONS: usize = 10_000;

fn check_shape(u: f64, v: f64) -> Result<()> {
    if !(u > 0.0 && v > 0.0 && u.is_finite() && v.is_finite()) {
        return Err(Error::invalid(format!(
            "beta-binomial shapes must be positive and finite, got u={u}, v={v}"
        )));
    }
    Ok(())
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

fn ln_pmf(k: u64, n: u64, u: f64, v: f64) -> f64 {
    let (kf, nf) = (k as f64, n as f64);
    ln_choose(n, k) + ln_beta(kf + u, nf - kf + v) - ln_beta(u, v)
}

/// `C(n,k) B(k+u, n−k+v) / B(u,v)`.
pub fn betabinom_pmf(k: u64, n: u64, u: f64, v: f64) -> Result<f64> {
    check_shape(u, v)?;
    if k > n {
        return Err(Error::invalid(format!("k={k} exceeds n={n}")));
    }
    Ok(betabinom_table(n, u, v)?[k as usize])
}

/// `pmf(0..=n)`, built from the ratio
/// `pmf(k+1)/pmf(k) = (n−k)(k+u) / ((k+1)(n−k−1+v))` and normalised by the
/// sum. Every ratio is exactly one when `u = v = 1`, so the uniform case
/// comes out as the correctly rounded `1/(n+1)`.
pub fn betabinom_table(n: u64, u: f64, v: f64) -> Result<Vec<f64>> {
    check_shape(u, v)?;
    let nf = n as f64;
    let mut w = Vec::with_capacity(n as usize + 1);
    w.push(1.0f64);
    for k in 0..n as usize {
        let kf = k as f64;
        let ratio = ((nf - kf) * (kf + u)) / ((kf + 1.0) * (nf - kf - 1.0 + v));
        w.push(w[k] * ratio);
    }
    let total: f64 = w.iter().sum();
    if total.is_finite() && total > 0.0 {
        return Ok(w.iter().map(|x| x / total).collect());
    }
    // the unnormalised weights left the f64 range; fall back to log space
    Ok((0..=n).map(|k| ln_pmf(k, n, u, v).exp()).collect())
}

fn inverse_cdf(cdf: &[f64], x: f64) -> usize {
    cdf.partition_point(|c| *c <= x).min(cdf.len() - 1)
}

/// `count` distinct positions in `1..=n`.
///
/// Each draw takes `k` from BetaBinomial(n, u, v) by inverse CDF and maps it
/// to position `k + 1`; `k = n` (position `n + 1`, the protected last symbol
/// of a length-`n+1` word) and repeats are rejected and redrawn. Should the
/// remaining mass be too small for rejection to make progress, the draw
/// switches to the pmf restricted to unused positions, which is the same
/// conditional distribution.
pub fn sample_positions_betabinomial(
    count: usize,
    n: usize,
    u: f64,
    v: f64,
    rng: &RngStream,
) -> Result<Vec<usize>> {
    if count > n {
        return Err(Error::invalid(format!("cannot draw {count} distinct positions from {n}")));
    }
    let table = betabinom_table(n as u64, u, v)?;
    let mut cdf = Vec::with_capacity(table.len());
    let mut acc = 0.0;
    for p in &table {
        acc += p;
        cdf.push(acc);
    }
    let mut r = rng.rng();
    let mut used = vec![false; n];
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut picked = None;
        for _ in 0..MAX_CONSECUTIVE_REJECTIONS {
            let x: f64 = r.random::<f64>() * acc;
            let k = inverse_cdf(&cdf, x);
            if k < n && !used[k] {
                picked = Some(k);
                break;
            }
        }
        let k = match picked {
            Some(k) => k,
            None => restricted_draw(&table[..n], &used, &mut r),
        };
        used[k] = true;
        out.push(k + 1);
    }
    Ok(out)
}

fn restricted_draw<R: Rng>(pmf: &[f64], used: &[bool], rng: &mut R) -> usize {
    let free: Vec<usize> = (0..pmf.len()).filter(|k| !used[*k]).collect();
    let total: f64 = free.iter().map(|k| pmf[*k]).sum();
    if !(total > 0.0) {
        return free[rng.random_range(0..free.len())];
    }
    let mut x = rng.random::<f64>() * total;
    for &k in &free {
        x -= pmf[k];
        if x < 0.0 {
            return k;
        }
    }
    *free.last().expect("at least one free position")
}
