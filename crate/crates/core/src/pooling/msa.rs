//! Single-layer multi-head self-attention over `1 x 1 x d` tokens with a
//! learned bias per head and pairwise-distance bucket, read out by a mean
//! over tokens.

use serde::{Deserialize, Serialize};

use super::gap::{check_dims, support_indices};
use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsaPoolConfig {
    pub heads: usize,
    /// Token width `d` (input channels); also the output width.
    pub model_width: usize,
    /// Per-head query/key/value width.
    pub key_width: usize,
    pub buckets: usize,
}

impl MsaPoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_width == 0 || self.key_width == 0 || self.buckets == 0 {
            return Err(Error::Parameter("attention sizes must all be >= 1".into()));
        }
        Ok(())
    }

    fn inner(&self) -> usize {
        self.heads * self.key_width
    }

    pub fn parameter_count(&self) -> usize {
        4 * self.inner() * self.model_width + self.heads * self.buckets
    }
}

/// Projection matrices (row-major) and the distance bias table.
///
/// `query`, `key`, `value`: `(heads · key_width) x d`; `output`:
/// `d x (heads · key_width)`; `bias`: `heads x buckets`.
#[derive(Clone, Debug, PartialEq)]
pub struct MsaWeights<T> {
    pub query: Vec<T>,
    pub key: Vec<T>,
    pub value: Vec<T>,
    pub output: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> MsaWeights<T> {
    pub fn zeros(cfg: &MsaPoolConfig) -> Self {
        let p = cfg.inner() * cfg.model_width;
        Self {
            query: vec![T::zero(); p],
            key: vec![T::zero(); p],
            value: vec![T::zero(); p],
            output: vec![T::zero(); p],
            bias: vec![T::zero(); cfg.heads * cfg.buckets],
        }
    }

    fn check(&self, cfg: &MsaPoolConfig) -> Result<()> {
        let p = cfg.inner() * cfg.model_width;
        if [self.query.len(), self.key.len(), self.value.len(), self.output.len()] != [p; 4]
            || self.bias.len() != cfg.heads * cfg.buckets
        {
            return Err(Error::Shape("attention weights do not match the config".into()));
        }
        Ok(())
    }
}

/// Bucket of the Euclidean distance between two pixels: `B` equal bins
/// from 0 to the grid diagonal.
pub fn distance_bucket(a: (usize, usize), b: (usize, usize), dims: (usize, usize), buckets: usize) -> usize {
    let dr = a.0 as i64 - b.0 as i64;
    let dc = a.1 as i64 - b.1 as i64;
    let d2 = (dr * dr + dc * dc) as f64;
    let diag2 = ((dims.0 - 1).pow(2) + (dims.1 - 1).pow(2)) as f64;
    if diag2 == 0.0 {
        return 0;
    }
    let k = ((d2 / diag2).sqrt() * buckets as f64).floor() as usize;
    k.min(buckets - 1)
}

/// `out = M x` for row-major `M` with `rows x x.len()`.
fn matvec<T: Real>(m: &[T], x: &[T], rows: usize) -> Vec<T> {
    let cols = x.len();
    (0..rows)
        .map(|r| m[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| *a * *b).sum())
        .collect()
}

struct Forward<T> {
    tokens: Vec<Vec<T>>,
    q: Vec<Vec<T>>,
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    buckets: Vec<usize>,
    /// Per head, `n x n` attention weights.
    attn: Vec<Vec<T>>,
    mean_o: Vec<T>,
    out: Vec<T>,
}

fn forward<T: Real>(
    channels: &[RealGrid<T>],
    mask: &RealGrid<T>,
    cfg: &MsaPoolConfig,
    w: &MsaWeights<T>,
) -> Result<(Forward<T>, Vec<usize>)> {
    cfg.validate()?;
    w.check(cfg)?;
    if channels.len() != cfg.model_width {
        return Err(Error::Shape(format!(
            "{} channels given, attention width is {}",
            channels.len(),
            cfg.model_width
        )));
    }
    check_dims(channels, mask.dims())?;
    let idx = support_indices(mask)?;
    let dims = mask.dims();
    let n = idx.len();
    let inner = cfg.inner();
    let tokens: Vec<Vec<T>> = idx
        .iter()
        .map(|&p| channels.iter().map(|g| g.as_slice()[p]).collect())
        .collect();
    let q: Vec<Vec<T>> = tokens.iter().map(|t| matvec(&w.query, t, inner)).collect();
    let k: Vec<Vec<T>> = tokens.iter().map(|t| matvec(&w.key, t, inner)).collect();
    let v: Vec<Vec<T>> = tokens.iter().map(|t| matvec(&w.value, t, inner)).collect();
    let pos: Vec<(usize, usize)> = idx.iter().map(|&p| (p / dims.1, p % dims.1)).collect();
    let mut buckets = Vec::with_capacity(n * n);
    for &a in &pos {
        for &b in &pos {
            buckets.push(distance_bucket(a, b, dims, cfg.buckets));
        }
    }
    let scale = T::one() / T::of_usize(cfg.key_width).sqrt();
    let dk = cfg.key_width;
    let mut attn = Vec::with_capacity(cfg.heads);
    let mut mean_o = vec![T::zero(); inner];
    for h in 0..cfg.heads {
        let span = h * dk..(h + 1) * dk;
        let mut a = vec![T::zero(); n * n];
        for i in 0..n {
            let row = &mut a[i * n..(i + 1) * n];
            let qi = &q[i][span.clone()];
            for (j, slot) in row.iter_mut().enumerate() {
                let dot: T = qi.iter().zip(&k[j][span.clone()]).map(|(x, y)| *x * *y).sum();
                *slot = dot * scale + w.bias[h * cfg.buckets + buckets[i * n + j]];
            }
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s = s + *x;
            }
            for x in row.iter_mut() {
                *x = *x / s;
            }
        }
        // Mean over queries of Σ_j A_ij v_j = Σ_j (mean_i A_ij) v_j.
        let inv_n = T::one() / T::of_usize(n);
        for j in 0..n {
            let col: T = (0..n).map(|i| a[i * n + j]).sum::<T>() * inv_n;
            for (o, x) in mean_o[span.clone()].iter_mut().zip(&v[j][span.clone()]) {
                *o = *o + col * *x;
            }
        }
        attn.push(a);
    }
    let out = matvec(&w.output, &mean_o, cfg.model_width);
    Ok((Forward { tokens, q, k, v, buckets, attn, mean_o, out }, idx))
}

pub fn msa_pool<T: Real>(
    channels: &[RealGrid<T>],
    mask: &RealGrid<T>,
    cfg: &MsaPoolConfig,
    weights: &MsaWeights<T>,
) -> Result<Vec<T>> {
    Ok(forward(channels, mask, cfg, weights)?.0.out)
}

/// Input gradients and weight gradients for output gradient `grad`.
pub fn msa_backward<T: Real>(
    channels: &[RealGrid<T>],
    mask: &RealGrid<T>,
    cfg: &MsaPoolConfig,
    weights: &MsaWeights<T>,
    grad: &[T],
) -> Result<(Vec<RealGrid<T>>, MsaWeights<T>)> {
    let (f, idx) = forward(channels, mask, cfg, weights)?;
    if grad.len() != cfg.model_width {
        return Err(Error::Shape("attention gradient has the wrong length".into()));
    }
    let (d, inner, dk, n) = (cfg.model_width, cfg.inner(), cfg.key_width, idx.len());
    let mut gw = MsaWeights::zeros(cfg);
    for (r, &g) in grad.iter().enumerate() {
        for c in 0..inner {
            gw.output[r * inner + c] = g * f.mean_o[c];
        }
    }
    // Gradient of every per-token attended value (identical for all queries).
    let inv_n = T::one() / T::of_usize(n);
    let g_o: Vec<T> = (0..inner)
        .map(|c| (0..d).map(|r| weights.output[r * inner + c] * grad[r]).sum::<T>() * inv_n)
        .collect();
    let scale = T::one() / T::of_usize(dk).sqrt();
    let mut gq = vec![vec![T::zero(); inner]; n];
    let mut gk = vec![vec![T::zero(); inner]; n];
    let mut gv = vec![vec![T::zero(); inner]; n];
    for h in 0..cfg.heads {
        let span = h * dk..(h + 1) * dk;
        let a = &f.attn[h];
        let ga: Vec<T> = (0..n)
            .map(|j| f.v[j][span.clone()].iter().zip(&g_o[span.clone()]).map(|(x, y)| *x * *y).sum())
            .collect();
        for j in 0..n {
            let col: T = (0..n).map(|i| a[i * n + j]).sum();
            for (g, x) in gv[j][span.clone()].iter_mut().zip(&g_o[span.clone()]) {
                *g = *g + col * *x;
            }
        }
        for i in 0..n {
            let row = &a[i * n..(i + 1) * n];
            let avg: T = row.iter().zip(&ga).map(|(x, y)| *x * *y).sum();
            for j in 0..n {
                let gl = row[j] * (ga[j] - avg);
                gw.bias[h * cfg.buckets + f.buckets[i * n + j]] = gw.bias[h * cfg.buckets + f.buckets[i * n + j]] + gl;
                let s = gl * scale;
                for c in span.clone() {
                    gq[i][c] = gq[i][c] + s * f.k[j][c];
                    gk[j][c] = gk[j][c] + s * f.q[i][c];
                }
            }
        }
    }
    let mut g_tokens = vec![vec![T::zero(); d]; n];
    for (proj, gproj, gmat) in [
        (&weights.query, &gq, &mut gw.query),
        (&weights.key, &gk, &mut gw.key),
        (&weights.value, &gv, &mut gw.value),
    ] {
        for (t, (x, g)) in f.tokens.iter().zip(gproj).enumerate() {
            for c in 0..inner {
                if g[c] == T::zero() {
                    continue;
                }
                for r in 0..d {
                    gmat[c * d + r] = gmat[c * d + r] + g[c] * x[r];
                    g_tokens[t][r] = g_tokens[t][r] + g[c] * proj[c * d + r];
                }
            }
        }
    }
    let dims = mask.dims();
    let mut g_channels: Vec<RealGrid<T>> = (0..d).map(|_| RealGrid::zeros(dims.0, dims.1)).collect();
    for (t, &p) in idx.iter().enumerate() {
        for (r, g) in g_channels.iter_mut().enumerate() {
            g.as_mut_slice()[p] = g_tokens[t][r];
        }
    }
    Ok((g_channels, gw))
}
