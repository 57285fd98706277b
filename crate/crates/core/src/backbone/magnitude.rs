//! Magnitude-only operations: each value `z` becomes `a(|z|) · z / |z|`.
//!
//! The unit phasor can be smoothed as `z / sqrt(|z|² + ε²)`. With `ε = 0`
//! the phasor is exact and zero inputs stay zero. A small positive `ε` keeps
//! gradients bounded near the origin and suppresses phase noise on values
//! that are zero up to round-off. Either way the phase of every nonzero
//! value is untouched.

use super::bundle::StreamBundle;
use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::scalar::{Complex, Real};

#[inline]
fn phasor_scale<T: Real>(r2: T, phase_eps: T) -> T {
    if phase_eps > T::zero() {
        T::one() / (r2 + phase_eps * phase_eps).sqrt()
    } else if r2 > T::zero() {
        T::one() / r2.sqrt()
    } else {
        T::zero()
    }
}

/// Gradient through `out = a · q(|z|) · z` given `∂L/∂a` contributions
/// already reduced into `g_r` (w.r.t. `|z|`).
///
/// Returns the complex input gradient for output gradient `g` when the
/// magnitude map has local derivative folded into `g_r`.
#[inline]
fn phasor_backward<T: Real>(z: Complex<T>, g: Complex<T>, a: T, g_r: T, phase_eps: T) -> Complex<T> {
    let r2 = z.norm_sqr();
    let q = phasor_scale(r2, phase_eps);
    let proj = g.re * z.re + g.im * z.im;
    let unit = if r2 > T::zero() { z / r2.sqrt() } else { Complex::new(T::zero(), T::zero()) };
    g * (a * q) - z * (a * q * q * q * proj) + unit * g_r
}

/// `∂L/∂a` for `out = a · q · z`.
#[inline]
fn scalar_grad<T: Real>(z: Complex<T>, g: Complex<T>, phase_eps: T) -> T {
    (g.re * z.re + g.im * z.im) * phasor_scale(z.norm_sqr(), phase_eps)
}

fn check_channels<T: Real>(bundle: &StreamBundle<T>, n: usize, what: &str) -> Result<()> {
    if bundle.total_channels() != n {
        return Err(Error::Shape(format!(
            "{what} has {n} entries, bundle has {} channels",
            bundle.total_channels()
        )));
    }
    Ok(())
}

/// Harmonic ReLU with an exact phasor: `z ↦ max(|z| + b, 0) · z / |z|`.
/// One bias per channel in (order, channel) enumeration order.
pub fn h_relu<T: Real>(input: &StreamBundle<T>, bias: &[T]) -> Result<StreamBundle<T>> {
    relu_forward(input, bias, T::zero())
}

pub fn relu_forward<T: Real>(input: &StreamBundle<T>, bias: &[T], phase_eps: T) -> Result<StreamBundle<T>> {
    check_channels(input, bias.len(), "bias")?;
    let mut out = input.clone();
    for (g, &b) in out.channels_mut().zip(bias) {
        for z in g.as_mut_slice() {
            let r2 = z.norm_sqr();
            let a = (r2.sqrt() + b).max(T::zero());
            *z = *z * (a * phasor_scale(r2, phase_eps));
        }
    }
    Ok(out)
}

/// Returns the input gradient and adds the bias gradient into `dbias`.
pub fn relu_backward<T: Real>(
    input: &StreamBundle<T>,
    bias: &[T],
    phase_eps: T,
    grad: &StreamBundle<T>,
    dbias: &mut [T],
) -> Result<StreamBundle<T>> {
    check_channels(input, bias.len(), "bias")?;
    if !input.same_layout(grad) || dbias.len() != bias.len() {
        return Err(Error::Shape("gradient layout does not match input".into()));
    }
    let mut out = grad.clone();
    for (((gi, zi), &b), db) in out.channels_mut().zip(input.channels()).zip(bias).zip(dbias.iter_mut()) {
        for (g, &z) in gi.as_mut_slice().iter_mut().zip(zi.as_slice()) {
            let r = z.norm();
            let pre = r + b;
            let (a, g_r) = if pre > T::zero() {
                (pre, scalar_grad(z, *g, phase_eps))
            } else {
                (T::zero(), T::zero())
            };
            *db = *db + g_r;
            *g = phasor_backward(z, *g, a, g_r, phase_eps);
        }
    }
    Ok(out)
}

/// Running magnitude statistics for evaluation mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: T,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: T::of(0.1),
        }
    }
}

/// Per-channel normalization statistics used by a forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    mean: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
}

/// Batch norm acting on magnitudes.
///
/// Statistics run over batch × support pixels; `support = None` means every
/// pixel.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm<'a, T: Real> {
    pub gamma: &'a [T],
    pub delta: &'a [T],
    pub eps: T,
    pub phase_eps: T,
    pub support: Option<&'a RealGrid<T>>,
    /// When set, the harmonic ReLU is fused in: the signed normalized
    /// magnitude `s` becomes `max(s + bias, 0)`.
    pub relu_bias: Option<&'a [T]>,
}

impl<'a, T: Real> BatchNorm<'a, T> {
    fn check(&self, batch: &[StreamBundle<T>]) -> Result<()> {
        if !(self.eps > T::zero()) {
            return Err(Error::Parameter(format!("batch norm eps must be > 0, got {}", self.eps)));
        }
        let first = batch
            .first()
            .ok_or_else(|| Error::Data("batch norm needs a non-empty batch".into()))?;
        if batch.iter().any(|b| !b.same_layout(first)) {
            return Err(Error::Shape("batch elements have different layouts".into()));
        }
        if self.gamma.len() != self.delta.len() {
            return Err(Error::Shape("gamma and delta lengths differ".into()));
        }
        check_channels(first, self.gamma.len(), "gamma")?;
        if let Some(b) = self.relu_bias {
            check_channels(first, b.len(), "relu bias")?;
        }
        if let Some(s) = self.support {
            if s.dims() != first.dims() {
                return Err(Error::Shape("support mask size differs from the features".into()));
            }
        }
        Ok(())
    }

    fn rectify(&self, k: usize, s: T) -> T {
        match self.relu_bias {
            Some(b) => (s + b[k]).max(T::zero()),
            None => s,
        }
    }

    fn in_support(&self, p: usize) -> bool {
        self.support.is_none_or(|s| s.as_slice()[p] != T::zero())
    }

    pub fn forward(
        &self,
        batch: &[StreamBundle<T>],
        stats: &mut RunningStats<T>,
        train: bool,
    ) -> Result<(Vec<StreamBundle<T>>, BatchNormCache<T>)> {
        self.check(batch)?;
        let channels = self.gamma.len();
        if stats.mean.len() != channels || stats.var.len() != channels {
            return Err(Error::Shape("running statistics have the wrong length".into()));
        }
        let (mut mean, mut inv_std) = (Vec::with_capacity(channels), Vec::with_capacity(channels));
        for k in 0..channels {
            if train {
                let (mut s, mut n) = (0.0f64, 0usize);
                for b in batch {
                    let g = b.channels().nth(k).unwrap();
                    for (p, z) in g.as_slice().iter().enumerate() {
                        if self.in_support(p) {
                            s += z.norm().to_f64();
                            n += 1;
                        }
                    }
                }
                if n == 0 {
                    return Err(Error::Degenerate("batch norm support is empty".into()));
                }
                let mu = s / n as f64;
                let mut v = 0.0f64;
                for b in batch {
                    let g = b.channels().nth(k).unwrap();
                    for (p, z) in g.as_slice().iter().enumerate() {
                        if self.in_support(p) {
                            let d = z.norm().to_f64() - mu;
                            v += d * d;
                        }
                    }
                }
                let var = v / n as f64;
                let m = stats.momentum;
                let unbiased = if n > 1 { var * n as f64 / (n - 1) as f64 } else { var };
                stats.mean[k] = (T::one() - m) * stats.mean[k] + m * T::of(mu);
                stats.var[k] = (T::one() - m) * stats.var[k] + m * T::of(unbiased);
                mean.push(T::of(mu));
                inv_std.push(T::of(1.0 / (var + self.eps.to_f64()).sqrt()));
            } else {
                mean.push(stats.mean[k]);
                inv_std.push(T::one() / (stats.var[k] + self.eps).sqrt());
            }
        }
        let out = batch
            .iter()
            .map(|b| {
                let mut o = b.clone();
                for (k, g) in o.channels_mut().enumerate() {
                    for z in g.as_mut_slice() {
                        let r2 = z.norm_sqr();
                        let a = self.rectify(k, self.gamma[k] * (r2.sqrt() - mean[k]) * inv_std[k] + self.delta[k]);
                        *z = *z * (a * phasor_scale(r2, self.phase_eps));
                    }
                }
                o
            })
            .collect();
        Ok((out, BatchNormCache { mean, inv_std, train }))
    }

    /// Returns input gradients; adds into `dgamma` and `ddelta`.
    pub fn backward(
        &self,
        batch: &[StreamBundle<T>],
        cache: &BatchNormCache<T>,
        grads: &[StreamBundle<T>],
        dgamma: &mut [T],
        ddelta: &mut [T],
    ) -> Result<Vec<StreamBundle<T>>> {
        self.backward_fused(batch, cache, grads, dgamma, ddelta, None)
    }

    /// As [`BatchNorm::backward`], also adding into `dbias` when the ReLU is
    /// fused.
    pub fn backward_fused(
        &self,
        batch: &[StreamBundle<T>],
        cache: &BatchNormCache<T>,
        grads: &[StreamBundle<T>],
        dgamma: &mut [T],
        ddelta: &mut [T],
        mut dbias: Option<&mut [T]>,
    ) -> Result<Vec<StreamBundle<T>>> {
        self.check(batch)?;
        if self.relu_bias.is_some() && dbias.as_ref().map(|d| d.len()) != Some(self.gamma.len()) {
            return Err(Error::Shape("fused batch norm needs a bias gradient buffer".into()));
        }
        if grads.len() != batch.len() || grads.iter().zip(batch).any(|(g, b)| !g.same_layout(b)) {
            return Err(Error::Shape("gradient layout does not match input".into()));
        }
        let channels = self.gamma.len();
        let mut out: Vec<StreamBundle<T>> = grads.to_vec();
        for k in 0..channels {
            let (mu, istd, gamma) = (cache.mean[k], cache.inv_std[k], self.gamma[k]);
            // Per-pixel dL/d(normalized magnitude) and the reductions over it.
            let mut gxhat: Vec<Vec<T>> = Vec::with_capacity(batch.len());
            let (mut sum_g, mut sum_gx, mut n) = (0.0f64, 0.0f64, 0usize);
            let (mut dg, mut dd) = (0.0f64, 0.0f64);
            for (b, g) in batch.iter().zip(grads) {
                let zs = b.channels().nth(k).unwrap().as_slice();
                let gs = g.channels().nth(k).unwrap().as_slice();
                let mut row = Vec::with_capacity(zs.len());
                for (p, (&z, &gv)) in zs.iter().zip(gs).enumerate() {
                    let xhat = (z.norm() - mu) * istd;
                    let ga = if self.rectify(k, gamma * xhat + self.delta[k]) > T::zero() || self.relu_bias.is_none() {
                        scalar_grad(z, gv, self.phase_eps)
                    } else {
                        T::zero()
                    };
                    dg += (ga * xhat).to_f64();
                    dd += ga.to_f64();
                    let gx = ga * gamma;
                    if cache.train && self.in_support(p) {
                        sum_g += gx.to_f64();
                        sum_gx += (gx * xhat).to_f64();
                        n += 1;
                    }
                    row.push(gx);
                }
                gxhat.push(row);
            }
            dgamma[k] = dgamma[k] + T::of(dg);
            ddelta[k] = ddelta[k] + T::of(dd);
            if let Some(db) = dbias.as_deref_mut() {
                db[k] = db[k] + T::of(dd);
            }
            let (mean_g, mean_gx) = if n > 0 {
                (T::of(sum_g / n as f64), T::of(sum_gx / n as f64))
            } else {
                (T::zero(), T::zero())
            };
            for ((b, o), row) in batch.iter().zip(out.iter_mut()).zip(&gxhat) {
                let zs = b.channels().nth(k).unwrap().as_slice();
                let go = o.channels_mut().nth(k).unwrap().as_mut_slice();
                for (p, ((&z, gv), &gx)) in zs.iter().zip(go.iter_mut()).zip(row).enumerate() {
                    let r = z.norm();
                    let xhat = (r - mu) * istd;
                    let mut g_r = gx * istd;
                    if cache.train && self.in_support(p) {
                        g_r = g_r - istd * (mean_g + xhat * mean_gx);
                    }
                    let a = self.rectify(k, gamma * xhat + self.delta[k]);
                    *gv = phasor_backward(z, *gv, a, g_r, self.phase_eps);
                }
            }
        }
        Ok(out)
    }
}

/// Magnitude batch norm with an exact phasor, statistics over all pixels.
pub fn h_batchnorm<T: Real>(
    batch: &[StreamBundle<T>],
    gamma: &[T],
    delta: &[T],
    eps: T,
    stats: &mut RunningStats<T>,
    train: bool,
) -> Result<Vec<StreamBundle<T>>> {
    let bn = BatchNorm {
        gamma,
        delta,
        eps,
        phase_eps: T::zero(),
        support: None,
        relu_bias: None,
    };
    Ok(bn.forward(batch, stats, train)?.0)
}
