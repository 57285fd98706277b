//! Harmonic convolution with stream mixing.
//!
//! Output stream `m_out` channel `c` is the sum over linked input streams
//! `m_in` and their channels `c'` of the cross-correlation of the input with
//! the conjugate of a filter of order `m_out - m_in`:
//! `out(p) = Σ_o conj(W(o)) x(p + o)`, zero padded, same size.
//!
//! Correlation runs through padded FFTs. Each filter is a linear combination
//! of fixed per-order ring bases, so basis spectra are computed once per plan
//! and kernel spectra are cheap blends of them.

use serde::{Deserialize, Serialize};

use super::bundle::{check_orders, StreamBundle};
use crate::error::{Error, Result};
use crate::fft::{fast_len, Fft2};
use crate::filters::{FilterBasis, FilterMode, HarmonicFilterSpec};
use crate::grid::{make_circular_mask, mask_in_place, ComplexGrid, RealGrid};
use crate::scalar::{cis, Complex, Real};

/// Structure of a convolution layer without its weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvTopology {
    pub in_orders: Vec<i32>,
    pub in_channels: Vec<usize>,
    pub out_orders: Vec<i32>,
    pub out_channels: Vec<usize>,
    /// `(input order, output order)` pairs; each carries a filter of order
    /// `output - input` for every channel pair.
    pub links: Vec<(i32, i32)>,
    pub size: usize,
    pub rings: usize,
    pub mode: FilterMode,
}

impl ConvTopology {
    /// Every input order feeds every output order.
    pub fn dense(
        in_orders: Vec<i32>,
        in_channels: Vec<usize>,
        out_orders: Vec<i32>,
        out_channels: Vec<usize>,
        size: usize,
        rings: usize,
        mode: FilterMode,
    ) -> Self {
        let links = in_orders
            .iter()
            .flat_map(|&a| out_orders.iter().map(move |&b| (a, b)))
            .collect();
        Self {
            in_orders,
            in_channels,
            out_orders,
            out_channels,
            links,
            size,
            rings,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_orders(&self.in_orders)?;
        check_orders(&self.out_orders)?;
        if self.in_channels.len() != self.in_orders.len()
            || self.out_channels.len() != self.out_orders.len()
        {
            return Err(Error::Wiring("one channel count per order expected".into()));
        }
        if self.in_channels.iter().chain(&self.out_channels).any(|&c| c == 0) {
            return Err(Error::Wiring("channel counts must be positive".into()));
        }
        if self.rings == 0 || self.size < 3 || self.size.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "filter size {} / rings {} invalid",
                self.size, self.rings
            )));
        }
        for (i, &(a, b)) in self.links.iter().enumerate() {
            if !self.in_orders.contains(&a) || !self.out_orders.contains(&b) {
                return Err(Error::Wiring(format!("link {a}->{b} names an absent order")));
            }
            if self.links[..i].contains(&(a, b)) {
                return Err(Error::Wiring(format!("link {a}->{b} repeated")));
            }
        }
        for &b in &self.out_orders {
            if !self.links.iter().any(|&(_, o)| o == b) {
                return Err(Error::Wiring(format!("output order {b} has no incoming link")));
            }
        }
        Ok(())
    }

    fn in_index(&self, order: i32) -> usize {
        self.in_orders.iter().position(|&m| m == order).unwrap()
    }

    fn out_index(&self, order: i32) -> usize {
        self.out_orders.iter().position(|&m| m == order).unwrap()
    }

    /// Number of filters on a link.
    pub fn link_filters(&self, link: usize) -> usize {
        let (a, b) = self.links[link];
        self.in_channels[self.in_index(a)] * self.out_channels[self.out_index(b)]
    }

    /// Ring weights plus one phase offset per filter.
    pub fn parameter_count(&self) -> usize {
        (0..self.links.len())
            .map(|l| self.link_filters(l) * (self.rings + 1))
            .sum()
    }
}

/// Borrowed weights of one link. `radial` is `[out][in][ring]`, `phase` is
/// `[out][in]`.
#[derive(Clone, Copy, Debug)]
pub struct LinkWeights<'a, T> {
    pub radial: &'a [T],
    pub phase: &'a [T],
}

/// Gradients for every link, same layout as [`LinkWeights`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub radial: Vec<Vec<T>>,
    pub phase: Vec<Vec<T>>,
}

/// A layer with explicit per-filter specs.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerSpec<T: Real> {
    topology: ConvTopology,
    /// Per link, `[out][in]` row-major.
    filters: Vec<Vec<HarmonicFilterSpec<T>>>,
    mask_after: bool,
}

impl<T: Real> ConvLayerSpec<T> {
    pub fn new(
        topology: ConvTopology,
        filters: Vec<Vec<HarmonicFilterSpec<T>>>,
        mask_after: bool,
    ) -> Result<Self> {
        topology.validate()?;
        if filters.len() != topology.links.len() {
            return Err(Error::Wiring("one filter list per link expected".into()));
        }
        for (l, list) in filters.iter().enumerate() {
            let (a, b) = topology.links[l];
            if list.len() != topology.link_filters(l) {
                return Err(Error::Wiring(format!(
                    "link {a}->{b} needs {} filters, got {}",
                    topology.link_filters(l),
                    list.len()
                )));
            }
            for f in list {
                if f.order() != b - a {
                    return Err(Error::Wiring(format!(
                        "link {a}->{b} requires filter order {}, got {}",
                        b - a,
                        f.order()
                    )));
                }
                if f.size() != topology.size
                    || f.mode() != topology.mode
                    || f.radial_weights().len() != topology.rings
                {
                    return Err(Error::Wiring("filter geometry differs from the layer".into()));
                }
            }
        }
        Ok(Self {
            topology,
            filters,
            mask_after,
        })
    }

    pub fn topology(&self) -> &ConvTopology {
        &self.topology
    }

    pub fn filters(&self) -> &[Vec<HarmonicFilterSpec<T>>] {
        &self.filters
    }

    pub fn mask_after(&self) -> bool {
        self.mask_after
    }

    /// Flattened `(radial, phase)` per link.
    pub fn weight_vectors(&self) -> Vec<(Vec<T>, Vec<T>)> {
        self.filters
            .iter()
            .map(|list| {
                let radial = list.iter().flat_map(|f| f.radial_weights().to_vec()).collect();
                let phase = list.iter().map(|f| f.phase()).collect();
                (radial, phase)
            })
            .collect()
    }
}

/// Applies a harmonic convolution layer to one bundle.
pub fn h_conv<T: Real>(input: &StreamBundle<T>, layer: &ConvLayerSpec<T>) -> Result<StreamBundle<T>> {
    let (h, w) = input.dims();
    let plan = ConvPlan::new(layer.topology.clone(), h, w, layer.mask_after)?;
    let vectors = layer.weight_vectors();
    let weights: Vec<LinkWeights<T>> = vectors
        .iter()
        .map(|(r, p)| LinkWeights { radial: r, phase: p })
        .collect();
    let kernels = plan.kernels(&weights)?;
    Ok(plan.forward(&kernels, input)?.0)
}

/// Kernel spectra for every filter of a plan, per link `[out][in]`.
#[derive(Clone, Debug)]
pub struct ConvKernels<T: Real> {
    spectra: Vec<Vec<Complex<T>>>,
}

/// Input spectra retained for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T: Real> {
    spectra: Vec<Vec<Complex<T>>>,
}

/// Precomputed FFT machinery for one layer at one spatial size.
#[derive(Debug)]
pub struct ConvPlan<T: Real> {
    topology: ConvTopology,
    height: usize,
    width: usize,
    fft: Fft2<T>,
    /// Per link: ring basis spectra of its filter order.
    basis: Vec<usize>,
    basis_spectra: Vec<Vec<Vec<Complex<T>>>>,
    link_in: Vec<usize>,
    link_out: Vec<usize>,
    in_offsets: Vec<usize>,
    out_offsets: Vec<usize>,
    mask: Option<RealGrid<T>>,
}

fn offsets(counts: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    counts
        .iter()
        .map(|&c| {
            let o = acc;
            acc += c;
            o
        })
        .collect()
}

#[inline]
fn mul_acc<T: Real>(acc: &mut [Complex<T>], a: &[Complex<T>], b: &[Complex<T>]) {
    for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
        o.re = o.re + x.re * y.re - x.im * y.im;
        o.im = o.im + x.re * y.im + x.im * y.re;
    }
}

/// `acc += conj(a) * b`.
#[inline]
fn conj_mul_acc<T: Real>(acc: &mut [Complex<T>], a: &[Complex<T>], b: &[Complex<T>]) {
    for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
        o.re = o.re + x.re * y.re + x.im * y.im;
        o.im = o.im + x.re * y.im - x.im * y.re;
    }
}

impl<T: Real> ConvPlan<T> {
    pub fn new(topology: ConvTopology, height: usize, width: usize, mask_after: bool) -> Result<Self> {
        topology.validate()?;
        if topology.size > height || topology.size > width {
            return Err(Error::Shape(format!(
                "filter size {} exceeds grid {height}x{width}",
                topology.size
            )));
        }
        let half = (topology.size - 1) / 2;
        let fft = Fft2::new(fast_len(height + half), fast_len(width + half));
        let mut orders: Vec<i32> = Vec::new();
        let mut basis = Vec::with_capacity(topology.links.len());
        for &(a, b) in &topology.links {
            let m = b - a;
            let idx = match orders.iter().position(|&o| o == m) {
                Some(i) => i,
                None => {
                    orders.push(m);
                    orders.len() - 1
                }
            };
            basis.push(idx);
        }
        let basis_spectra = orders
            .iter()
            .map(|&m| {
                let fb = FilterBasis::<T>::new(topology.size, topology.rings, topology.mode, m)?;
                Ok(fb
                    .grids()
                    .iter()
                    .map(|g| fft.kernel_spectrum(g.conj().as_slice(), topology.size))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let link_in = topology.links.iter().map(|&(a, _)| topology.in_index(a)).collect();
        let link_out = topology.links.iter().map(|&(_, b)| topology.out_index(b)).collect();
        let mask = if mask_after {
            Some(make_circular_mask(height, width)?)
        } else {
            None
        };
        Ok(Self {
            in_offsets: offsets(&topology.in_channels),
            out_offsets: offsets(&topology.out_channels),
            topology,
            height,
            width,
            fft,
            basis,
            basis_spectra,
            link_in,
            link_out,
            mask,
        })
    }

    pub fn topology(&self) -> &ConvTopology {
        &self.topology
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn check_weights(&self, weights: &[LinkWeights<T>]) -> Result<()> {
        if weights.len() != self.topology.links.len() {
            return Err(Error::Wiring("one weight block per link expected".into()));
        }
        for (l, w) in weights.iter().enumerate() {
            let n = self.topology.link_filters(l);
            if w.phase.len() != n || w.radial.len() != n * self.topology.rings {
                return Err(Error::Shape(format!("link {l} weight block has the wrong size")));
            }
        }
        Ok(())
    }

    /// Blends basis spectra into one kernel spectrum per filter:
    /// `Σ_j R_j e^{-iβ} B_j`.
    pub fn kernels(&self, weights: &[LinkWeights<T>]) -> Result<ConvKernels<T>> {
        self.check_weights(weights)?;
        let len = self.fft.len();
        let rings = self.topology.rings;
        let spectra = weights
            .iter()
            .enumerate()
            .map(|(l, w)| {
                let basis = &self.basis_spectra[self.basis[l]];
                let mut out = vec![Complex::new(T::zero(), T::zero()); w.phase.len() * len];
                for (f, chunk) in out.chunks_mut(len).enumerate() {
                    let rot = cis(-w.phase[f]);
                    for (j, spec) in basis.iter().enumerate() {
                        let a = rot * w.radial[f * rings + j];
                        for (o, &b) in chunk.iter_mut().zip(spec) {
                            *o = *o + b * a;
                        }
                    }
                }
                out
            })
            .collect();
        Ok(ConvKernels { spectra })
    }

    fn check_input(&self, input: &StreamBundle<T>) -> Result<()> {
        if input.orders() != self.topology.in_orders.as_slice()
            || input.channel_counts() != self.topology.in_channels
        {
            return Err(Error::Wiring(format!(
                "input orders {:?} / channels {:?} do not match layer {:?} / {:?}",
                input.orders(),
                input.channel_counts(),
                self.topology.in_orders,
                self.topology.in_channels
            )));
        }
        if input.dims() != (self.height, self.width) {
            return Err(Error::Shape(format!(
                "input is {:?}, plan expects {}x{}",
                input.dims(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        kernels: &ConvKernels<T>,
        input: &StreamBundle<T>,
    ) -> Result<(StreamBundle<T>, ConvCache<T>)> {
        self.check_input(input)?;
        let (h, w) = (self.height, self.width);
        let len = self.fft.len();
        let norm = T::one() / T::of_usize(len);
        let spectra: Vec<Vec<Complex<T>>> = input
            .channels()
            .map(|g| self.fft.forward_padded(g.as_slice(), h, w))
            .collect();
        let topo = &self.topology;
        let mut streams = Vec::with_capacity(topo.out_orders.len());
        for (oi, &c_out) in topo.out_channels.iter().enumerate() {
            let mut stream = Vec::with_capacity(c_out);
            for co in 0..c_out {
                let mut acc = vec![Complex::new(T::zero(), T::zero()); len];
                for (l, &lo) in self.link_out.iter().enumerate() {
                    if lo != oi {
                        continue;
                    }
                    let ii = self.link_in[l];
                    let c_in = topo.in_channels[ii];
                    for ci in 0..c_in {
                        let k = &kernels.spectra[l][(co * c_in + ci) * len..][..len];
                        mul_acc(&mut acc, &spectra[self.in_offsets[ii] + ci], k);
                    }
                }
                let data: Vec<Complex<T>> = self
                    .fft
                    .inverse_cropped(&mut acc, h, w)
                    .into_iter()
                    .map(|z| z * norm)
                    .collect();
                let mut g = ComplexGrid::from_parts(h, w, data);
                if let Some(mask) = &self.mask {
                    mask_in_place(&mut g, mask);
                }
                stream.push(g);
            }
            streams.push(stream);
        }
        Ok((
            StreamBundle::from_parts(topo.out_orders.clone(), streams),
            ConvCache { spectra },
        ))
    }

    /// Reverse pass over a batch. `grads` are output gradients in the
    /// `∂L/∂Re + i ∂L/∂Im` convention. Returns weight gradients and, if
    /// requested, input gradients.
    pub fn backward(
        &self,
        kernels: &ConvKernels<T>,
        weights: &[LinkWeights<T>],
        caches: &[ConvCache<T>],
        grads: &[StreamBundle<T>],
        want_input: bool,
    ) -> Result<(ConvGrads<T>, Option<Vec<StreamBundle<T>>>)> {
        self.check_weights(weights)?;
        if caches.len() != grads.len() {
            return Err(Error::Shape("one cache per output gradient expected".into()));
        }
        let topo = &self.topology;
        let (h, w) = (self.height, self.width);
        let len = self.fft.len();
        let norm = T::one() / T::of_usize(len);
        let zero = Complex::new(T::zero(), T::zero());
        let mut dk: Vec<Vec<Complex<T>>> = kernels.spectra.iter().map(|s| vec![zero; s.len()]).collect();
        let mut input_grads = Vec::new();
        for (cache, grad) in caches.iter().zip(grads) {
            if grad.orders() != topo.out_orders.as_slice()
                || grad.channel_counts() != topo.out_channels
                || grad.dims() != (h, w)
            {
                return Err(Error::Wiring("gradient layout does not match layer output".into()));
            }
            let g_hat: Vec<Vec<Complex<T>>> = grad
                .channels()
                .map(|g| {
                    let mut g = g.clone();
                    if let Some(mask) = &self.mask {
                        mask_in_place(&mut g, mask);
                    }
                    let mut s = self.fft.forward_padded(g.as_slice(), h, w);
                    s.iter_mut().for_each(|z| *z = *z * norm);
                    s
                })
                .collect();
            for (l, dkl) in dk.iter_mut().enumerate() {
                let (ii, oi) = (self.link_in[l], self.link_out[l]);
                let (c_in, c_out) = (topo.in_channels[ii], topo.out_channels[oi]);
                for co in 0..c_out {
                    let g = &g_hat[self.out_offsets[oi] + co];
                    for ci in 0..c_in {
                        let x = &cache.spectra[self.in_offsets[ii] + ci];
                        conj_mul_acc(&mut dkl[(co * c_in + ci) * len..][..len], x, g);
                    }
                }
            }
            if want_input {
                let mut streams = Vec::with_capacity(topo.in_orders.len());
                for (ii, &c_in) in topo.in_channels.iter().enumerate() {
                    let mut stream = Vec::with_capacity(c_in);
                    for ci in 0..c_in {
                        let mut acc = vec![zero; len];
                        for (l, &li) in self.link_in.iter().enumerate() {
                            if li != ii {
                                continue;
                            }
                            let oi = self.link_out[l];
                            for co in 0..topo.out_channels[oi] {
                                let k = &kernels.spectra[l][(co * c_in + ci) * len..][..len];
                                conj_mul_acc(&mut acc, k, &g_hat[self.out_offsets[oi] + co]);
                            }
                        }
                        let data = self.fft.inverse_cropped(&mut acc, h, w);
                        stream.push(ComplexGrid::from_parts(h, w, data));
                    }
                    streams.push(stream);
                }
                input_grads.push(StreamBundle::from_parts(topo.in_orders.clone(), streams));
            }
        }
        let rings = topo.rings;
        let mut radial = Vec::with_capacity(dk.len());
        let mut phase = Vec::with_capacity(dk.len());
        for (l, dkl) in dk.iter().enumerate() {
            let basis = &self.basis_spectra[self.basis[l]];
            let wl = &weights[l];
            let n = wl.phase.len();
            let mut dr = vec![T::zero(); n * rings];
            let mut dp = vec![T::zero(); n];
            for f in 0..n {
                let d = &dkl[f * len..][..len];
                let rot = cis(wl.phase[f]);
                for (j, b) in basis.iter().enumerate() {
                    let mut ga = zero;
                    for (x, y) in b.iter().zip(d) {
                        ga.re = ga.re + x.re * y.re + x.im * y.im;
                        ga.im = ga.im + x.re * y.im - x.im * y.re;
                    }
                    let gr = ga * rot;
                    dr[f * rings + j] = gr.re;
                    // Coefficient R_j e^{-iβ}: dL/dβ = -R_j Im(g e^{iβ}).
                    dp[f] = dp[f] - gr.im * wl.radial[f * rings + j];
                }
            }
            radial.push(dr);
            phase.push(dp);
        }
        Ok((
            ConvGrads { radial, phase },
            if want_input { Some(input_grads) } else { None },
        ))
    }
}
