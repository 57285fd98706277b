use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::params::{ParamStore, Tensor};
use crate::backbone::{
    h_meanpool, magnitude_readout, meanpool_backward, readout_backward, relu_backward, relu_forward, BatchNorm,
    BatchNormCache, ConvCache, ConvKernels, ConvPlan, LinkWeights, RunningStats, StreamBundle,
};
use crate::config::{HeadKind, NetworkConfig};
use crate::error::{Error, Result};
use crate::filters::ring_interpolation;
use crate::grid::{apply_mask, gaussian_blur, make_circular_mask, upscale_bilinear, RealGrid};
use crate::pooling::{
    gap_backward, gap_pool, msa_backward, msa_pool, zernike_backward, zernike_basis, zernike_pool, MsaPoolConfig,
    MsaWeights, ZernikeBasis,
};
use crate::scalar::Real;

struct LinkIds {
    radial: usize,
    phase: usize,
}

struct BlockRuntime<T: Real> {
    plan: ConvPlan<T>,
    links: Vec<LinkIds>,
    bias: usize,
    bn: Option<BnIds>,
    /// BN statistics support at the block resolution.
    support: Option<RealGrid<T>>,
    pool: usize,
    pooled_mask: Option<RealGrid<T>>,
    channels: usize,
}

struct BnIds {
    gamma: usize,
    delta: usize,
    mean: usize,
    var: usize,
}

struct MsaIds {
    query: usize,
    key: usize,
    value: usize,
    output: usize,
    bias: usize,
}

enum Head<T: Real> {
    Gap,
    Zernike(ZernikeBasis<T>),
    Msa(MsaPoolConfig, MsaIds),
}

/// A compiled network: FFT plans, masks and pooling bases for one config,
/// plus the tensor layout of its parameters.
pub struct Network<T: Real> {
    config: NetworkConfig,
    blocks: Vec<BlockRuntime<T>>,
    input_mask: Option<RealGrid<T>>,
    head_mask: RealGrid<T>,
    head: Head<T>,
    feature_width: usize,
    classifier_w: usize,
    classifier_b: usize,
    template: ParamStore<T>,
}

struct BlockTape<T: Real> {
    kernels: ConvKernels<T>,
    caches: Vec<ConvCache<T>>,
    conv_out: Vec<StreamBundle<T>>,
    bn_cache: Option<BatchNormCache<T>>,
    /// ReLU inputs when batch norm is on (otherwise `conv_out`).
    pool_dims: (usize, usize),
}

/// Intermediate values of a forward pass, consumed by [`Network::backward`].
pub struct Tape<T: Real> {
    blocks: Vec<BlockTape<T>>,
    readout_in: Vec<StreamBundle<T>>,
    head_in: Vec<Vec<RealGrid<T>>>,
    features: Vec<Vec<T>>,
}

impl<T: Real> Tape<T> {
    pub fn features(&self) -> &[Vec<T>] {
        &self.features
    }
}

/// Output of one backbone stage, recorded by [`Network::trace`].
#[derive(Clone, Debug)]
pub struct Stage<T: Real> {
    pub name: String,
    pub bundle: StreamBundle<T>,
}

impl<T: Real> Network<T> {
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layouts = config.layouts()?;
        let mut store = ParamStore::new();
        let mut blocks = Vec::with_capacity(layouts.len());
        for (i, (b, layout)) in config.blocks.iter().zip(&layouts).enumerate() {
            let topo = &layout.topology;
            let mut links = Vec::with_capacity(topo.links.len());
            for (l, &(a, o)) in topo.links.iter().enumerate() {
                let n = topo.link_filters(l);
                let (ci, co) = (n / b.channels, b.channels);
                let base = format!("block{i}.conv.{a}to{o}");
                let radial = store.insert(Tensor::new(
                    format!("{base}.radial"),
                    vec![co, ci, config.rings],
                    vec![T::zero(); n * config.rings],
                    true,
                )?)?;
                let phase =
                    store.insert(Tensor::new(format!("{base}.phase"), vec![co, ci], vec![T::zero(); n], true)?)?;
                links.push(LinkIds { radial, phase });
            }
            let channels: usize = topo.out_channels.iter().sum();
            let bn = if b.batchnorm {
                let t = |name: &str, v: T, trainable| Tensor::new(format!("block{i}.bn.{name}"), vec![channels], vec![v; channels], trainable);
                Some(BnIds {
                    gamma: store.insert(t("gamma", T::one(), true)?)?,
                    delta: store.insert(t("delta", T::zero(), true)?)?,
                    mean: store.insert(t("running_mean", T::zero(), false)?)?,
                    var: store.insert(t("running_var", T::one(), false)?)?,
                })
            } else {
                None
            };
            let bias =
                store.insert(Tensor::new(format!("block{i}.relu.bias"), vec![channels], vec![T::zero(); channels], true)?)?;
            let mask = |s: usize| -> Result<Option<RealGrid<T>>> {
                config.mask.then(|| make_circular_mask(s, s)).transpose()
            };
            blocks.push(BlockRuntime {
                plan: ConvPlan::new(topo.clone(), layout.size, layout.size, config.mask)?,
                links,
                bias,
                support: mask(layout.size)?,
                bn,
                pool: b.pool,
                pooled_mask: if b.pool > 0 { mask(layout.pooled_size)? } else { None },
                channels,
            });
        }
        let up = config.input_size * config.upscale;
        let input_mask = config.mask.then(|| make_circular_mask(up, up)).transpose()?;
        let fs = config.final_size();
        let head_mask = if config.mask { make_circular_mask(fs, fs)? } else { RealGrid::from_fn(fs, fs, |_, _| T::one()) };
        let head = match config.head.kind {
            HeadKind::Gap => Head::Gap,
            HeadKind::Zernike => Head::Zernike(zernike_basis(fs, config.head.zernike_degree)?),
            HeadKind::Msa => {
                let cfg = config.msa_config()?;
                let (p, nb) = (cfg.heads * cfg.key_width * cfg.model_width, cfg.heads * cfg.buckets);
                let inner = cfg.heads * cfg.key_width;
                let d = cfg.model_width;
                let mut t = |name: &str, shape: Vec<usize>, n: usize| {
                    store.insert(Tensor::new(format!("head.msa.{name}"), shape, vec![T::zero(); n], true)?)
                };
                let ids = MsaIds {
                    query: t("query", vec![inner, d], p)?,
                    key: t("key", vec![inner, d], p)?,
                    value: t("value", vec![inner, d], p)?,
                    output: t("output", vec![d, inner], p)?,
                    bias: t("bias", vec![cfg.heads, cfg.buckets], nb)?,
                };
                Head::Msa(cfg, ids)
            }
        };
        let feature_width = config.feature_width()?;
        let k = config.classes;
        let classifier_w =
            store.insert(Tensor::new("classifier.weight", vec![k, feature_width], vec![T::zero(); k * feature_width], true)?)?;
        let classifier_b = store.insert(Tensor::new("classifier.bias", vec![k], vec![T::zero(); k], true)?)?;
        Ok(Self {
            config: config.clone(),
            blocks,
            input_mask,
            head_mask,
            head,
            feature_width,
            classifier_w,
            classifier_b,
            template: store,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    /// All-zero parameters with unit batch-norm scales and running variances.
    pub fn zero_params(&self) -> ParamStore<T> {
        self.template.clone()
    }

    /// Seeded initialization: ring weights `N(0, 1/fan_in)` with fan-in
    /// counting every input channel times the filter support, phases
    /// uniform in `[0, 2π)`, dense weights uniform in `±1/sqrt(fan_in)`.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Result<ParamStore<T>> {
        let mut p = self.template.clone();
        let support = ring_interpolation::<f64>(self.config.filter_size, self.config.rings, self.config.filter_mode)?
            .support();
        for block in &self.blocks {
            let fan_in = block.plan.topology().in_channels.iter().sum::<usize>() * support;
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite std");
            for link in &block.links {
                for v in &mut p.tensor_mut(link.radial).data {
                    *v = T::of(normal.sample(rng));
                }
                for v in &mut p.tensor_mut(link.phase).data {
                    *v = T::of(rng.gen_range(0.0..std::f64::consts::TAU));
                }
            }
        }
        let mut uniform = |p: &mut ParamStore<T>, id: usize, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p.tensor_mut(id).data {
                *v = T::of(rng.gen_range(-a..a));
            }
        };
        if let Head::Msa(cfg, ids) = &self.head {
            for id in [ids.query, ids.key, ids.value] {
                uniform(&mut p, id, cfg.model_width);
            }
            uniform(&mut p, ids.output, cfg.heads * cfg.key_width);
        }
        uniform(&mut p, self.classifier_w, self.feature_width);
        uniform(&mut p, self.classifier_b, self.feature_width);
        Ok(p)
    }

    fn check_params(&self, params: &ParamStore<T>) -> Result<()> {
        let ok = params.len() == self.template.len()
            && params
                .tensors()
                .iter()
                .zip(self.template.tensors())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.trainable == b.trainable);
        if ok {
            Ok(())
        } else {
            Err(Error::Wiring("parameter store does not match the network layout".into()))
        }
    }

    /// Smooth, upscale and mask one input image into an order-0 bundle.
    pub fn embed(&self, image: &RealGrid<T>) -> Result<StreamBundle<T>> {
        let s = self.config.input_size;
        if image.dims() != (s, s) {
            return Err(Error::Wiring(format!(
                "network expects {s}x{s} images, got {}x{}",
                image.height(),
                image.width()
            )));
        }
        let up = upscale_bilinear(&gaussian_blur(image, self.config.input_blur)?, self.config.upscale)?;
        let up = match &self.input_mask {
            Some(m) => apply_mask(&up, m)?,
            None => up,
        };
        Ok(StreamBundle::from_real(&up))
    }

    fn link_weights<'a>(&self, block: &BlockRuntime<T>, params: &'a ParamStore<T>) -> Vec<LinkWeights<'a, T>> {
        block
            .links
            .iter()
            .map(|l| LinkWeights { radial: &params.tensor(l.radial).data, phase: &params.tensor(l.phase).data })
            .collect()
    }

    /// With `fused`, the block's ReLU acts on the signed normalized magnitude.
    fn batchnorm<'a>(
        &'a self,
        block: &'a BlockRuntime<T>,
        ids: &BnIds,
        params: &'a ParamStore<T>,
        fused: bool,
    ) -> BatchNorm<'a, T> {
        BatchNorm {
            relu_bias: fused.then(|| params.tensor(block.bias).data.as_slice()),
            gamma: &params.tensor(ids.gamma).data,
            delta: &params.tensor(ids.delta).data,
            eps: T::of(self.config.bn_eps),
            phase_eps: T::of(self.config.phase_eps),
            support: block.support.as_ref(),
        }
    }

    fn stats(&self, ids: &BnIds, params: &ParamStore<T>, momentum: T) -> RunningStats<T> {
        RunningStats {
            mean: params.tensor(ids.mean).data.clone(),
            var: params.tensor(ids.var).data.clone(),
            momentum,
        }
    }

    fn pool(&self, block: &BlockRuntime<T>, x: &StreamBundle<T>) -> Result<StreamBundle<T>> {
        if block.pool == 0 {
            return Ok(x.clone());
        }
        let p = h_meanpool(x, block.pool, block.pool)?;
        match &block.pooled_mask {
            Some(m) => p.apply_mask(m),
            None => Ok(p),
        }
    }

    fn head_forward(&self, params: &ParamStore<T>, channels: &[RealGrid<T>]) -> Result<Vec<T>> {
        match &self.head {
            Head::Gap => gap_pool(channels, &self.head_mask),
            Head::Zernike(basis) => Ok(zernike_pool(channels, basis)?.values),
            Head::Msa(cfg, ids) => msa_pool(channels, &self.head_mask, cfg, &msa_weights(params, ids)),
        }
    }

    fn classify(&self, params: &ParamStore<T>, features: &[T]) -> Vec<T> {
        let w = &params.tensor(self.classifier_w).data;
        let b = &params.tensor(self.classifier_b).data;
        let d = self.feature_width;
        b.iter()
            .enumerate()
            .map(|(k, &bk)| bk + w[k * d..(k + 1) * d].iter().zip(features).map(|(&a, &f)| a * f).sum::<T>())
            .collect()
    }

    fn run(
        &self,
        params: &ParamStore<T>,
        images: &[RealGrid<T>],
        train: bool,
        momentum: T,
        stats_out: &mut Vec<(usize, usize, RunningStats<T>)>,
    ) -> Result<(Vec<Vec<T>>, Tape<T>)> {
        self.check_params(params)?;
        if images.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let phase_eps = T::of(self.config.phase_eps);
        let mut x: Vec<StreamBundle<T>> = images.iter().map(|im| self.embed(im)).collect::<Result<_>>()?;
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let kernels = block.plan.kernels(&self.link_weights(block, params))?;
            let (conv_out, caches): (Vec<_>, Vec<_>) =
                x.iter().map(|b| block.plan.forward(&kernels, b)).collect::<Result<Vec<_>>>()?.into_iter().unzip();
            let (act, bn_cache) = match &block.bn {
                Some(ids) => {
                    let mut stats = self.stats(ids, params, momentum);
                    let (out, cache) = self.batchnorm(block, ids, params, true).forward(&conv_out, &mut stats, train)?;
                    if train {
                        stats_out.push((ids.mean, ids.var, stats));
                    }
                    (out, Some(cache))
                }
                None => {
                    let bias = &params.tensor(block.bias).data;
                    (conv_out.iter().map(|b| relu_forward(b, bias, phase_eps)).collect::<Result<_>>()?, None)
                }
            };
            let pool_dims = conv_out[0].dims();
            x = act.iter().map(|b| self.pool(block, b)).collect::<Result<_>>()?;
            tapes.push(BlockTape { kernels, caches, conv_out, bn_cache, pool_dims });
        }
        let head_in: Vec<Vec<RealGrid<T>>> =
            x.iter().map(|b| magnitude_readout(b, self.config.readout)).collect::<Result<_>>()?;
        let features: Vec<Vec<T>> = head_in.iter().map(|c| self.head_forward(params, c)).collect::<Result<_>>()?;
        let logits = features.iter().map(|f| self.classify(params, f)).collect();
        Ok((logits, Tape { blocks: tapes, readout_in: x, head_in, features }))
    }

    /// Training-mode forward: batch statistics, running statistics updated
    /// in `params`.
    pub fn forward_train(&self, params: &mut ParamStore<T>, images: &[RealGrid<T>]) -> Result<(Vec<Vec<T>>, Tape<T>)> {
        let momentum = T::of(self.config.bn_momentum);
        self.forward_with_momentum(params, images, momentum)
    }

    fn forward_with_momentum(
        &self,
        params: &mut ParamStore<T>,
        images: &[RealGrid<T>],
        momentum: T,
    ) -> Result<(Vec<Vec<T>>, Tape<T>)> {
        let mut stats = Vec::new();
        let out = self.run(params, images, true, momentum, &mut stats)?;
        for (mean_id, var_id, s) in stats {
            params.tensor_mut(mean_id).data = s.mean;
            params.tensor_mut(var_id).data = s.var;
        }
        Ok(out)
    }

    /// Replaces the running batch-norm statistics by the average of the
    /// batch statistics over `batches`, weights held fixed.
    pub fn calibrate_batchnorm(&self, params: &mut ParamStore<T>, batches: &[Vec<RealGrid<T>>]) -> Result<()> {
        for (t, images) in batches.iter().enumerate() {
            self.forward_with_momentum(params, images, T::one() / T::of(t as f64 + 1.0))?;
        }
        Ok(())
    }

    /// Evaluation-mode logits using running statistics.
    pub fn predict(&self, params: &ParamStore<T>, images: &[RealGrid<T>]) -> Result<Vec<Vec<T>>> {
        Ok(self.run(params, images, false, T::zero(), &mut Vec::new())?.0)
    }

    /// Evaluation-mode backbone outputs of one image, named by stage
    /// (`input`, `block{i}.conv`, `.bn`, `.relu`, `.pool`).
    pub fn trace(&self, params: &ParamStore<T>, image: &RealGrid<T>) -> Result<Vec<Stage<T>>> {
        self.check_params(params)?;
        let phase_eps = T::of(self.config.phase_eps);
        let mut x = self.embed(image)?;
        let mut out = vec![Stage { name: "input".into(), bundle: x.clone() }];
        for (i, block) in self.blocks.iter().enumerate() {
            let kernels = block.plan.kernels(&self.link_weights(block, params))?;
            x = block.plan.forward(&kernels, &x)?.0;
            out.push(Stage { name: format!("block{i}.conv"), bundle: x.clone() });
            x = match &block.bn {
                Some(ids) => {
                    let stats = self.stats(ids, params, T::zero());
                    let bn = self.batchnorm(block, ids, params, false).forward(&[x.clone()], &mut stats.clone(), false)?;
                    out.push(Stage { name: format!("block{i}.bn"), bundle: bn.0[0].clone() });
                    self.batchnorm(block, ids, params, true).forward(&[x], &mut stats.clone(), false)?.0.remove(0)
                }
                None => relu_forward(&x, &params.tensor(block.bias).data, phase_eps)?,
            };
            out.push(Stage { name: format!("block{i}.relu"), bundle: x.clone() });
            if block.pool > 0 {
                x = self.pool(block, &x)?;
                out.push(Stage { name: format!("block{i}.pool"), bundle: x.clone() });
            }
        }
        Ok(out)
    }

    /// Pooled, rotation-invariant features of one image in evaluation mode.
    pub fn features(&self, params: &ParamStore<T>, image: &RealGrid<T>) -> Result<Vec<T>> {
        let x = self.trace(params, image)?.pop().expect("input stage").bundle;
        self.head_forward(params, &magnitude_readout(&x, self.config.readout)?)
    }

    /// Accumulates loss gradients into `params` given `dlogits`, the
    /// gradient of the loss with respect to each row of logits.
    pub fn backward(&self, params: &mut ParamStore<T>, tape: &Tape<T>, dlogits: &[Vec<T>]) -> Result<()> {
        self.check_params(params)?;
        let k = self.config.classes;
        let d = self.feature_width;
        if dlogits.len() != tape.features.len() || dlogits.iter().any(|g| g.len() != k) {
            return Err(Error::Shape("logit gradient does not match the batch".into()));
        }
        let phase_eps = T::of(self.config.phase_eps);
        // Classifier.
        let mut dfeat = vec![vec![T::zero(); d]; dlogits.len()];
        {
            let w = params.tensor(self.classifier_w).data.clone();
            let gw = &mut params.tensor_mut(self.classifier_w).grad;
            for ((g, f), df) in dlogits.iter().zip(&tape.features).zip(&mut dfeat) {
                for c in 0..k {
                    for j in 0..d {
                        gw[c * d + j] = gw[c * d + j] + g[c] * f[j];
                        df[j] = df[j] + g[c] * w[c * d + j];
                    }
                }
            }
            let gb = &mut params.tensor_mut(self.classifier_b).grad;
            for g in dlogits {
                for c in 0..k {
                    gb[c] = gb[c] + g[c];
                }
            }
        }
        // Head and readout.
        let mut grads: Vec<StreamBundle<T>> = Vec::with_capacity(dlogits.len());
        for ((df, channels), x) in dfeat.iter().zip(&tape.head_in).zip(&tape.readout_in) {
            let dch = match &self.head {
                Head::Gap => gap_backward(df, &self.head_mask)?,
                Head::Zernike(basis) => zernike_backward(channels, basis, df)?,
                Head::Msa(cfg, ids) => {
                    let (dch, gw) = msa_backward(channels, &self.head_mask, cfg, &msa_weights(params, ids), df)?;
                    for (id, g) in [
                        (ids.query, gw.query),
                        (ids.key, gw.key),
                        (ids.value, gw.value),
                        (ids.output, gw.output),
                        (ids.bias, gw.bias),
                    ] {
                        add_into(&mut params.tensor_mut(id).grad, &g);
                    }
                    dch
                }
            };
            grads.push(readout_backward(x, self.config.readout, &dch)?);
        }
        // Backbone, last block first.
        for (i, (block, bt)) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            if block.pool > 0 {
                grads = grads
                    .iter()
                    .map(|g| {
                        let g = match &block.pooled_mask {
                            Some(m) => g.apply_mask(m)?,
                            None => g.clone(),
                        };
                        meanpool_backward(&g, bt.pool_dims, block.pool, block.pool)
                    })
                    .collect::<Result<_>>()?;
            }
            let mut dbias = vec![T::zero(); block.channels];
            if let (Some(ids), Some(cache)) = (&block.bn, &bt.bn_cache) {
                let mut dgamma = vec![T::zero(); block.channels];
                let mut ddelta = vec![T::zero(); block.channels];
                grads = self.batchnorm(block, ids, params, true).backward_fused(
                    &bt.conv_out,
                    cache,
                    &grads,
                    &mut dgamma,
                    &mut ddelta,
                    Some(&mut dbias),
                )?;
                add_into(&mut params.tensor_mut(ids.gamma).grad, &dgamma);
                add_into(&mut params.tensor_mut(ids.delta).grad, &ddelta);
            } else {
                let bias = params.tensor(block.bias).data.clone();
                grads = bt
                    .conv_out
                    .iter()
                    .zip(&grads)
                    .map(|(x, g)| relu_backward(x, &bias, phase_eps, g, &mut dbias))
                    .collect::<Result<_>>()?;
            }
            add_into(&mut params.tensor_mut(block.bias).grad, &dbias);
            let weights = self.link_weights(block, params);
            let (cg, dx) = block.plan.backward(&bt.kernels, &weights, &bt.caches, &grads, i > 0)?;
            for (l, link) in block.links.iter().enumerate() {
                add_into(&mut params.tensor_mut(link.radial).grad, &cg.radial[l]);
                add_into(&mut params.tensor_mut(link.phase).grad, &cg.phase[l]);
            }
            if let Some(dx) = dx {
                grads = dx;
            }
        }
        Ok(())
    }
}

fn msa_weights<T: Real>(params: &ParamStore<T>, ids: &MsaIds) -> MsaWeights<T> {
    MsaWeights {
        query: params.tensor(ids.query).data.clone(),
        key: params.tensor(ids.key).data.clone(),
        value: params.tensor(ids.value).data.clone(),
        output: params.tensor(ids.output).data.clone(),
        bias: params.tensor(ids.bias).data.clone(),
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits.
pub fn cross_entropy<T: Real>(logits: &[Vec<T>], labels: &[usize]) -> Result<(f64, Vec<Vec<T>>)> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Shape(format!("{} logit rows for {} labels", logits.len(), labels.len())));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &label) in logits.iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::Data(format!("label {label} outside [0, {})", row.len())));
        }
        let max = row.iter().map(|&v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v.to_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss -= (row[label].to_f64() - max) - z.ln();
        grads.push(
            exps.iter()
                .enumerate()
                .map(|(k, &e)| T::of((e / z - if k == label { 1.0 } else { 0.0 }) / n))
                .collect(),
        );
    }
    Ok((loss / n, grads))
}

/// Index of the largest logit (first on ties).
pub fn argmax<T: Real>(row: &[T]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
