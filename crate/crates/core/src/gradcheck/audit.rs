//! Op-by-op comparison of analytic gradients against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{central_difference, relative_error};
use crate::backbone::{
    h_meanpool, magnitude_readout, meanpool_backward, readout_backward, relu_backward, relu_forward, BatchNorm,
    ConvPlan, ConvTopology, LinkWeights, ReadoutMode, RunningStats, StreamBundle,
};
use crate::config::{BlockConfig, HeadConfig, HeadKind, NetworkConfig};
use crate::error::Result;
use crate::filters::FilterMode;
use crate::grid::{make_circular_mask, Grid, RealGrid};
use crate::network::{cross_entropy, Network, ParamStore};
use crate::pooling::{gap_backward, gap_pool, msa_backward, msa_pool, zernike_backward, zernike_basis, zernike_pool};
use crate::pooling::{MsaPoolConfig, MsaWeights};
use crate::scalar::Complex;

/// Finite-difference step used throughout.
pub const STEP: f64 = 1e-5;

/// Largest relative error of one gradient of one operation.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: String,
    pub error: f64,
}

fn check(out: &mut Vec<OpCheck>, op: impl Into<String>, analytic: &[f64], numeric: &[f64]) {
    out.push(OpCheck { op: op.into(), error: relative_error(analytic, numeric) });
}

fn complex_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid<Complex<f64>> {
    Grid::from_fn(h, w, |_, _| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub(crate) fn real_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RealGrid<f64> {
    Grid::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0))
}

pub(crate) fn bundle(rng: &mut ChaCha8Rng, orders: &[i32], channels: &[usize], h: usize, w: usize) -> StreamBundle<f64> {
    let streams = channels
        .iter()
        .map(|&c| (0..c).map(|_| complex_grid(rng, h, w)).collect())
        .collect();
    StreamBundle::new(orders.to_vec(), streams).unwrap()
}

/// Flattens a bundle into interleaved real/imaginary parts.
pub(crate) fn flatten(b: &StreamBundle<f64>) -> Vec<f64> {
    b.channels()
        .flat_map(|g| g.as_slice().iter().flat_map(|z| [z.re, z.im]).collect::<Vec<_>>())
        .collect()
}

/// Inverse of [`flatten`] onto the layout of `like`.
pub(crate) fn unflatten(like: &StreamBundle<f64>, x: &[f64]) -> StreamBundle<f64> {
    let mut k = 0;
    let streams = like
        .streams()
        .iter()
        .map(|s| {
            s.iter()
                .map(|g| {
                    let data = (0..g.len())
                        .map(|_| {
                            let z = Complex::new(x[k], x[k + 1]);
                            k += 2;
                            z
                        })
                        .collect();
                    Grid::new(g.height(), g.width(), data).unwrap()
                })
                .collect()
        })
        .collect();
    StreamBundle::new(like.orders().to_vec(), streams).unwrap()
}

/// Real linear functional `Σ Re(conj(c) z)`; its gradient is `c`.
pub(crate) fn probe(b: &StreamBundle<f64>, c: &StreamBundle<f64>) -> f64 {
    b.channels()
        .zip(c.channels())
        .map(|(g, h)| g.as_slice().iter().zip(h.as_slice()).map(|(z, w)| z.re * w.re + z.im * w.im).sum::<f64>())
        .sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn grids(x: &[f64], h: usize, w: usize) -> Vec<RealGrid<f64>> {
    x.chunks(h * w).map(|s| Grid::new(h, w, s.to_vec()).unwrap()).collect()
}

fn flat(gs: &[RealGrid<f64>]) -> Vec<f64> {
    gs.iter().flat_map(|g| g.as_slice().to_vec()).collect()
}

/// Runs every check; all errors should stay below `1e-5`.
pub fn audit_operations(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    conv(&mut rng, &mut out)?;
    relu(&mut rng, &mut out)?;
    batchnorm(&mut rng, &mut out)?;
    pool_and_readout(&mut rng, &mut out)?;
    heads(&mut rng, &mut out)?;
    loss(&mut rng, &mut out)?;
    network(&mut rng, &mut out)?;
    Ok(out)
}

fn split_links<'a>(w: &'a [f64], sizes: &[usize], rings: usize) -> Vec<LinkWeights<'a, f64>> {
    let mut k = 0;
    sizes
        .iter()
        .map(|&n| {
            let lw = LinkWeights { radial: &w[k..k + n * rings], phase: &w[k + n * rings..k + n * (rings + 1)] };
            k += n * (rings + 1);
            lw
        })
        .collect()
}

fn conv(rng: &mut ChaCha8Rng, out: &mut Vec<OpCheck>) -> Result<()> {
    for (mask_after, mode) in [(false, FilterMode::HNext), (true, FilterMode::HNet)] {
        let rings = 3;
        let topo = ConvTopology::dense(vec![0, 1], vec![1, 2], vec![0, 1], vec![2, 1], 5, rings, mode);
        let plan = ConvPlan::new(topo.clone(), 7, 8, mask_after)?;
        let sizes: Vec<usize> = (0..topo.links.len()).map(|l| topo.link_filters(l)).collect();
        let w0: Vec<f64> = (0..topo.parameter_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let batch: Vec<_> = (0..2).map(|_| bundle(rng, &[0, 1], &[1, 2], 7, 8)).collect();
        let probes: Vec<_> = (0..2).map(|_| bundle(rng, &[0, 1], &[2, 1], 7, 8)).collect();
        let loss = |w: &[f64], xs: &[StreamBundle<f64>]| {
            let k = plan.kernels(&split_links(w, &sizes, rings)).unwrap();
            xs.iter().zip(&probes).map(|(x, c)| probe(&plan.forward(&k, x).unwrap().0, c)).sum::<f64>()
        };
        let lw = split_links(&w0, &sizes, rings);
        let kernels = plan.kernels(&lw)?;
        let caches = batch.iter().map(|x| plan.forward(&kernels, x).map(|r| r.1)).collect::<Result<Vec<_>>>()?;
        let (grads, dx) = plan.backward(&kernels, &lw, &caches, &probes, true)?;
        let analytic: Vec<f64> = grads.radial.iter().zip(&grads.phase).flat_map(|(r, p)| r.iter().chain(p).copied()).collect();
        let numeric = central_difference(|w| loss(w, &batch), &w0, STEP);
        check(out, format!("h_conv {mode:?} weights"), &analytic, &numeric);
        let dx = dx.expect("input gradient requested");
        let numeric = central_difference(|x| loss(&w0, &[batch[0].clone(), unflatten(&batch[1], x)]), &flatten(&batch[1]), STEP);
        check(out, format!("h_conv {mode:?} input"), &flatten(&dx[1]), &numeric);
    }
    Ok(())
}

fn relu(rng: &mut ChaCha8Rng, out: &mut Vec<OpCheck>) -> Result<()> {
    let x = bundle(rng, &[0, 1], &[2, 1], 4, 4);
    let c = bundle(rng, &[0, 1], &[2, 1], 4, 4);
    let bias = vec![-0.3, 0.2, 0.05];
    for eps in [0.0, 0.1] {
        let f = |x: &StreamBundle<f64>, b: &[f64]| probe(&relu_forward(x, b, eps).unwrap(), &c);
        let mut db = vec![0.0; bias.len()];
        let dx = relu_backward(&x, &bias, eps, &c, &mut db)?;
        let nx = central_difference(|v| f(&unflatten(&x, v), &bias), &flatten(&x), STEP);
        check(out, format!("h_relu input (phase eps {eps})"), &flatten(&dx), &nx);
        let nb = central_difference(|b| f(&x, b), &bias, STEP);
        check(out, format!("h_relu bias (phase eps {eps})"), &db, &nb);
    }
    Ok(())
}

fn batchnorm(rng: &mut ChaCha8Rng, out: &mut Vec<OpCheck>) -> Result<()> {
    let mask = make_circular_mask::<f64>(6, 6)?;
    let batch: Vec<_> = (0..3)
        .map(|_| bundle(rng, &[0, 1], &[1, 2], 6, 6).apply_mask(&mask))
        .collect::<Result<Vec<_>>>()?;
    let probes: Vec<_> = (0..3).map(|_| bundle(rng, &[0, 1], &[1, 2], 6, 6)).collect();
    let gamma = vec![1.2, 0.8, -0.5];
    let delta = vec![0.1, 0.3, 0.2];
    let bias = vec![0.05, -0.1, 0.2];
    let stats = RunningStats { mean: vec![0.4, 0.5, 0.6], var: vec![0.3, 0.2, 0.25], momentum: 0.1 };
    let cases = [
        (true, true, 0.0, false),
        (true, false, 0.1, false),
        (false, true, 0.0, false),
        (true, true, 0.1, true),
        (false, false, 0.0, true),
    ];
    for (train, masked, phase_eps, fused) in cases {
        let support = masked.then_some(&mask);
        let name = format!(
            "h_batchnorm{} ({}, {}, phase eps {phase_eps})",
            if fused { "+relu" } else { "" },
            if train { "batch stats" } else { "running stats" },
            if masked { "masked" } else { "full" },
        );
        let value = |xs: &[StreamBundle<f64>], g: &[f64], d: &[f64], b: &[f64]| {
            let bn = BatchNorm { gamma: g, delta: d, eps: 1e-5, phase_eps, support, relu_bias: fused.then_some(b) };
            let (y, _) = bn.forward(xs, &mut stats.clone(), train).unwrap();
            y.iter().zip(&probes).map(|(o, c)| probe(o, c)).sum::<f64>()
        };
        let bn = BatchNorm { gamma: &gamma, delta: &delta, eps: 1e-5, phase_eps, support, relu_bias: fused.then_some(&bias[..]) };
        let (_, cache) = bn.forward(&batch, &mut stats.clone(), train)?;
        let (mut dg, mut dd, mut db) = (vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]);
        let dx = bn.backward_fused(&batch, &cache, &probes, &mut dg, &mut dd, fused.then_some(&mut db[..]))?;
        let ng = central_difference(|g| value(&batch, g, &delta, &bias), &gamma, STEP);
        check(out, format!("{name} gamma"), &dg, &ng);
        let nd = central_difference(|d| value(&batch, &gamma, d, &bias), &delta, STEP);
        check(out, format!("{name} delta"), &dd, &nd);
        if fused {
            let nb = central_difference(|b| value(&batch, &gamma, &delta, b), &bias, STEP);
            check(out, format!("{name} bias"), &db, &nb);
        }
        let x0 = flatten(&batch[0]);
        let nx = central_difference(
            |v| {
                let mut xs = batch.clone();
                xs[0] = unflatten(&batch[0], v);
                value(&xs, &gamma, &delta, &bias)
            },
            &x0,
            STEP,
        );
        // The magnitude is not differentiable at masked-out zeros.
        let ana = flatten(&dx[0]);
        let keep: Vec<usize> = (0..x0.len()).filter(|&i| x0[i - i % 2] != 0.0 || x0[i - i % 2 + 1] != 0.0).collect();
        let a: Vec<f64> = keep.iter().map(|&i| ana[i]).collect();
        let n: Vec<f64> = keep.iter().map(|&i| nx[i]).collect();
        check(out, format!("{name} input"), &a, &n);
    }
    Ok(())
}

fn pool_and_readout(rng: &mut ChaCha8Rng, out: &mut Vec<OpCheck>) -> Result<()> {
    let x = bundle(rng, &[0, 1], &[2, 2], 6, 6);
    let c = bundle(rng, &[0, 1], &[2, 2], 3, 3);
    let dx = meanpool_backward(&c, (6, 6), 2, 2)?;
    let nx = central_difference(|v| probe(&h_meanpool(&unflatten(&x, v), 2, 2).unwrap(), &c), &flatten(&x), STEP);
    check(out, "h_meanpool input", &flatten(&dx), &nx);

    for mode in [ReadoutMode::M0, ReadoutMode::Sum, ReadoutMode::SumComplex, ReadoutMode::Wide] {
        let n = mode.output_channels(x.orders(), &x.channel_counts())?;
        let weights: Vec<RealGrid<f64>> = (0..n).map(|_| real_grid(rng, 6, 6)).collect();
        let f = |b: &StreamBundle<f64>| {
            magnitude_readout(b, mode)
                .unwrap()
                .iter()
                .zip(&weights)
                .map(|(g, w)| dot(g.as_slice(), w.as_slice()))
                .sum::<f64>()
        };
        let dx = readout_backward(&x, mode, &weights)?;
        let nx = central_difference(|v| f(&unflatten(&x, v)), &flatten(&x), STEP);
        check(out, format!("readout {} input", mode.as_str()), &flatten(&dx), &nx);
    }
    Ok(())
}

fn heads(rng: &mut ChaCha8Rng, out: &mut Vec<OpCheck>) -> Result<()> {
    let mask = make_circular_mask::<f64>(5, 5)?;
    let ch: Vec<RealGrid<f64>> = (0..2).map(|_| real_grid(rng, 5, 5)).collect();
    let g: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ana = gap_backward(&g, &mask)?;
    let num = central_difference(|x| dot(&gap_pool(&grids(x, 5, 5), &mask).unwrap(), &g), &flat(&ch), STEP);
    check(out, "gap_pool input", &flat(&ana), &num);

    // Smooth positive channels keep the centroid well inside the disk.
    let basis = zernike_basis::<f64>(10, 4)?;
    let ch: Vec<RealGrid<f64>> = (0..2)
        .map(|_| {
            let (r0, c0) = (rng.gen_range(3.5..5.5), rng.gen_range(3.5..5.5));
            Grid::from_fn(10, 10, |i, j| {
                let (y, x) = (i as f64 - r0, j as f64 - c0);
                (-(x * x + 2.0 * y * y) / 6.0).exp() + 0.5 * (-((x - 2.0).powi(2) + (y + 1.0).powi(2)) / 2.0).exp()
            })
        })
        .collect();
    let g: Vec<f64> = (0..2 * basis.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ana = zernike_backward(&ch, &basis, &g)?;
    let num = central_difference(|x| dot(&zernike_pool(&grids(x, 10, 10), &basis).unwrap().values, &g), &flat(&ch), STEP);
    check(out, "zernike_pool input", &flat(&ana), &num);

    let cfg = MsaPoolConfig { heads: 2, model_width: 3, key_width: 2, buckets: 4 };
    let mut w = MsaWeights::zeros(&cfg);
    for v in [&mut w.query, &mut w.key, &mut w.value, &mut w.output, &mut w.bias] {
        v.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    }
    let mask = make_circular_mask::<f64>(4, 4)?;
    let ch: Vec<RealGrid<f64>> = (0..3).map(|_| real_grid(rng, 4, 4)).collect();
    let g: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let value = |ch: &[RealGrid<f64>], w: &MsaWeights<f64>| dot(&msa_pool(ch, &mask, &cfg, w).unwrap(), &g);
    let (gx, gw) = msa_backward(&ch, &mask, &cfg, &w, &g)?;
    let num = central_difference(|x| value(&grids(x, 4, 4), &w), &flat(&ch), STEP);
    check(out, "msa_pool input", &flat(&gx), &num);
    type Field = fn(&mut MsaWeights<f64>) -> &mut Vec<f64>;
    let fields: [(&str, Field, &Vec<f64>); 5] = [
        ("query", |w| &mut w.query, &gw.query),
        ("key", |w| &mut w.key, &gw.key),
        ("value", |w| &mut w.value, &gw.value),
        ("output", |w| &mut w.output, &gw.output),
        ("bias", |w| &mut w.bias, &gw.bias),
    ];
    for (name, field, ana) in fields {
        let x0 = field(&mut w.clone()).clone();
        let num = central_difference(
            |x| {
                let mut ww = w.clone();
                *field(&mut ww) = x.to_vec();
                value(&ch, &ww)
            },
            &x0,
            STEP,
        );
        check(out, format!("msa_pool {name}"), ana, &num);
    }
    Ok(())
}

fn loss(rng: &mut ChaCha8Rng, out: &mut Vec<OpCheck>) -> Result<()> {
    let labels = [2usize, 0, 4];
    let logits: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let (_, grads) = cross_entropy(&logits, &labels)?;
    let num = central_difference(
        |x| cross_entropy(&x.chunks(5).map(|r| r.to_vec()).collect::<Vec<_>>(), &labels).unwrap().0,
        &logits.concat(),
        STEP,
    );
    check(out, "cross_entropy logits", &grads.concat(), &num);
    Ok(())
}

fn small_network() -> NetworkConfig {
    NetworkConfig {
        input_size: 6,
        upscale: 2,
        mask: true,
        max_order: 1,
        filter_size: 5,
        rings: 2,
        filter_mode: FilterMode::HNext,
        blocks: vec![
            BlockConfig { channels: 2, batchnorm: true, pool: 2 },
            BlockConfig { channels: 2, batchnorm: true, pool: 0 },
        ],
        readout: ReadoutMode::Wide,
        classes: 3,
        phase_eps: 0.0,
        ..Default::default()
    }
}

fn network(rng: &mut ChaCha8Rng, out: &mut Vec<OpCheck>) -> Result<()> {
    let base = small_network();
    let mut plain = NetworkConfig { mask: false, readout: ReadoutMode::Sum, filter_mode: FilterMode::HNet, ..base.clone() };
    plain.blocks[1].batchnorm = false;
    let mut zernike = base.clone();
    zernike.blocks[0].pool = 0;
    zernike.head = HeadConfig { kind: HeadKind::Zernike, zernike_degree: 3, ..Default::default() };
    let msa = NetworkConfig {
        head: HeadConfig { kind: HeadKind::Msa, msa_heads: 2, msa_key_width: 2, msa_buckets: 4, ..Default::default() },
        ..base.clone()
    };
    let configs = [
        ("gap", base.clone()),
        ("gap, phase eps 0.1", NetworkConfig { phase_eps: 0.1, ..base }),
        ("gap, no mask, no final bn, sum readout", plain),
        ("zernike", zernike),
        ("msa", msa),
    ];
    for (name, cfg) in configs {
        let net = Network::<f64>::new(&cfg)?;
        let mut params = net.zero_params();
        for t in params.tensors_mut().iter_mut().filter(|t| t.trainable) {
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
        }
        let batch: Vec<RealGrid<f64>> =
            (0..3).map(|_| Grid::from_fn(cfg.input_size, cfg.input_size, |_, _| rng.gen_range(0.0..1.0))).collect();
        let labels = [0usize, 2, 1];
        let mut p = params.clone();
        p.zero_grad();
        let (logits, tape) = net.forward_train(&mut p, &batch)?;
        let (_, dl) = cross_entropy(&logits, &labels)?;
        net.backward(&mut p, &tape, &dl)?;
        let numeric = central_difference(
            |x| {
                let mut q: ParamStore<f64> = params.clone();
                q.set_flat_values(x).unwrap();
                let (logits, _) = net.forward_train(&mut q, &batch).unwrap();
                cross_entropy(&logits, &labels).unwrap().0
            },
            &params.flat_values(),
            STEP,
        );
        check(out, format!("network ({name}) parameters"), &p.flat_grads(), &numeric);
    }
    Ok(())
}
