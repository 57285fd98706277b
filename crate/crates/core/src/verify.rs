//! Equivariance residuals of backbones and invariance metrics of full
//! models.

use rand::Rng;

use crate::data::RotatedDataset;
use crate::error::{Error, Result};
use crate::grid::{apply_mask, make_circular_mask, rotate_resample, ComplexGrid, RealGrid};
use crate::network::{accuracy, initial_params, predictions, seeded_rng, Network, ParamStore};
use crate::scalar::{cis, Real};

const INPUT_STREAM: u64 = 4;
const PARAM_STREAM: u64 = 5;

/// Residuals of one backbone stage for one order at one angle.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerResidual {
    pub layer: String,
    pub order: i32,
    pub theta_deg: f64,
    /// `max |F(rot x) - e^{imθ} rot F(x)|` over pixels and channels.
    pub abs_residual: f64,
    /// `max ||F(rot x)| - |rot F(x)||` relative to `max |rot F(x)|`.
    pub mag_residual: f64,
}

fn rotate_stream<T: Real>(stream: &[ComplexGrid<T>], theta: T, phase: crate::scalar::Complex<T>) -> Vec<ComplexGrid<T>> {
    stream.iter().map(|g| rotate_resample(g, theta).scale_complex(phase)).collect()
}

/// Residual of the phase law for order `order` at every stage of the
/// backbone that carries it.
pub fn phase_law_residual<T: Real>(
    net: &Network<T>,
    params: &ParamStore<T>,
    input: &RealGrid<T>,
    theta_deg: f64,
    order: i32,
) -> Result<Vec<LayerResidual>> {
    if !(0..=net.config().max_order).contains(&order) {
        return Err(Error::Wiring(format!("order {order} is not carried by this network")));
    }
    Ok(stage_residuals(net, params, input, theta_deg)?.into_iter().filter(|r| r.order == order).collect())
}

fn stage_residuals<T: Real>(
    net: &Network<T>,
    params: &ParamStore<T>,
    input: &RealGrid<T>,
    theta_deg: f64,
) -> Result<Vec<LayerResidual>> {
    let theta = T::of(theta_deg.to_radians());
    let base = net.trace(params, input)?;
    let turned = net.trace(params, &rotate_resample(input, theta))?;
    let mut out = Vec::new();
    for (a, b) in base.iter().zip(&turned) {
        for (k, &m) in a.bundle.orders().iter().enumerate() {
            let expected = rotate_stream(&a.bundle.streams()[k], theta, cis(T::of(m as f64) * theta));
            let (mut abs, mut mag, mut scale) = (0.0f64, 0.0f64, 0.0f64);
            for (e, g) in expected.iter().zip(&b.bundle.streams()[k]) {
                for (&x, &y) in e.as_slice().iter().zip(g.as_slice()) {
                    abs = abs.max((x - y).norm().to_f64());
                    mag = mag.max((x.norm() - y.norm()).abs().to_f64());
                    scale = scale.max(x.norm().to_f64());
                }
            }
            out.push(LayerResidual {
                layer: a.name.clone(),
                order: m,
                theta_deg,
                abs_residual: abs,
                mag_residual: if scale > 0.0 { mag / scale } else { mag },
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivarianceReport {
    /// Upscale factor, mask flag and filter mode of the network.
    pub fingerprint: String,
    /// Residuals averaged over the probe inputs.
    pub rows: Vec<LayerResidual>,
}

impl EquivarianceReport {
    pub const CSV_HEADER: &'static str = "layer,order,theta_deg,abs_residual,mag_residual";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s += &format!("{},{},{},{:e},{:e}\n", r.layer, r.order, r.theta_deg, r.abs_residual, r.mag_residual);
        }
        s
    }

    fn rows_at(&self, angles: &[f64]) -> impl Iterator<Item = &LayerResidual> {
        let angles = angles.to_vec();
        self.rows.iter().filter(move |r| angles.contains(&r.theta_deg))
    }

    pub fn max_abs_residual(&self, angles: &[f64]) -> f64 {
        self.rows_at(angles).map(|r| r.abs_residual).fold(0.0, f64::max)
    }

    pub fn max_mag_residual(&self, angles: &[f64]) -> f64 {
        self.rows_at(angles).map(|r| r.mag_residual).fold(0.0, f64::max)
    }

    /// Mean of `mag_residual` over every row at `angles`.
    pub fn mean_mag_residual(&self, angles: &[f64]) -> f64 {
        let v: Vec<f64> = self.rows_at(angles).map(|r| r.mag_residual).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

/// Per-stage, per-order residuals at each angle, averaged over `inputs`.
pub fn equivariance_report<T: Real>(
    net: &Network<T>,
    params: &ParamStore<T>,
    inputs: &[RealGrid<T>],
    angles_deg: &[f64],
) -> Result<EquivarianceReport> {
    if inputs.is_empty() {
        return Err(Error::Data("equivariance report needs at least one input".into()));
    }
    let mut rows: Vec<LayerResidual> = Vec::new();
    for &angle in angles_deg {
        let mut acc: Vec<LayerResidual> = Vec::new();
        for x in inputs {
            let r = stage_residuals(net, params, x, angle)?;
            if acc.is_empty() {
                acc = r;
            } else {
                for (a, b) in acc.iter_mut().zip(r) {
                    a.abs_residual += b.abs_residual;
                    a.mag_residual += b.mag_residual;
                }
            }
        }
        let n = inputs.len() as f64;
        for mut a in acc {
            a.abs_residual /= n;
            a.mag_residual /= n;
            rows.push(a);
        }
    }
    Ok(EquivarianceReport { fingerprint: net.config().fingerprint(), rows })
}

/// Random digit-like test images: a few thin line segments near the center,
/// in `[0, 1]`, masked to the inscribed disk when `masked`.
pub fn probe_inputs<T: Real>(count: usize, size: usize, seed: u64, masked: bool) -> Result<Vec<RealGrid<T>>> {
    let mut rng = seeded_rng(seed, INPUT_STREAM);
    let c = (size as f64 - 1.0) / 2.0;
    let width = 0.8;
    let mask = make_circular_mask::<T>(size, size)?;
    (0..count)
        .map(|_| {
            let strokes: Vec<(f64, f64, f64, f64)> = (0..4)
                .map(|_| {
                    let r = rng.gen_range(0.0..size as f64 / 3.5);
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    let len = rng.gen_range(size as f64 / 6.0..size as f64 / 3.0);
                    let dir = rng.gen_range(0.0..std::f64::consts::TAU);
                    (c + r * a.sin(), c + r * a.cos(), len * dir.sin(), len * dir.cos())
                })
                .collect();
            let g = RealGrid::from_fn(size, size, |i, j| {
                let v = strokes
                    .iter()
                    .map(|&(y, x, dy, dx)| {
                        let (py, px) = (i as f64 - y, j as f64 - x);
                        let t = ((py * dy + px * dx) / (dy * dy + dx * dx)).clamp(0.0, 1.0);
                        let d2 = (py - t * dy).powi(2) + (px - t * dx).powi(2);
                        (-d2 / (2.0 * width * width)).exp()
                    })
                    .fold(0.0, f64::max);
                T::of(v)
            });
            if masked {
                apply_mask(&g, &mask)
            } else {
                Ok(g)
            }
        })
        .collect()
}

/// Mean relative change `|f(rot x) - f(x)| / |f(x)|` of the invariant
/// features over `inputs` and `angles_deg`.
pub fn feature_residual<T: Real>(
    net: &Network<T>,
    params: &ParamStore<T>,
    inputs: &[RealGrid<T>],
    angles_deg: &[f64],
) -> Result<f64> {
    if inputs.is_empty() || angles_deg.is_empty() {
        return Err(Error::Data("feature residual needs at least one input and one angle".into()));
    }
    let mut total = 0.0;
    for x in inputs {
        let base = net.features(params, x)?;
        let norm = base.iter().map(|&v| Real::to_f64(v).powi(2)).sum::<f64>().sqrt();
        for &angle in angles_deg {
            let turned = net.features(params, &rotate_resample(x, T::of(angle.to_radians())))?;
            let diff = base.iter().zip(&turned).map(|(&a, &b)| Real::to_f64(a - b).powi(2)).sum::<f64>().sqrt();
            total += if norm > 0.0 { diff / norm } else { diff };
        }
    }
    Ok(total / (inputs.len() * angles_deg.len()) as f64)
}

/// Seeded parameters with every tensor perturbed away from its neutral
/// initialization, running statistics included.
pub fn random_params<T: Real>(net: &Network<T>, seed: u64) -> Result<ParamStore<T>> {
    let mut p = initial_params(net, seed)?;
    let mut rng = seeded_rng(seed, PARAM_STREAM);
    for t in p.tensors_mut() {
        let range = if t.name.ends_with("bn.gamma") {
            0.5..1.5
        } else if t.name.ends_with("running_var") {
            0.5..2.0
        } else if t.name.ends_with("running_mean") {
            0.0..1.0
        } else if t.name.ends_with("bn.delta") || t.name.ends_with("relu.bias") {
            -0.5..0.5
        } else {
            continue;
        };
        for v in &mut t.data {
            *v = T::of(rng.gen_range(range.clone()));
        }
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceReport {
    pub angles_deg: Vec<f64>,
    pub accuracies: Vec<f64>,
}

impl InvarianceReport {
    pub const CSV_HEADER: &'static str = "angle_deg,accuracy";

    /// Unweighted mean over the angles.
    pub fn overall_accuracy(&self) -> f64 {
        if self.accuracies.is_empty() {
            return 0.0;
        }
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    /// Largest minus smallest accuracy.
    pub fn spread(&self) -> f64 {
        let max = self.accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.accuracies.iter().copied().fold(f64::INFINITY, f64::min);
        if self.accuracies.is_empty() {
            0.0
        } else {
            max - min
        }
    }

    pub fn accuracy_at(&self, angle_deg: f64) -> Option<f64> {
        self.angles_deg.iter().position(|&a| a == angle_deg).map(|i| self.accuracies[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for (a, acc) in self.angles_deg.iter().zip(&self.accuracies) {
            s += &format!("{a},{acc}\n");
        }
        s + &format!("OA,{}\n", self.overall_accuracy())
    }
}

/// Accuracy of the upright split rotated to each angle.
pub fn fixed_angle_table<T: Real>(
    net: &Network<T>,
    params: &ParamStore<T>,
    data: &RotatedDataset,
    angles_deg: &[f64],
    batch: usize,
) -> Result<InvarianceReport> {
    let accuracies = angles_deg.iter().map(|&a| accuracy(net, params, data, a, batch)).collect::<Result<_>>()?;
    Ok(InvarianceReport { angles_deg: angles_deg.to_vec(), accuracies })
}

/// Accuracy at 0° minus accuracy at 45° on the upright split.
pub fn invariance_gap<T: Real>(net: &Network<T>, params: &ParamStore<T>, valid: &RotatedDataset, batch: usize) -> Result<f64> {
    Ok(accuracy(net, params, valid, 0.0, batch)? - accuracy(net, params, valid, 45.0, batch)?)
}

/// Replaces the labels of `data` by the model's own upright predictions, so
/// accuracies at other angles measure prediction stability.
pub fn pseudo_labelled<T: Real>(
    net: &Network<T>,
    params: &ParamStore<T>,
    data: &RotatedDataset,
    batch: usize,
) -> Result<RotatedDataset> {
    let pred = predictions(net, params, data, 0.0, batch)?;
    let mut out = data.clone();
    out.labels = pred.into_iter().map(|p| p as u8).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ReadoutMode;
    use crate::config::{BlockConfig, NetworkConfig, Variant};
    use crate::data::Split;

    fn cfg(upscale: usize, mask: bool) -> NetworkConfig {
        NetworkConfig {
            input_size: 12,
            upscale,
            mask,
            max_order: 2,
            filter_size: 5,
            rings: 3,
            blocks: vec![
                BlockConfig { channels: 2, batchnorm: true, pool: 2 },
                BlockConfig { channels: 2, batchnorm: true, pool: 0 },
            ],
            readout: ReadoutMode::Wide,
            ..Default::default()
        }
    }

    #[test]
    fn zero_angle_rows_vanish_and_quarter_turns_are_exact() {
        let net = Network::<f64>::new(&cfg(2, true)).unwrap();
        let params = random_params(&net, 1).unwrap();
        let inputs = probe_inputs(2, 12, 0, true).unwrap();
        let rep = equivariance_report(&net, &params, &inputs, &[0.0, 90.0, 180.0, 270.0]).unwrap();
        assert!(rep.rows.iter().filter(|r| r.theta_deg == 0.0).all(|r| r.abs_residual == 0.0));
        assert!(rep.max_abs_residual(&[90.0, 180.0, 270.0]) < 1e-8);
        // Stages: input, then conv/bn/relu/pool and conv/bn/relu; 3 orders each after the input.
        assert_eq!(rep.rows.len(), 4 * (1 + 7 * 3));
        let csv = rep.to_csv();
        assert!(csv.starts_with("layer,order,theta_deg,abs_residual,mag_residual\n"));
        assert_eq!(csv.lines().count(), rep.rows.len() + 1);
    }

    #[test]
    fn missing_order_is_a_wiring_error() {
        let net = Network::<f64>::new(&cfg(1, true)).unwrap();
        let params = random_params(&net, 0).unwrap();
        let x = probe_inputs(1, 12, 0, true).unwrap().remove(0);
        assert!(matches!(phase_law_residual(&net, &params, &x, 90.0, 3), Err(Error::Wiring(_))));
        let r = phase_law_residual(&net, &params, &x, 90.0, 1).unwrap();
        assert!(!r.is_empty() && r.iter().all(|l| l.order == 1));
    }

    #[test]
    fn upscaling_reduces_the_diagonal_residual() {
        let inputs = probe_inputs::<f64>(32, 12, 9, true).unwrap();
        let mean = |up: usize| {
            let net = Network::<f64>::new(&cfg(up, true)).unwrap();
            (0..4).map(|s| feature_residual(&net, &random_params(&net, s).unwrap(), &inputs, &[45.0]).unwrap()).sum::<f64>()
        };
        let (one, two) = (mean(1), mean(2));
        assert!(two < one, "upscale 2: {two}, upscale 1: {one}");
    }

    #[test]
    fn masking_reduces_the_diagonal_residual() {
        // Square (non-disk) inputs.
        let inputs = probe_inputs::<f64>(8, 28, 5, false).unwrap();
        let mean = |mask: bool| {
            let net = Network::<f64>::new(&NetworkConfig { input_size: 28, filter_size: 9, ..cfg(2, mask) }).unwrap();
            (0..4).map(|s| feature_residual(&net, &random_params(&net, s).unwrap(), &inputs, &[45.0]).unwrap()).sum::<f64>()
        };
        let (masked, unmasked) = (mean(true), mean(false));
        assert!(masked < unmasked, "masked {masked}, unmasked {unmasked}");
    }

    fn dataset(n: usize) -> RotatedDataset {
        let imgs = probe_inputs::<f64>(n, 12, 3, false).unwrap();
        let images = imgs.iter().flat_map(|g| g.as_slice().iter().map(|&v| v as f32)).collect();
        let labels = (0..n).map(|i| (i % 10) as u8).collect();
        RotatedDataset::new(Variant::MnistRotTest, Split::Test, 0, 12, 12, images, labels, vec![0.0; n]).unwrap()
    }

    #[test]
    fn constant_classifier_scores_the_label_prior() {
        let net = Network::<f64>::new(&cfg(1, true)).unwrap();
        let mut params = random_params(&net, 3).unwrap();
        params.get_mut("classifier.weight").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        let bias = &mut params.get_mut("classifier.bias").unwrap().data;
        bias.iter_mut().for_each(|v| *v = 0.0);
        bias[4] = 1.0;
        let data = dataset(40);
        let angles: Vec<f64> = (0..12).map(|k| 30.0 * k as f64).collect();
        let rep = fixed_angle_table(&net, &params, &data, &angles, 16).unwrap();
        assert!(rep.accuracies.iter().all(|&a| (a - 0.1).abs() < 1e-12));
        assert!((rep.overall_accuracy() - rep.accuracies.iter().sum::<f64>() / 12.0).abs() < 1e-15);
        let csv = rep.to_csv();
        assert!(csv.starts_with("angle_deg,accuracy\n0,0.1\n"));
        assert!(csv.trim_end().ends_with(&format!("OA,{}", rep.overall_accuracy())));
    }

    #[test]
    fn invariant_model_has_equal_quarter_turn_accuracies() {
        let net = Network::<f64>::new(&cfg(2, true)).unwrap();
        let params = random_params(&net, 8).unwrap();
        let data = pseudo_labelled(&net, &params, &dataset(24), 8).unwrap();
        let rep = fixed_angle_table(&net, &params, &data, &[0.0, 90.0, 180.0, 270.0], 8).unwrap();
        assert_eq!(rep.accuracies, vec![1.0; 4]);
        let again = fixed_angle_table(&net, &params, &data, &[0.0, 90.0, 180.0, 270.0], 8).unwrap();
        assert_eq!(rep, again);
        let gap = invariance_gap(&net, &params, &data, 8).unwrap();
        assert!((0.0..=1.0).contains(&gap));
    }

    #[test]
    fn empty_split_is_a_data_error() {
        let net = Network::<f64>::new(&cfg(1, true)).unwrap();
        let params = random_params(&net, 0).unwrap();
        let mut empty = dataset(1);
        empty.images.clear();
        empty.labels.clear();
        empty.angles.clear();
        assert!(matches!(invariance_gap(&net, &params, &empty, 8), Err(Error::Data(_))));
    }
}
