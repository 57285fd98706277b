use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{argmax, cross_entropy, Network};
use super::optim::{Optimizer, OptimizerSpec};
use super::params::ParamStore;
use crate::config::TrainConfig;
use crate::data::RotatedDataset;
use crate::error::{Error, Result};
use crate::grid::{rotate_resample, RealGrid};
use crate::scalar::Real;

/// Metrics of one finished epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub loss: f64,
    pub acc_0: f64,
    pub acc_45: f64,
    pub seconds: f64,
    pub seed: u64,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str = "epoch,loss,acc_0,acc_45,seconds,seed";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{:.3},{}", self.epoch, self.loss, self.acc_0, self.acc_45, self.seconds, self.seed)
    }

    /// Equality of everything but wall-clock time.
    pub fn same_metrics(&self, other: &Self) -> bool {
        (self.epoch, self.loss, self.acc_0, self.acc_45, self.seed)
            == (other.epoch, other.loss, other.acc_0, other.acc_45, other.seed)
    }
}

/// RNG streams derived from the run seed.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded initial parameters of a network.
pub fn initial_params<T: Real>(network: &Network<T>, seed: u64) -> Result<ParamStore<T>> {
    network.init_params(&mut seeded_rng(seed, INIT_STREAM))
}

fn check_labels(data: &RotatedDataset, classes: usize) -> Result<()> {
    if let Some(&l) = data.labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Data(format!("label {l} outside [0, {classes})")));
    }
    Ok(())
}

/// Images of `indices`, rotated by `angle_deg` (exact for 0).
fn batch_images<T: Real>(data: &RotatedDataset, indices: &[usize], angle_deg: f64) -> Vec<RealGrid<T>> {
    indices
        .iter()
        .map(|&i| {
            let g = data.image::<T>(i);
            if angle_deg == 0.0 {
                g
            } else {
                rotate_resample(&g, T::of(angle_deg.to_radians()))
            }
        })
        .collect()
}

/// Predicted classes of every sample after rotating it by `angle_deg`.
pub fn predictions<T: Real>(
    network: &Network<T>,
    params: &ParamStore<T>,
    data: &RotatedDataset,
    angle_deg: f64,
    batch: usize,
) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in all.chunks(batch.max(1)) {
        let logits = network.predict(params, &batch_images(data, chunk, angle_deg))?;
        out.extend(logits.iter().map(|row| argmax(row)));
    }
    Ok(out)
}

/// Fraction of samples classified correctly after rotating by `angle_deg`.
pub fn accuracy<T: Real>(
    network: &Network<T>,
    params: &ParamStore<T>,
    data: &RotatedDataset,
    angle_deg: f64,
    batch: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let pred = predictions(network, params, data, angle_deg, batch)?;
    let hits = pred.iter().zip(&data.labels).filter(|(&p, &l)| p == l as usize).count();
    Ok(hits as f64 / data.len() as f64)
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step<T: Real>(
    network: &Network<T>,
    params: &mut ParamStore<T>,
    optimizer: &mut Optimizer,
    images: &[RealGrid<T>],
    labels: &[usize],
) -> Result<f64> {
    params.zero_grad();
    let (logits, tape) = network.forward_train(params, images)?;
    let (loss, dlogits) = cross_entropy(&logits, labels)?;
    network.backward(params, &tape, &dlogits)?;
    optimizer.step(params);
    Ok(loss)
}

/// Trains from the seeded initialization. `valid` supplies the per-epoch
/// accuracies at 0° and 45°; `on_epoch` sees each record as it is made.
pub fn train<T: Real>(
    network: &Network<T>,
    cfg: &TrainConfig,
    train_set: &RotatedDataset,
    valid: &RotatedDataset,
    mut on_epoch: impl FnMut(&TrainRecord),
) -> Result<(ParamStore<T>, Vec<TrainRecord>)> {
    let classes = network.config().classes;
    let train_set = train_set.head(cfg.train_subset);
    let valid = valid.head(cfg.valid_subset);
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Parameter("batch size must be >= 1".into()));
    }
    if !(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0) {
        return Err(Error::Parameter(format!("lr_decay must be in (0, 1], got {}", cfg.lr_decay)));
    }
    check_labels(&train_set, classes)?;
    check_labels(&valid, classes)?;
    let mut params = initial_params(network, cfg.seed)?;
    let mut optimizer = Optimizer::new(OptimizerSpec::from_config(cfg))?;
    let mut shuffle = seeded_rng(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let calibration: Vec<Vec<RealGrid<T>>> = (0..train_set.len())
        .collect::<Vec<_>>()
        .chunks(cfg.batch)
        .take(cfg.bn_calibration_batches)
        .map(|chunk| batch_images::<T>(&train_set, chunk, 0.0))
        .collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle);
        optimizer.set_lr_scale(cfg.lr_decay.powi(epoch as i32));
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let images = batch_images::<T>(&train_set, chunk, 0.0);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i] as usize).collect();
            let loss = train_step(network, &mut params, &mut optimizer, &images, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Degenerate(format!("loss diverged in epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        network.calibrate_batchnorm(&mut params, &calibration)?;
        let (acc_0, acc_45) = if valid.is_empty() {
            (0.0, 0.0)
        } else {
            (accuracy(network, &params, &valid, 0.0, cfg.batch)?, accuracy(network, &params, &valid, 45.0, cfg.batch)?)
        };
        let record = TrainRecord {
            epoch,
            loss: total / seen as f64,
            acc_0,
            acc_45,
            seconds: start.elapsed().as_secs_f64(),
            seed: cfg.seed,
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok((params, records))
}
