use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::{RotatedDataset, Split};
use super::idx::{Mnist, MnistPart};
use crate::config::Variant;
use crate::error::{Error, Result};
use crate::grid::{rotate_resample, RealGrid};
use crate::network::seeded_rng;

const SPLIT_STREAM: u64 = 2;
const ANGLE_STREAM: u64 = 3;

/// The twelve evaluation angles `0, 30, ..., 330` degrees.
pub fn fixed_angles() -> Vec<f64> {
    (0..12).map(|k| 30.0 * k as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSplits {
    pub train: RotatedDataset,
    pub valid: RotatedDataset,
    pub test: RotatedDataset,
}

impl GeneratedSplits {
    pub fn get(&self, split: Split) -> &RotatedDataset {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Train / valid / test sample counts of a variant. For `swn-gcn-mnist` the
/// test count is per fixed angle.
pub fn split_sizes(variant: Variant, swap_rot_mnist: bool) -> Result<(usize, usize, usize)> {
    match variant {
        Variant::MnistRotTest | Variant::SwnGcnMnist => Ok((50_000, 10_000, 10_000)),
        Variant::RotMnist if swap_rot_mnist => Ok((10_000, 2_000, 50_000)),
        Variant::RotMnist => Ok((10_000, 50_000, 2_000)),
        Variant::CifarRotTest | Variant::SwnGcnCifar => {
            Err(Error::Parameter(format!("variant '{}' is declared but not implemented", variant.as_str())))
        }
    }
}

/// How the samples of a split are rotated.
enum Rotation {
    Upright,
    Random,
    EachFixed,
}

struct Builder<'a> {
    variant: Variant,
    seed: u64,
    parts: [&'a MnistPart; 2],
    angles: rand_chacha::ChaCha8Rng,
}

impl Builder<'_> {
    /// `picks` are `(part, index)` pairs.
    fn build(&mut self, split: Split, picks: &[(usize, usize)], rotation: Rotation) -> Result<RotatedDataset> {
        let (h, w) = (self.parts[0].height, self.parts[0].width);
        let copies = if matches!(rotation, Rotation::EachFixed) { 12 } else { 1 };
        let mut images = Vec::with_capacity(picks.len() * copies * h * w);
        let mut labels = Vec::with_capacity(picks.len() * copies);
        let mut angles = Vec::with_capacity(picks.len() * copies);
        let fixed = fixed_angles();
        for &(part, i) in picks {
            let src = self.parts[part];
            let chosen: Vec<f64> = match rotation {
                Rotation::Upright => vec![0.0],
                Rotation::Random => vec![self.angles.gen_range(0.0..360.0)],
                Rotation::EachFixed => fixed.clone(),
            };
            for angle in chosen {
                push_rotated(&mut images, src.pixels(i), h, w, angle);
                labels.push(src.labels[i]);
                angles.push(angle);
            }
        }
        RotatedDataset::new(self.variant, split, self.seed, h, w, images, labels, angles)
    }
}

fn push_rotated(out: &mut Vec<f32>, pixels: &[u8], h: usize, w: usize, angle_deg: f64) {
    if angle_deg == 0.0 {
        out.extend(pixels.iter().map(|&p| p as f32 / 255.0));
        return;
    }
    let g = RealGrid::from_fn(h, w, |r, c| pixels[r * w + c] as f64 / 255.0);
    let rotated = rotate_resample(&g, angle_deg.to_radians());
    out.extend(rotated.as_slice().iter().map(|&v| v.clamp(0.0, 1.0) as f32));
}

/// Builds the three splits of a variant from MNIST, deterministically in
/// `seed`. Index sets are disjoint; the valid split is stored upright
/// except for rot-mnist, whose splits are all randomly rotated.
pub fn generate_dataset(variant: Variant, seed: u64, source: &Mnist, swap_rot_mnist: bool) -> Result<GeneratedSplits> {
    let (n_train, n_valid, n_test) = split_sizes(variant, swap_rot_mnist)?;
    let mut order = seeded_rng(seed, SPLIT_STREAM);
    let mut builder = Builder {
        variant,
        seed,
        parts: [&source.train, &source.test],
        angles: seeded_rng(seed, ANGLE_STREAM),
    };
    let need = |have: usize, want: usize, what: &str| {
        if have < want {
            Err(Error::Data(format!("{what} has {have} images, {want} needed")))
        } else {
            Ok(())
        }
    };
    match variant {
        Variant::MnistRotTest | Variant::SwnGcnMnist => {
            need(source.train.len(), n_train + n_valid, "MNIST train")?;
            need(source.test.len(), n_test, "MNIST test")?;
            let mut idx: Vec<usize> = (0..source.train.len()).collect();
            idx.shuffle(&mut order);
            let train: Vec<_> = idx[..n_train].iter().map(|&i| (0, i)).collect();
            let valid: Vec<_> = idx[n_train..n_train + n_valid].iter().map(|&i| (0, i)).collect();
            let test: Vec<_> = (0..n_test).map(|i| (1, i)).collect();
            let test_rotation =
                if variant == Variant::SwnGcnMnist { Rotation::EachFixed } else { Rotation::Random };
            Ok(GeneratedSplits {
                train: builder.build(Split::Train, &train, Rotation::Upright)?,
                valid: builder.build(Split::Valid, &valid, Rotation::Upright)?,
                test: builder.build(Split::Test, &test, test_rotation)?,
            })
        }
        Variant::RotMnist => {
            let total = source.train.len() + source.test.len();
            need(total, n_train + n_valid + n_test, "MNIST train+test")?;
            let mut idx: Vec<(usize, usize)> = (0..source.train.len())
                .map(|i| (0, i))
                .chain((0..source.test.len()).map(|i| (1, i)))
                .collect();
            idx.shuffle(&mut order);
            let (train, rest) = idx.split_at(n_train);
            let (valid, rest) = rest.split_at(n_valid);
            Ok(GeneratedSplits {
                train: builder.build(Split::Train, train, Rotation::Random)?,
                valid: builder.build(Split::Valid, valid, Rotation::Random)?,
                test: builder.build(Split::Test, &rest[..n_test], Rotation::Random)?,
            })
        }
        Variant::CifarRotTest | Variant::SwnGcnCifar => unreachable!("rejected by split_sizes"),
    }
}
