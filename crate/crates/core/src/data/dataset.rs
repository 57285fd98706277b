use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == code)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Images in `[0, 1]` (row-major, one `height x width` block per sample)
/// with labels and the rotation angle in degrees applied to each.
#[derive(Clone, Debug, PartialEq)]
pub struct RotatedDataset {
    pub variant: Variant,
    pub split: Split,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
    pub angles: Vec<f64>,
}

impl RotatedDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        variant: Variant,
        split: Split,
        seed: u64,
        height: usize,
        width: usize,
        images: Vec<f32>,
        labels: Vec<u8>,
        angles: Vec<f64>,
    ) -> Result<Self> {
        let n = labels.len();
        if angles.len() != n || images.len() != n * height * width {
            return Err(Error::Shape(format!(
                "dataset of {n} labels has {} angles and {} pixels ({height}x{width} images)",
                angles.len(),
                images.len()
            )));
        }
        Ok(Self { variant, split, seed, height, width, images, labels, angles })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self, i: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.images[i * n..(i + 1) * n]
    }

    pub fn image<T: Real>(&self, i: usize) -> RealGrid<T> {
        RealGrid::from_fn(self.height, self.width, |r, c| T::of(self.pixels(i)[r * self.width + c] as f64))
    }

    /// The first `n` samples (all if `n` is 0 or exceeds the length).
    pub fn head(&self, n: usize) -> Self {
        let n = if n == 0 { self.len() } else { n.min(self.len()) };
        let px = self.height * self.width;
        Self {
            images: self.images[..n * px].to_vec(),
            labels: self.labels[..n].to_vec(),
            angles: self.angles[..n].to_vec(),
            ..self.clone_header()
        }
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = self.clone_header();
        for &i in indices {
            out.images.extend_from_slice(self.pixels(i));
            out.labels.push(self.labels[i]);
            out.angles.push(self.angles[i]);
        }
        out
    }

    fn clone_header(&self) -> Self {
        Self {
            variant: self.variant,
            split: self.split,
            seed: self.seed,
            height: self.height,
            width: self.width,
            images: Vec::new(),
            labels: Vec::new(),
            angles: Vec::new(),
        }
    }

    /// Per-class sample counts for labels `0..classes`.
    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &l in &self.labels {
            if (l as usize) < classes {
                h[l as usize] += 1;
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RotatedDataset {
        RotatedDataset::new(
            Variant::MnistRotTest,
            Split::Valid,
            3,
            2,
            2,
            vec![0.0, 0.25, 0.5, 1.0, 1.0, 0.0, 0.0, 0.0],
            vec![4, 7],
            vec![0.0, 90.0],
        )
        .unwrap()
    }

    #[test]
    fn accessors() {
        let d = tiny();
        assert_eq!(d.len(), 2);
        assert_eq!(d.image::<f64>(0).get(1, 0), 0.5);
        assert_eq!(d.pixels(1), &[1.0, 0.0, 0.0, 0.0]);
        let h = d.head(1);
        assert_eq!((h.len(), h.labels[0], h.split), (1, 4, Split::Valid));
        assert_eq!(d.head(0).len(), 2);
        assert_eq!(d.label_histogram(10)[7], 1);
    }

    #[test]
    fn inconsistent_lengths() {
        let r = RotatedDataset::new(Variant::RotMnist, Split::Test, 0, 2, 2, vec![0.0; 3], vec![1], vec![0.0]);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
