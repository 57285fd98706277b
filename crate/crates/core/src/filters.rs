//! Circular harmonic filters `R(r) e^{i(m Θ + β)}` sampled on a square
//! pixel grid.
//!
//! The radial profile `R` is a short vector of ring values; pixels between
//! two rings take a linear blend of the two. Two ring layouts are supported:
//! [`FilterMode::HNet`] places ring `j` at radius `j` pixels, while
//! [`FilterMode::HNext`] spreads the rings evenly from the center out to the
//! filter edge `(k - 1) / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, Grid};
use crate::scalar::{cis, Complex, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    /// One ring per pixel of radius.
    HNet,
    /// Rings spread evenly over the whole filter.
    HNext,
}

impl FilterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterMode::HNet => "hnet",
            FilterMode::HNext => "hnext",
        }
    }
}

fn check_geometry(size: usize, rings: usize) -> Result<()> {
    if rings == 0 {
        return Err(Error::Parameter("ring count must be >= 1".into()));
    }
    if size < 3 || size.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "filter size must be odd and >= 3, got {size}"
        )));
    }
    Ok(())
}

/// A single harmonic filter: rotation order, ring values, phase offset.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicFilterSpec<T: Real> {
    order: i32,
    radial_weights: Vec<T>,
    phase: T,
    size: usize,
    mode: FilterMode,
}

impl<T: Real> HarmonicFilterSpec<T> {
    /// The phase offset is wrapped into `[0, 2π)`.
    pub fn new(
        order: i32,
        radial_weights: Vec<T>,
        phase: T,
        size: usize,
        mode: FilterMode,
    ) -> Result<Self> {
        check_geometry(size, radial_weights.len())?;
        if radial_weights.iter().any(|w| !w.is_finite()) || !phase.is_finite() {
            return Err(Error::Parameter("filter weights must be finite".into()));
        }
        let two_pi = T::PI() + T::PI();
        let mut phase = phase % two_pi;
        if phase < T::zero() {
            phase = phase + two_pi;
        }
        if phase >= two_pi {
            phase = T::zero();
        }
        Ok(Self {
            order,
            radial_weights,
            phase,
            size,
            mode,
        })
    }

    pub fn order(&self) -> i32 {
        self.order
    }

    pub fn radial_weights(&self) -> &[T] {
        &self.radial_weights
    }

    pub fn phase(&self) -> T {
        self.phase
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mode(&self) -> FilterMode {
        self.mode
    }
}

/// Linear map from ring values to the `k x k` pixel samples of `R(r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RingInterpolation<T: Real> {
    size: usize,
    ring_radii: Vec<T>,
    /// Row-major `k² x n`.
    weights: Vec<T>,
}

impl<T: Real> RingInterpolation<T> {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn rings(&self) -> usize {
        self.ring_radii.len()
    }

    pub fn ring_radii(&self) -> &[T] {
        &self.ring_radii
    }

    /// Ring weights of the pixel at `(row, col)`.
    pub fn row(&self, row: usize, col: usize) -> &[T] {
        let n = self.rings();
        let p = row * self.size + col;
        &self.weights[p * n..(p + 1) * n]
    }

    /// Samples `R` at every pixel for the given ring values.
    pub fn profile(&self, radial: &[T]) -> Vec<T> {
        assert_eq!(radial.len(), self.rings());
        self.weights
            .chunks(self.rings())
            .map(|row| row.iter().zip(radial).map(|(&w, &r)| w * r).sum())
            .collect()
    }

    /// Number of pixels with at least one nonzero ring weight.
    pub fn support(&self) -> usize {
        self.weights
            .chunks(self.rings())
            .filter(|row| row.iter().any(|&w| w != T::zero()))
            .count()
    }
}

pub fn ring_interpolation<T: Real>(
    size: usize,
    rings: usize,
    mode: FilterMode,
) -> Result<RingInterpolation<T>> {
    check_geometry(size, rings)?;
    let half = (size - 1) / 2;
    let radii: Vec<f64> = match mode {
        FilterMode::HNet => (0..rings).map(|j| j as f64).collect(),
        FilterMode::HNext if rings == 1 => vec![0.0],
        FilterMode::HNext => {
            let step = half as f64 / (rings - 1) as f64;
            (0..rings).map(|j| j as f64 * step).collect()
        }
    };
    let last = *radii.last().expect("rings >= 1");
    let mut weights = vec![T::zero(); size * size * rings];
    for i in 0..size {
        for j in 0..size {
            let dy = i as f64 - half as f64;
            let dx = j as f64 - half as f64;
            let r = (dx * dx + dy * dy).sqrt();
            let row = &mut weights[(i * size + j) * rings..(i * size + j + 1) * rings];
            if r > last {
                continue;
            }
            // Largest ring index with radius <= r.
            let lo = radii.iter().rposition(|&rj| rj <= r).unwrap_or(0);
            if radii[lo] == r || lo + 1 == rings {
                row[lo] = T::one();
            } else {
                let span = radii[lo + 1] - radii[lo];
                row[lo] = T::of((radii[lo + 1] - r) / span);
                row[lo + 1] = T::of((r - radii[lo]) / span);
            }
        }
    }
    Ok(RingInterpolation {
        size,
        ring_radii: radii.into_iter().map(T::of).collect(),
        weights,
    })
}

/// `e^{i m Θ}` at every pixel of a `k x k` filter; the center is 1 for
/// `m = 0` and 0 otherwise.
pub fn angular_factor<T: Real>(size: usize, order: i32) -> Vec<Complex<T>> {
    let half = (size as isize - 1) / 2;
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size as isize {
        for j in 0..size as isize {
            let dy = T::of((i - half) as f64);
            let dx = T::of((j - half) as f64);
            let value = if order == 0 {
                Complex::new(T::one(), T::zero())
            } else if i == half && j == half {
                Complex::new(T::zero(), T::zero())
            } else {
                let r = (dx * dx + dy * dy).sqrt();
                let u = Complex::new(dx / r, dy / r);
                let u = if order > 0 { u } else { u.conj() };
                u.powi(order.abs())
            };
            out.push(value);
        }
    }
    out
}

/// The `n` fixed basis grids `w_j(r) e^{i m Θ}` of one rotation order; any
/// filter of that order is `e^{iβ} Σ_j R_j basis_j`.
#[derive(Clone, Debug)]
pub struct FilterBasis<T: Real> {
    order: i32,
    size: usize,
    grids: Vec<ComplexGrid<T>>,
}

impl<T: Real> FilterBasis<T> {
    pub fn new(size: usize, rings: usize, mode: FilterMode, order: i32) -> Result<Self> {
        let interp = ring_interpolation::<T>(size, rings, mode)?;
        Ok(Self::from_interpolation(&interp, order))
    }

    pub fn from_interpolation(interp: &RingInterpolation<T>, order: i32) -> Self {
        let size = interp.size();
        let angular = angular_factor::<T>(size, order);
        let grids = (0..interp.rings())
            .map(|ring| {
                Grid::from_fn(size, size, |i, j| {
                    angular[i * size + j] * interp.row(i, j)[ring]
                })
            })
            .collect();
        Self { order, size, grids }
    }

    pub fn order(&self) -> i32 {
        self.order
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn grids(&self) -> &[ComplexGrid<T>] {
        &self.grids
    }

    pub fn synthesize(&self, radial: &[T], phase: T) -> ComplexGrid<T> {
        assert_eq!(radial.len(), self.grids.len(), "ring count mismatch");
        let rot = cis(phase);
        Grid::from_fn(self.size, self.size, |i, j| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (g, &w) in self.grids.iter().zip(radial) {
                acc = acc + g.get(i, j) * w;
            }
            acc * rot
        })
    }
}

/// Samples the filter described by `spec` on its `k x k` grid.
pub fn synthesize_filter<T: Real>(spec: &HarmonicFilterSpec<T>) -> ComplexGrid<T> {
    let interp = ring_interpolation::<T>(spec.size, spec.radial_weights.len(), spec.mode)
        .expect("spec geometry validated at construction");
    let profile = interp.profile(&spec.radial_weights);
    let angular = angular_factor::<T>(spec.size, spec.order);
    let rot = cis(spec.phase);
    Grid::from_fn(spec.size, spec.size, |i, j| {
        let p = i * spec.size + j;
        angular[p] * rot * profile[p]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::rotate_resample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_spec(seed: u64, order: i32, size: usize, rings: usize, mode: FilterMode) -> HarmonicFilterSpec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radial = (0..rings).map(|_| rng.gen_range(-1.0..1.0)).collect();
        HarmonicFilterSpec::new(order, radial, rng.gen_range(0.0..2.0 * PI), size, mode).unwrap()
    }

    #[test]
    fn hnext_radii_spread_over_filter() {
        let interp = ring_interpolation::<f64>(15, 8, FilterMode::HNext).unwrap();
        assert_eq!(interp.ring_radii(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let interp = ring_interpolation::<f64>(15, 3, FilterMode::HNext).unwrap();
        assert_eq!(interp.ring_radii(), &[0.0, 3.5, 7.0]);
        let interp = ring_interpolation::<f64>(15, 3, FilterMode::HNet).unwrap();
        assert_eq!(interp.ring_radii(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn center_pixel_hits_ring_zero() {
        for mode in [FilterMode::HNet, FilterMode::HNext] {
            let interp = ring_interpolation::<f64>(7, 3, mode).unwrap();
            assert_eq!(interp.row(3, 3), &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn small_hnext_rows_by_hand() {
        let interp = ring_interpolation::<f64>(3, 2, FilterMode::HNext).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let (dy, dx) = (i as f64 - 1.0, j as f64 - 1.0);
                let r = (dx * dx + dy * dy).sqrt();
                let expected: [f64; 2] = if r == 0.0 {
                    [1.0, 0.0]
                } else if r == 1.0 {
                    [0.0, 1.0]
                } else {
                    [0.0, 0.0]
                };
                assert_eq!(interp.row(i, j), &expected, "pixel ({i},{j})");
            }
        }
    }

    #[test]
    fn rows_are_partitions_or_empty() {
        for mode in [FilterMode::HNet, FilterMode::HNext] {
            let interp = ring_interpolation::<f64>(15, 5, mode).unwrap();
            let last = *interp.ring_radii().last().unwrap();
            for i in 0..15 {
                for j in 0..15 {
                    let row = interp.row(i, j);
                    let s: f64 = row.iter().sum();
                    let r = ((i as f64 - 7.0).powi(2) + (j as f64 - 7.0).powi(2)).sqrt();
                    if r > last {
                        assert_eq!(s, 0.0);
                    } else {
                        assert!((s - 1.0).abs() < 1e-12);
                        assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
                    }
                }
            }
        }
    }

    #[test]
    fn geometry_errors() {
        assert!(matches!(ring_interpolation::<f64>(15, 0, FilterMode::HNext), Err(Error::Parameter(_))));
        assert!(matches!(ring_interpolation::<f64>(14, 3, FilterMode::HNext), Err(Error::Parameter(_))));
        assert!(HarmonicFilterSpec::new(1, vec![1.0_f64], 0.0, 1, FilterMode::HNet).is_err());
    }

    #[test]
    fn phase_offset_is_wrapped() {
        let s = HarmonicFilterSpec::new(1, vec![1.0_f64, 2.0], -FRAC_PI_2, 5, FilterMode::HNet).unwrap();
        assert!((s.phase() - 1.5 * PI).abs() < 1e-12);
        let s = HarmonicFilterSpec::new(1, vec![1.0_f64, 2.0], 2.0 * PI, 5, FilterMode::HNet).unwrap();
        assert_eq!(s.phase(), 0.0);
    }

    #[test]
    fn order_zero_without_phase_is_real() {
        let mut spec = random_spec(1, 0, 9, 4, FilterMode::HNext);
        spec.phase = 0.0;
        let f = synthesize_filter(&spec);
        assert!(f.as_slice().iter().all(|z| z.im == 0.0));
        assert_eq!(f.get(4, 4).re, spec.radial_weights()[0]);
    }

    #[test]
    fn negative_order_is_conjugate() {
        for order in [1, 2, 3] {
            let spec = random_spec(2, order, 11, 5, FilterMode::HNext);
            let neg = HarmonicFilterSpec::new(-order, spec.radial_weights().to_vec(), -spec.phase(), 11, FilterMode::HNext).unwrap();
            let a = synthesize_filter(&spec).conj();
            let b = synthesize_filter(&neg);
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn nonzero_order_center_is_zero() {
        let spec = random_spec(3, 2, 7, 3, FilterMode::HNet);
        assert_eq!(synthesize_filter(&spec).get(3, 3).norm(), 0.0);
    }

    #[test]
    fn quarter_turn_steerability() {
        for order in -3..=3 {
            for mode in [FilterMode::HNet, FilterMode::HNext] {
                let spec = random_spec((10 + order) as u64, order, 15, 4, mode);
                let f = synthesize_filter(&spec);
                for k in 1..4 {
                    let theta = k as f64 * FRAC_PI_2;
                    let rotated = rotate_resample(&f, theta);
                    let expected = f.scale_complex(cis(order as f64 * theta));
                    assert!(rotated.max_abs_diff(&expected) < 1e-12, "order {order} k {k}");
                }
            }
        }
    }

    #[test]
    fn hnet_support_radius() {
        // k = 2n + 1 under HNet leaves the outer ring of the filter empty.
        let interp = ring_interpolation::<f64>(9, 4, FilterMode::HNet).unwrap();
        let profile = interp.profile(&[1.0, 1.0, 1.0, 1.0]);
        for i in 0..9 {
            for j in 0..9 {
                let r = ((i as f64 - 4.0).powi(2) + (j as f64 - 4.0).powi(2)).sqrt();
                assert_eq!(profile[i * 9 + j] != 0.0, r <= 3.0);
            }
        }
        let interp = ring_interpolation::<f64>(9, 4, FilterMode::HNext).unwrap();
        let profile = interp.profile(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(profile[4], 1.0);
        assert_eq!(profile[0], 0.0);
    }

    #[test]
    fn basis_matches_direct_synthesis() {
        let spec = random_spec(9, -2, 15, 3, FilterMode::HNext);
        let basis = FilterBasis::<f64>::new(15, 3, FilterMode::HNext, -2).unwrap();
        let a = basis.synthesize(spec.radial_weights(), spec.phase());
        assert!(a.max_abs_diff(&synthesize_filter(&spec)) < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linear_in_ring_values(seed in 0u64..500, order in -3i32..=3, a in -2.0f64..2.0, b in -2.0f64..2.0) {
                let s1 = random_spec(seed, order, 9, 4, FilterMode::HNext);
                let s2 = random_spec(seed + 7, order, 9, 4, FilterMode::HNext);
                let mixed: Vec<f64> = s1.radial_weights().iter().zip(s2.radial_weights()).map(|(x, y)| a * x + b * y).collect();
                let m = HarmonicFilterSpec::new(order, mixed, s1.phase(), 9, FilterMode::HNext).unwrap();
                let s2b = HarmonicFilterSpec::new(order, s2.radial_weights().to_vec(), s1.phase(), 9, FilterMode::HNext).unwrap();
                let f1 = synthesize_filter(&s1);
                let f2 = synthesize_filter(&s2b);
                let expected = Grid::from_fn(9, 9, |i, j| f1.get(i, j) * a + f2.get(i, j) * b);
                prop_assert!(synthesize_filter(&m).max_abs_diff(&expected) < 1e-12);
            }

            #[test]
            fn phase_offset_factorizes(seed in 0u64..500, order in -3i32..=3, beta in 0.0f64..std::f64::consts::TAU) {
                let s = random_spec(seed, order, 7, 3, FilterMode::HNet);
                let zero = HarmonicFilterSpec::new(order, s.radial_weights().to_vec(), 0.0, 7, FilterMode::HNet).unwrap();
                let with = HarmonicFilterSpec::new(order, s.radial_weights().to_vec(), beta, 7, FilterMode::HNet).unwrap();
                let expected = synthesize_filter(&zero).scale_complex(cis(with.phase()));
                prop_assert!(synthesize_filter(&with).max_abs_diff(&expected) < 1e-12);
            }
        }
    }
}
