//! Two-dimensional grids of real or complex samples and the geometric
//! primitives every layer builds on: rotation resampling about the grid
//! center, hard circular masks and center-symmetric bilinear up-scaling.
//!
//! Coordinates are `(row, col)` with rows growing downwards. The angular
//! coordinate used throughout the crate is `atan2(row - center_row,
//! col - center_col)`, and [`rotate_resample`] with a positive angle turns
//! image content counter-clockwise as displayed, so a circular harmonic of
//! order `m` picks up exactly `e^{i m theta}` under rotation.

use std::fmt::Debug;
use std::ops::{Add, Sub};

use num_traits::{Float, One, Zero};

use crate::error::{Error, Result};
use crate::scalar::{Complex, Real};

/// A sample type that can be bilinearly interpolated with weights of type
/// [`Texel::Scalar`].
pub trait Texel:
    Copy
    + Zero
    + Add<Output = Self>
    + Sub<Output = Self>
    + PartialEq
    + Debug
    + Send
    + Sync
{
    type Scalar: Real;

    fn scale(self, factor: Self::Scalar) -> Self;

    fn is_finite(&self) -> bool;

    /// Modulus of the sample.
    fn modulus(&self) -> Self::Scalar;
}

impl<T: Real> Texel for T {
    type Scalar = T;

    #[inline]
    fn scale(self, factor: T) -> T {
        self * factor
    }

    fn is_finite(&self) -> bool {
        num_traits::Float::is_finite(*self)
    }

    fn modulus(&self) -> T {
        self.abs()
    }
}

impl<T: Real> Texel for Complex<T> {
    type Scalar = T;

    #[inline]
    fn scale(self, factor: T) -> Self {
        self * factor
    }

    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    fn modulus(&self) -> T {
        self.norm()
    }
}

/// Row-major `height x width` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<V> {
    height: usize,
    width: usize,
    data: Vec<V>,
}

pub type RealGrid<T> = Grid<T>;
pub type ComplexGrid<T> = Grid<Complex<T>>;

impl<V: Texel> Grid<V> {
    /// Builds a grid, checking the dimensions and that every value is finite.
    pub fn new(height: usize, width: usize, data: Vec<V>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "non-finite value at index {pos}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Internal constructor for values produced by finite arithmetic.
    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<V>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self::from_parts(height, width, vec![V::zero(); height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> V) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self::from_parts(height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> V {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: V) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[V] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [V] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<V> {
        self.data
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(self.height, self.width)
    }

    pub fn map<W: Texel>(&self, f: impl Fn(V) -> W) -> Grid<W> {
        Grid::from_parts(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, factor: V::Scalar) -> Self {
        self.map(|v| v.scale(factor))
    }

    /// Largest modulus of the element-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> V::Scalar {
        assert_eq!(self.dims(), other.dims(), "grid dimensions differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).modulus())
            .fold(V::Scalar::zero(), |acc, d| acc.max(d))
    }

    pub fn max_modulus(&self) -> V::Scalar {
        self.data
            .iter()
            .map(|v| v.modulus())
            .fold(V::Scalar::zero(), |acc, d| acc.max(d))
    }
}

impl<T: Real> Grid<T> {
    pub fn to_complex(&self) -> ComplexGrid<T> {
        self.map(|v| Complex::new(v, T::zero()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Real>(&self) -> Grid<U> {
        self.map(|v| U::of(v.to_f64()))
    }
}

impl<T: Real> Grid<Complex<T>> {
    pub fn magnitudes(&self) -> RealGrid<T> {
        self.map(|z| z.norm())
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn scale_complex(&self, factor: Complex<T>) -> Self {
        self.map(|z| z * factor)
    }

    pub fn cast<U: Real>(&self) -> ComplexGrid<U> {
        self.map(|z| Complex::new(U::of(z.re.to_f64()), U::of(z.im.to_f64())))
    }
}

/// Rotation center and inscribed circle radius of a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub center_row: f64,
    pub center_col: f64,
    pub mask_radius: f64,
}

impl GridGeometry {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            center_row: (height as f64 - 1.0) / 2.0,
            center_col: (width as f64 - 1.0) / 2.0,
            mask_radius: height.min(width) as f64 / 2.0,
        }
    }
}

/// `(cos, sin)` of `theta`, snapped to exact values on multiples of a
/// quarter turn so those rotations become pure pixel permutations on
/// square grids.
pub(crate) fn rotation_cos_sin<T: Real>(theta: T) -> (T, T) {
    let quarter = T::FRAC_PI_2();
    let turns = (theta / quarter).round();
    let tol = T::epsilon() * T::of(8.0) * theta.abs().max(T::one());
    if (theta - turns * quarter).abs() <= tol {
        let k = turns.to_f64().rem_euclid(4.0) as u8;
        let (c, s) = match k {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
        (T::of(c), T::of(s))
    } else {
        (theta.cos(), theta.sin())
    }
}

/// Bilinear sample at fractional `(row, col)`; taps outside the frame read
/// as zero. Zero-weight taps are skipped so integer coordinates reproduce
/// the stored value bit for bit.
#[inline]
pub(crate) fn sample_zero_fill<V: Texel>(grid: &Grid<V>, row: V::Scalar, col: V::Scalar) -> V {
    let one = V::Scalar::one();
    let h = V::Scalar::of_usize(grid.height);
    let w = V::Scalar::of_usize(grid.width);
    if row <= -one || col <= -one || row >= h || col >= w {
        return V::zero();
    }
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let r0 = r0.to_f64() as isize;
    let c0 = c0.to_f64() as isize;
    let taps = [
        (r0, c0, (one - fr) * (one - fc)),
        (r0, c0 + 1, (one - fr) * fc),
        (r0 + 1, c0, fr * (one - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    ];
    let mut acc = V::zero();
    for (r, c, wgt) in taps {
        if wgt == V::Scalar::zero()
            || r < 0
            || c < 0
            || r >= grid.height as isize
            || c >= grid.width as isize
        {
            continue;
        }
        acc = acc + grid.data[r as usize * grid.width + c as usize].scale(wgt);
    }
    acc
}

/// Rotates `grid` by `theta` radians about its geometric center using
/// bilinear interpolation; samples that fall outside the frame are zero.
pub fn rotate_resample<V: Texel>(grid: &Grid<V>, theta: V::Scalar) -> Grid<V> {
    let (c, s) = rotation_cos_sin(theta);
    let geo = grid.geometry();
    let cr = V::Scalar::of(geo.center_row);
    let cc = V::Scalar::of(geo.center_col);
    Grid::from_fn(grid.height, grid.width, |i, j| {
        let dy = V::Scalar::of_usize(i) - cr;
        let dx = V::Scalar::of_usize(j) - cc;
        let src_col = cc + (c * dx - s * dy);
        let src_row = cr + (s * dx + c * dy);
        sample_zero_fill(grid, src_row, src_col)
    })
}

/// Hard binary mask: 1 where the pixel center lies within
/// `min(height, width) / 2` of the grid center (inclusive), else 0.
pub fn make_circular_mask<T: Real>(height: usize, width: usize) -> Result<RealGrid<T>> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!(
            "mask dimensions must be positive, got {height}x{width}"
        )));
    }
    let geo = GridGeometry::new(height, width);
    let r2 = geo.mask_radius * geo.mask_radius;
    Ok(Grid::from_fn(height, width, |i, j| {
        let dy = i as f64 - geo.center_row;
        let dx = j as f64 - geo.center_col;
        if dy * dy + dx * dx <= r2 {
            T::one()
        } else {
            T::zero()
        }
    }))
}

/// Element-wise product with a real mask.
pub fn apply_mask<V: Texel>(grid: &Grid<V>, mask: &RealGrid<V::Scalar>) -> Result<Grid<V>> {
    if grid.dims() != mask.dims() {
        return Err(Error::Shape(format!(
            "mask is {}x{}, grid is {}x{}",
            mask.height, mask.width, grid.height, grid.width
        )));
    }
    Ok(Grid::from_parts(
        grid.height,
        grid.width,
        grid.data.iter().zip(&mask.data).map(|(&v, &m)| v.scale(m)).collect(),
    ))
}

pub(crate) fn mask_in_place<V: Texel>(grid: &mut Grid<V>, mask: &RealGrid<V::Scalar>) {
    debug_assert_eq!(grid.dims(), mask.dims());
    for (v, &m) in grid.data.iter_mut().zip(&mask.data) {
        *v = v.scale(m);
    }
}

/// Per output index along one axis: the two source taps and the weight of
/// the second. Source coordinate is `(o + 0.5) / factor - 0.5`, clamped to
/// the frame, which keeps the sampling lattice symmetric about the center.
fn upscale_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    let f = factor as f64;
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / f - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear up-scaling by an integer factor.
pub fn upscale_bilinear<V: Texel>(grid: &Grid<V>, factor: usize) -> Result<Grid<V>> {
    if factor == 0 {
        return Err(Error::Parameter("up-scale factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let rows = upscale_taps(grid.height, factor);
    let cols = upscale_taps(grid.width, factor);
    let one = V::Scalar::one();
    Ok(Grid::from_fn(grid.height * factor, grid.width * factor, |i, j| {
        let (r0, r1, fr) = rows[i];
        let (c0, c1, fc) = cols[j];
        let fr = V::Scalar::of(fr);
        let fc = V::Scalar::of(fc);
        let top = grid.get(r0, c0).scale(one - fc) + grid.get(r0, c1).scale(fc);
        let bottom = grid.get(r1, c0).scale(one - fc) + grid.get(r1, c1).scale(fc);
        top.scale(one - fr) + bottom.scale(fr)
    }))
}

/// Separable Gaussian smoothing with standard deviation `sigma` pixels,
/// truncated at `3 sigma`, zero outside the grid. `sigma = 0` is the identity.
pub fn gaussian_blur<V: Texel>(grid: &Grid<V>, sigma: f64) -> Result<Grid<V>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(grid.clone());
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let taps: Vec<V::Scalar> = raw.iter().map(|w| V::Scalar::of(w / total)).collect();
    let (h, w) = (grid.height as isize, grid.width as isize);
    let pass = |g: &Grid<V>, along_rows: bool| {
        Grid::from_fn(g.height, g.width, |i, j| {
            let mut acc = V::zero();
            for (k, &t) in taps.iter().enumerate() {
                let d = k as isize - radius;
                let (r, c) = if along_rows { (i as isize + d, j as isize) } else { (i as isize, j as isize + d) };
                if r >= 0 && r < h && c >= 0 && c < w {
                    acc = acc + g.get(r as usize, c as usize).scale(t);
                }
            }
            acc
        })
    };
    Ok(pass(&pass(grid, true), false))
}

/// Adjoint of [`upscale_bilinear`]: scatters an up-scaled gradient back onto
/// the source lattice.
pub fn upscale_bilinear_adjoint<V: Texel>(
    grad: &Grid<V>,
    height: usize,
    width: usize,
    factor: usize,
) -> Result<Grid<V>> {
    if factor == 0 {
        return Err(Error::Parameter("up-scale factor must be >= 1".into()));
    }
    if grad.dims() != (height * factor, width * factor) {
        return Err(Error::Shape(format!(
            "gradient is {}x{}, expected {}x{}",
            grad.height,
            grad.width,
            height * factor,
            width * factor
        )));
    }
    if factor == 1 {
        return Ok(grad.clone());
    }
    let rows = upscale_taps(height, factor);
    let cols = upscale_taps(width, factor);
    let one = V::Scalar::one();
    let mut out = Grid::zeros(height, width);
    for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
        let fr = V::Scalar::of(fr);
        for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
            let fc = V::Scalar::of(fc);
            let g = grad.get(i, j);
            let idx = |r: usize, c: usize| r * width + c;
            out.data[idx(r0, c0)] = out.data[idx(r0, c0)] + g.scale((one - fr) * (one - fc));
            out.data[idx(r0, c1)] = out.data[idx(r0, c1)] + g.scale((one - fr) * fc);
            out.data[idx(r1, c0)] = out.data[idx(r1, c0)] + g.scale(fr * (one - fc));
            out.data[idx(r1, c1)] = out.data[idx(r1, c1)] + g.scale(fr * fc);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn random_complex(h: usize, w: usize, seed: u64) -> ComplexGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(h, w, |_, _| {
            Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    #[test]
    fn rotation_by_zero_is_identity() {
        let g = random_complex(6, 9, 1);
        assert_eq!(rotate_resample(&g, 0.0), g);
    }

    #[test]
    fn quarter_turn_is_a_pixel_permutation() {
        let g = random_complex(5, 5, 2);
        let r = rotate_resample(&g, FRAC_PI_2);
        // Content turns counter-clockwise as displayed: out(i, j) = in(j, 4 - i).
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(r.get(i, j), g.get(j, 4 - i));
            }
        }
    }

    #[test]
    fn diagonal_impulse_stays_near_center() {
        let mut g: RealGrid<f64> = Grid::zeros(7, 7);
        g.set(3, 3, 1.0);
        let r = rotate_resample(&g, FRAC_PI_4);
        assert_eq!(r.get(3, 3), 1.0);
        // Brute force: every output pixel whose inverse-rotated source
        // lands within one pixel of the impulse may receive mass.
        for i in 0..7 {
            for j in 0..7 {
                let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
                let sx = FRAC_PI_4.cos() * dx - FRAC_PI_4.sin() * dy;
                let sy = FRAC_PI_4.sin() * dx + FRAC_PI_4.cos() * dy;
                let expected = (1.0 - sx.abs()).max(0.0) * (1.0 - sy.abs()).max(0.0);
                assert!((r.get(i, j) - expected).abs() < 1e-12);
                if (i as i32 - 3).abs() > 1 || (j as i32 - 3).abs() > 1 {
                    assert_eq!(r.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn composed_quarter_turns_match_half_turn() {
        for (h, w) in [(5, 5), (6, 6), (28, 28)] {
            let g = random_complex(h, w, 3);
            let twice = rotate_resample(&rotate_resample(&g, FRAC_PI_2), FRAC_PI_2);
            assert_eq!(twice, rotate_resample(&g, PI));
        }
    }

    #[test]
    fn odd_grid_center_preserved_at_any_angle() {
        let g = random_complex(9, 9, 4);
        for theta in [0.3, 1.1, 2.5, -0.7] {
            assert_eq!(rotate_resample(&g, theta).get(4, 4), g.get(4, 4));
        }
    }

    #[test]
    fn mask_small_cases() {
        let m: RealGrid<f64> = make_circular_mask(1, 1).unwrap();
        assert_eq!(m.as_slice(), &[1.0]);
        let m: RealGrid<f64> = make_circular_mask(5, 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let corner = (i == 0 || i == 4) && (j == 0 || j == 4);
                assert_eq!(m.get(i, j), if corner { 0.0 } else { 1.0 });
            }
        }
        assert!(make_circular_mask::<f64>(0, 3).is_err());
    }

    #[test]
    fn mask_count_matches_exhaustive_scan() {
        let m: RealGrid<f64> = make_circular_mask(28, 28).unwrap();
        let mut count = 0;
        for i in 0..28 {
            for j in 0..28 {
                let d = ((i as f64 - 13.5).powi(2) + (j as f64 - 13.5).powi(2)).sqrt();
                if d <= 14.0 {
                    count += 1;
                }
            }
        }
        assert_eq!(m.sum() as usize, count);
    }

    #[test]
    fn apply_mask_cases() {
        let g = random_complex(5, 5, 5);
        let ones = Grid::from_fn(5, 5, |_, _| 1.0);
        assert_eq!(apply_mask(&g, &ones).unwrap(), g);
        let zeros = Grid::zeros(5, 5);
        assert!(apply_mask(&g, &zeros).unwrap().as_slice().iter().all(|z| z.norm() == 0.0));
        let ones5: RealGrid<f64> = Grid::from_fn(5, 5, |_, _| 1.0);
        let masked = apply_mask(&ones5, &make_circular_mask(5, 5).unwrap()).unwrap();
        assert_eq!(masked.sum(), 21.0);
        assert!(matches!(
            apply_mask(&g, &Grid::zeros(4, 5)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mask_commutes_with_quarter_turns() {
        for n in [7, 8, 28] {
            let g = random_complex(n, n, 6);
            let mask = make_circular_mask(n, n).unwrap();
            for k in 1..4 {
                let theta = k as f64 * FRAC_PI_2;
                let a = apply_mask(&rotate_resample(&g, theta), &mask).unwrap();
                let b = rotate_resample(&apply_mask(&g, &mask).unwrap(), theta);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn upscale_identity_constant_and_errors() {
        let g = random_complex(4, 6, 7);
        assert_eq!(upscale_bilinear(&g, 1).unwrap(), g);
        let c: RealGrid<f64> = Grid::from_fn(5, 3, |_, _| 0.75);
        let up = upscale_bilinear(&c, 2).unwrap();
        assert_eq!(up.dims(), (10, 6));
        assert!(up.as_slice().iter().all(|&v| (v - 0.75).abs() < 1e-15));
        assert!(matches!(upscale_bilinear(&g, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn upscale_commutes_with_quarter_turn() {
        let g = random_complex(9, 9, 8);
        let a = rotate_resample(&upscale_bilinear(&g, 2).unwrap(), FRAC_PI_2);
        let b = upscale_bilinear(&rotate_resample(&g, FRAC_PI_2), 2).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
        let g = random_complex(10, 10, 9);
        let a = rotate_resample(&upscale_bilinear(&g, 3).unwrap(), FRAC_PI_2);
        let b = upscale_bilinear(&rotate_resample(&g, FRAC_PI_2), 3).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn blur_identity_mass_and_errors() {
        let g = random_complex(6, 6, 12);
        assert_eq!(gaussian_blur(&g, 0.0).unwrap(), g);
        let mut impulse: RealGrid<f64> = Grid::zeros(15, 15);
        impulse.set(7, 7, 1.0);
        let b = gaussian_blur(&impulse, 1.0).unwrap();
        assert!((b.sum() - 1.0).abs() < 1e-12);
        assert!(b.get(7, 7) > b.get(7, 8) && b.get(7, 8) > b.get(6, 8));
        assert_eq!(b.get(7, 3), b.get(3, 7));
        assert!(matches!(gaussian_blur(&g, -0.5), Err(Error::Parameter(_))));
        assert!(matches!(gaussian_blur(&g, f64::NAN), Err(Error::Parameter(_))));
    }

    #[test]
    fn blur_commutes_with_quarter_turns() {
        for n in [9, 10] {
            let g = random_complex(n, n, 13);
            for k in 1..4 {
                let theta = k as f64 * FRAC_PI_2;
                let a = rotate_resample(&gaussian_blur(&g, 0.8).unwrap(), theta);
                let b = gaussian_blur(&rotate_resample(&g, theta), 0.8).unwrap();
                assert!(a.max_abs_diff(&b) < 1e-14);
            }
        }
    }

    #[test]
    fn upscale_adjoint_inner_product_identity() {
        let x = random_complex(5, 7, 10);
        let y = random_complex(10, 14, 11);
        let ax = upscale_bilinear(&x, 2).unwrap();
        let aty = upscale_bilinear_adjoint(&y, 5, 7, 2).unwrap();
        let lhs: Complex<f64> = ax.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a * b.conj()).sum();
        let rhs: Complex<f64> = x.as_slice().iter().zip(aty.as_slice()).map(|(a, b)| a * b.conj()).sum();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(Grid::<f64>::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Grid::<f64>::new(0, 2, vec![]).is_err());
        assert!(Grid::<f64>::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Grid::<f64>::new(1, 2, vec![0.0, 1.0]).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn upscale_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0, factor in 1usize..4) {
                let g1 = random_complex(4, 5, seed);
                let g2 = random_complex(4, 5, seed + 1);
                let combo = Grid::from_fn(4, 5, |i, j| g1.get(i, j) * a + g2.get(i, j) * b);
                let lhs = upscale_bilinear(&combo, factor).unwrap();
                let u1 = upscale_bilinear(&g1, factor).unwrap();
                let u2 = upscale_bilinear(&g2, factor).unwrap();
                let rhs = Grid::from_fn(lhs.height(), lhs.width(), |i, j| u1.get(i, j) * a + u2.get(i, j) * b);
                prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
            }

            #[test]
            fn odd_center_survives_rotation(seed in 0u64..1000, theta in -7.0f64..7.0, half in 1usize..6) {
                let n = 2 * half + 1;
                let g = random_complex(n, n, seed);
                prop_assert_eq!(rotate_resample(&g, theta).get(half, half), g.get(half, half));
            }
        }
    }
}
