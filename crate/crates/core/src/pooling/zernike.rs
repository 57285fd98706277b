//! Zernike moment magnitudes with the basis re-centered on each channel's
//! intensity centroid.

use serde::{Deserialize, Serialize};

use super::gap::check_dims;
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, Grid, RealGrid};
use crate::scalar::{Complex, Real};

/// Sampled Zernike polynomials `V_{n,l}` for `l >= 0` over the disk
/// inscribed in a square grid. Negative `l` are the conjugates and carry
/// the same magnitude, so they are not stored.
#[derive(Clone, Debug)]
pub struct ZernikeBasis<T: Real> {
    grid_size: usize,
    max_degree: usize,
    moments: Vec<(usize, usize)>,
    grids: Vec<ComplexGrid<T>>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Radial polynomial `R_{n,l}(ρ)`, `n - l` even.
pub fn zernike_radial(n: usize, l: usize, rho: f64) -> f64 {
    (0..=(n - l) / 2)
        .map(|s| {
            let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
            sign * factorial(n - s)
                / (factorial(s) * factorial((n + l) / 2 - s) * factorial((n - l) / 2 - s))
                * rho.powi((n - 2 * s) as i32)
        })
        .sum()
}

/// How the polynomials are put on the pixel grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZernikeSampling {
    /// `V_{n,l}` evaluated at pixel centers.
    Point,
    /// Point samples made exactly orthogonal under the pixel sum by
    /// Gram-Schmidt in `(n, l)` order. Only polynomials whose `l` agree
    /// modulo 4 are mixed; those share their phase factor under quarter
    /// turns, so every moment keeps its quarter-turn behavior.
    Orthogonalized,
}

/// Orthogonalized basis; see [`ZernikeSampling::Orthogonalized`].
pub fn zernike_basis<T: Real>(grid_size: usize, max_degree: usize) -> Result<ZernikeBasis<T>> {
    zernike_basis_with(grid_size, max_degree, ZernikeSampling::Orthogonalized)
}

pub fn zernike_basis_with<T: Real>(
    grid_size: usize,
    max_degree: usize,
    sampling: ZernikeSampling,
) -> Result<ZernikeBasis<T>> {
    if grid_size < 8 {
        return Err(Error::Parameter(format!("zernike grid must be >= 8, got {grid_size}")));
    }
    let moments: Vec<(usize, usize)> = (0..=max_degree)
        .flat_map(|n| (0..=n).filter(move |l| (n - l) % 2 == 0).map(move |l| (n, l)))
        .collect();
    let center = (grid_size as f64 - 1.0) / 2.0;
    let radius = grid_size as f64 / 2.0;
    let mut samples: Vec<Vec<Complex<f64>>> = moments
        .iter()
        .map(|&(n, l)| {
            let mut v = Vec::with_capacity(grid_size * grid_size);
            for i in 0..grid_size {
                for j in 0..grid_size {
                    let y = (i as f64 - center) / radius;
                    let x = (j as f64 - center) / radius;
                    let rho = (x * x + y * y).sqrt();
                    v.push(if rho > 1.0 {
                        Complex::new(0.0, 0.0)
                    } else {
                        Complex::from_polar(zernike_radial(n, l, rho), l as f64 * y.atan2(x))
                    });
                }
            }
            v
        })
        .collect();
    if sampling == ZernikeSampling::Orthogonalized {
        for a in 0..moments.len() {
            for b in 0..a {
                if moments[b].1 % 4 != moments[a].1 % 4 {
                    continue;
                }
                let (head, tail) = samples.split_at_mut(a);
                let (u, v) = (&head[b], &mut tail[0]);
                let uu: f64 = u.iter().map(|z| z.norm_sqr()).sum();
                let uv: Complex<f64> = u.iter().zip(v.iter()).map(|(x, y)| x.conj() * y).sum();
                let c = uv / uu;
                for (y, x) in v.iter_mut().zip(u) {
                    *y -= c * x;
                }
            }
        }
    }
    let grids = samples
        .into_iter()
        .map(|v| {
            let data = v.into_iter().map(|z| Complex::new(T::of(z.re), T::of(z.im))).collect();
            Grid::from_parts(grid_size, grid_size, data)
        })
        .collect();
    Ok(ZernikeBasis {
        grid_size,
        max_degree,
        moments,
        grids,
    })
}

impl<T: Real> ZernikeBasis<T> {
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// `(n, l)` for every stored moment, `l >= 0`.
    pub fn moments(&self) -> &[(usize, usize)] {
        &self.moments
    }

    /// Stored moments per channel.
    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    /// Number of `(n, l)` pairs counting both signs of `l`:
    /// `(N + 1)(N + 2) / 2`.
    pub fn signed_pair_count(&self) -> usize {
        self.moments.iter().map(|&(_, l)| if l == 0 { 1 } else { 2 }).sum()
    }

    pub fn grids(&self) -> &[ComplexGrid<T>] {
        &self.grids
    }

    fn norm(&self, n: usize) -> T {
        let cell = 2.0 / self.grid_size as f64;
        T::of((n as f64 + 1.0) / std::f64::consts::PI * cell * cell)
    }
}

/// Moment magnitudes per channel (channel-major) and the channels whose
/// centroid was undefined and fell back to the grid center.
#[derive(Clone, Debug, PartialEq)]
pub struct ZernikeFeatures<T> {
    pub values: Vec<T>,
    pub centroid_fallback: Vec<bool>,
}

struct Centroid<T> {
    mass: T,
    row: T,
    col: T,
    fallback: bool,
}

fn centroid<T: Real>(g: &RealGrid<T>) -> Centroid<T> {
    let (mut m, mut r, mut c) = (T::zero(), T::zero(), T::zero());
    for i in 0..g.height() {
        for j in 0..g.width() {
            let v = g.get(i, j);
            m = m + v;
            r = r + v * T::of_usize(i);
            c = c + v * T::of_usize(j);
        }
    }
    let geo = g.geometry();
    if m > T::zero() {
        Centroid { mass: m, row: r / m, col: c / m, fallback: false }
    } else {
        Centroid {
            mass: m,
            row: T::of(geo.center_row),
            col: T::of(geo.center_col),
            fallback: true,
        }
    }
}

/// Bilinear shift taps: `V(p - s) = Σ_t w_t V[p - o_t]`, with the weight
/// derivatives along rows and columns.
struct Taps<T> {
    offsets: [(isize, isize); 4],
    weights: [T; 4],
    d_row: [T; 4],
    d_col: [T; 4],
}

fn taps<T: Real>(shift_row: T, shift_col: T) -> Taps<T> {
    let fr = shift_row.floor();
    let fc = shift_col.floor();
    let (ar, ac) = (shift_row - fr, shift_col - fc);
    let (r0, c0) = (fr.to_f64() as isize, fc.to_f64() as isize);
    let one = T::one();
    Taps {
        offsets: [(r0, c0), (r0, c0 + 1), (r0 + 1, c0), (r0 + 1, c0 + 1)],
        weights: [(one - ar) * (one - ac), (one - ar) * ac, ar * (one - ac), ar * ac],
        d_row: [-(one - ac), -ac, one - ac, ac],
        d_col: [-(one - ar), one - ar, -ar, ar],
    }
}

/// `Σ_p conj(V[p - o]) f(p)` with zero fill.
fn shifted_inner<T: Real>(v: &ComplexGrid<T>, f: &RealGrid<T>, o: (isize, isize)) -> Complex<T> {
    let (h, w) = (f.height() as isize, f.width() as isize);
    let mut acc = Complex::new(T::zero(), T::zero());
    for i in 0.max(o.0)..h.min(h + o.0) {
        for j in 0.max(o.1)..w.min(w + o.1) {
            let b = v.get((i - o.0) as usize, (j - o.1) as usize);
            let x = f.get(i as usize, j as usize);
            acc = acc + b.conj() * x;
        }
    }
    acc
}

struct ChannelMoments<T> {
    centroid: Centroid<T>,
    taps: Taps<T>,
    /// Per moment, the four integer-shift inner products.
    inner: Vec<[Complex<T>; 4]>,
    moments: Vec<Complex<T>>,
}

fn channel_moments<T: Real>(g: &RealGrid<T>, basis: &ZernikeBasis<T>) -> ChannelMoments<T> {
    let c = centroid(g);
    let geo = g.geometry();
    let t = taps(c.row - T::of(geo.center_row), c.col - T::of(geo.center_col));
    let mut inner = Vec::with_capacity(basis.len());
    let mut moments = Vec::with_capacity(basis.len());
    for (v, &(n, _)) in basis.grids.iter().zip(&basis.moments) {
        let mut s = [Complex::new(T::zero(), T::zero()); 4];
        let mut z = Complex::new(T::zero(), T::zero());
        for k in 0..4 {
            if t.weights[k] != T::zero() || t.d_row[k] != T::zero() || t.d_col[k] != T::zero() {
                s[k] = shifted_inner(v, g, t.offsets[k]);
            }
            z = z + s[k] * t.weights[k];
        }
        inner.push(s);
        moments.push(z * basis.norm(n));
    }
    ChannelMoments { centroid: c, taps: t, inner, moments }
}

pub fn zernike_pool<T: Real>(channels: &[RealGrid<T>], basis: &ZernikeBasis<T>) -> Result<ZernikeFeatures<T>> {
    check_dims(channels, (basis.grid_size, basis.grid_size))?;
    let mut values = Vec::with_capacity(channels.len() * basis.len());
    let mut centroid_fallback = Vec::with_capacity(channels.len());
    for g in channels {
        let m = channel_moments(g, basis);
        values.extend(m.moments.iter().map(|z| z.norm()));
        centroid_fallback.push(m.centroid.fallback);
    }
    Ok(ZernikeFeatures { values, centroid_fallback })
}

/// Input gradients for output gradients `grad` (channel-major, like the
/// pooled values). Includes the dependence of the centroid on the input.
pub fn zernike_backward<T: Real>(
    channels: &[RealGrid<T>],
    basis: &ZernikeBasis<T>,
    grad: &[T],
) -> Result<Vec<RealGrid<T>>> {
    check_dims(channels, (basis.grid_size, basis.grid_size))?;
    if grad.len() != channels.len() * basis.len() {
        return Err(Error::Shape("zernike gradient has the wrong length".into()));
    }
    let zero = Complex::new(T::zero(), T::zero());
    Ok(channels
        .iter()
        .zip(grad.chunks(basis.len()))
        .map(|(g, gz)| {
            let m = channel_moments(g, basis);
            let (h, w) = g.dims();
            let mut out = RealGrid::zeros(h, w);
            let (mut d_row, mut d_col) = (T::zero(), T::zero());
            // Sampled conjugate-free basis seen by each pixel: Σ_t w_t V[p - o_t].
            let mut acc: Vec<Complex<T>> = vec![zero; h * w];
            for (k, ((v, &(n, _)), z)) in basis.grids.iter().zip(&basis.moments).zip(&m.moments).enumerate() {
                let r = z.norm();
                if r == T::zero() || gz[k] == T::zero() {
                    continue;
                }
                // Gradient w.r.t. the complex moment, then w.r.t. the unscaled sum.
                let gm = *z * (gz[k] / r) * basis.norm(n);
                for t in 0..4 {
                    d_row = d_row + (gm.conj() * m.inner[k][t]).re * m.taps.d_row[t];
                    d_col = d_col + (gm.conj() * m.inner[k][t]).re * m.taps.d_col[t];
                    let wt = m.taps.weights[t];
                    if wt == T::zero() {
                        continue;
                    }
                    let o = m.taps.offsets[t];
                    for i in 0.max(o.0)..(h as isize).min(h as isize + o.0) {
                        for j in 0.max(o.1)..(w as isize).min(w as isize + o.1) {
                            let b = v.get((i - o.0) as usize, (j - o.1) as usize);
                            let p = i as usize * w + j as usize;
                            acc[p] = acc[p] + b * (gm * wt);
                        }
                    }
                }
            }
            let c = &m.centroid;
            for i in 0..h {
                for j in 0..w {
                    let mut v = acc[i * w + j].re;
                    if !c.fallback {
                        v = v + (d_row * (T::of_usize(i) - c.row) + d_col * (T::of_usize(j) - c.col)) / c.mass;
                    }
                    out.set(i, j, v);
                }
            }
            out
        })
        .collect())
}
