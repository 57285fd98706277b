use serde::{Deserialize, Serialize};

use super::bundle::StreamBundle;
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, Grid, RealGrid};
use crate::scalar::{Complex, Real};

fn pooled_len(n: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::Parameter("pool window and stride must be >= 1".into()));
    }
    if window > n || !(n - window).is_multiple_of(stride) {
        return Err(Error::Shape(format!(
            "size {n} does not tile with window {window} stride {stride}"
        )));
    }
    Ok((n - window) / stride + 1)
}

/// Output size of a mean pool, or a shape error if the windows do not tile
/// the grid exactly.
pub fn meanpool_dims(dims: (usize, usize), window: usize, stride: usize) -> Result<(usize, usize)> {
    Ok((pooled_len(dims.0, window, stride)?, pooled_len(dims.1, window, stride)?))
}

/// Complex mean over `window x window` blocks placed every `stride` pixels.
pub fn h_meanpool<T: Real>(input: &StreamBundle<T>, window: usize, stride: usize) -> Result<StreamBundle<T>> {
    let (oh, ow) = meanpool_dims(input.dims(), window, stride)?;
    let scale = T::one() / T::of_usize(window * window);
    Ok(input.map_channels(|g| {
        Grid::from_fn(oh, ow, |i, j| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for di in 0..window {
                for dj in 0..window {
                    acc = acc + g.get(i * stride + di, j * stride + dj);
                }
            }
            acc * scale
        })
    }))
}

pub fn meanpool_backward<T: Real>(
    grad: &StreamBundle<T>,
    input_dims: (usize, usize),
    window: usize,
    stride: usize,
) -> Result<StreamBundle<T>> {
    let (oh, ow) = meanpool_dims(input_dims, window, stride)?;
    if grad.dims() != (oh, ow) {
        return Err(Error::Shape("pool gradient has the wrong size".into()));
    }
    let scale = T::one() / T::of_usize(window * window);
    Ok(grad.map_channels(|g| {
        let mut out = ComplexGrid::zeros(input_dims.0, input_dims.1);
        for i in 0..oh {
            for j in 0..ow {
                let v = g.get(i, j) * scale;
                for di in 0..window {
                    for dj in 0..window {
                        let (r, c) = (i * stride + di, j * stride + dj);
                        out.set(r, c, out.get(r, c) + v);
                    }
                }
            }
        }
        out
    }))
}

/// How complex streams are turned into real, rotation-invariant channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutMode {
    /// Magnitudes of the order-0 channels.
    M0,
    /// Per channel index, the sum over orders of magnitudes.
    Sum,
    /// Per channel index, the magnitude of the complex sum over orders.
    /// Not rotation invariant; kept for comparison.
    SumComplex,
    /// Magnitudes of every channel of every order.
    Wide,
}

impl ReadoutMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReadoutMode::M0 => "m0",
            ReadoutMode::Sum => "sum",
            ReadoutMode::SumComplex => "sum-complex",
            ReadoutMode::Wide => "wide",
        }
    }

    /// Real channel count produced from a bundle layout.
    pub fn output_channels(self, orders: &[i32], channels: &[usize]) -> Result<usize> {
        match self {
            ReadoutMode::M0 => orders
                .iter()
                .position(|&m| m == 0)
                .map(|i| channels[i])
                .ok_or_else(|| Error::Wiring("M0 readout needs an order-0 stream".into())),
            ReadoutMode::Sum | ReadoutMode::SumComplex => {
                let first = *channels
                    .first()
                    .ok_or_else(|| Error::Wiring("empty bundle layout".into()))?;
                if channels.iter().any(|&c| c != first) {
                    return Err(Error::Wiring(
                        "summing over orders needs equal channel counts per order".into(),
                    ));
                }
                Ok(first)
            }
            ReadoutMode::Wide => Ok(channels.iter().sum()),
        }
    }
}

fn modulus<T: Real>(z: Complex<T>) -> T {
    z.norm()
}

fn unit<T: Real>(z: Complex<T>) -> Complex<T> {
    let r = z.norm();
    if r > T::zero() {
        z / r
    } else {
        Complex::new(T::zero(), T::zero())
    }
}

pub fn magnitude_readout<T: Real>(input: &StreamBundle<T>, mode: ReadoutMode) -> Result<Vec<RealGrid<T>>> {
    let counts = input.channel_counts();
    let n = mode.output_channels(input.orders(), &counts)?;
    let (h, w) = input.dims();
    let streams = input.streams();
    Ok(match mode {
        ReadoutMode::M0 => input.stream(0).unwrap().iter().map(|g| g.map(modulus)).collect(),
        ReadoutMode::Wide => input.channels().map(|g| g.map(modulus)).collect(),
        ReadoutMode::Sum => (0..n)
            .map(|c| {
                Grid::from_fn(h, w, |i, j| streams.iter().map(|s| s[c].get(i, j).norm()).sum())
            })
            .collect(),
        ReadoutMode::SumComplex => (0..n)
            .map(|c| {
                Grid::from_fn(h, w, |i, j| {
                    streams
                        .iter()
                        .fold(Complex::new(T::zero(), T::zero()), |acc, s| acc + s[c].get(i, j))
                        .norm()
                })
            })
            .collect(),
    })
}

/// Complex input gradient of [`magnitude_readout`]; the magnitude has
/// subgradient 0 at the origin.
pub fn readout_backward<T: Real>(
    input: &StreamBundle<T>,
    mode: ReadoutMode,
    grads: &[RealGrid<T>],
) -> Result<StreamBundle<T>> {
    let counts = input.channel_counts();
    let n = mode.output_channels(input.orders(), &counts)?;
    if grads.len() != n || grads.iter().any(|g| g.dims() != input.dims()) {
        return Err(Error::Shape("readout gradient layout mismatch".into()));
    }
    let mut out = input.zeros_like();
    match mode {
        ReadoutMode::M0 => {
            let k = input.order_index(0).unwrap();
            for (c, g) in grads.iter().enumerate() {
                let z = &input.streams()[k][c];
                out.streams_mut()[k][c] = Grid::from_fn(z.height(), z.width(), |i, j| {
                    unit(z.get(i, j)) * g.get(i, j)
                });
            }
        }
        ReadoutMode::Wide => {
            for ((o, z), g) in out.channels_mut().zip(input.channels()).zip(grads) {
                *o = Grid::from_fn(z.height(), z.width(), |i, j| unit(z.get(i, j)) * g.get(i, j));
            }
        }
        ReadoutMode::Sum => {
            for (k, stream) in input.streams().iter().enumerate() {
                for (c, z) in stream.iter().enumerate() {
                    let g = &grads[c];
                    out.streams_mut()[k][c] =
                        Grid::from_fn(z.height(), z.width(), |i, j| unit(z.get(i, j)) * g.get(i, j));
                }
            }
        }
        ReadoutMode::SumComplex => {
            let (h, w) = input.dims();
            for (c, g) in grads.iter().enumerate() {
                let dir = Grid::from_fn(h, w, |i, j| {
                    let s = input
                        .streams()
                        .iter()
                        .fold(Complex::new(T::zero(), T::zero()), |acc, st| acc + st[c].get(i, j));
                    unit(s) * g.get(i, j)
                });
                for k in 0..input.orders().len() {
                    out.streams_mut()[k][c] = dir.clone();
                }
            }
        }
    }
    Ok(out)
}
