//! Padded 2-D FFT used for same-size cross-correlation.
//!
//! Spectra are kept in transposed layout (`pad_w` rows of `pad_h` bins);
//! only point-wise products happen in the frequency domain, so the layout
//! never needs to be undone there.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::scalar::{Complex, Real};

/// Smallest length `>= n` whose only prime factors are 2, 3 and 5.
pub(crate) fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

pub(crate) struct Fft2<T: Real> {
    pad_h: usize,
    pad_w: usize,
    fwd_w: Arc<dyn Fft<T>>,
    inv_w: Arc<dyn Fft<T>>,
    fwd_h: Arc<dyn Fft<T>>,
    inv_h: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Fft2<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("pad_h", &self.pad_h)
            .field("pad_w", &self.pad_w)
            .finish()
    }
}

impl<T: Real> Fft2<T> {
    pub(crate) fn new(pad_h: usize, pad_w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            pad_h,
            pad_w,
            fwd_w: planner.plan_fft_forward(pad_w),
            inv_w: planner.plan_fft_inverse(pad_w),
            fwd_h: planner.plan_fft_forward(pad_h),
            inv_h: planner.plan_fft_inverse(pad_h),
        }
    }

    #[inline]
    pub(crate) fn len(&self) -> usize {
        self.pad_h * self.pad_w
    }

    fn scratch(fft: &Arc<dyn Fft<T>>) -> Vec<Complex<T>> {
        vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()]
    }

    /// Forward transform of an `h x w` block zero-padded to the full size.
    pub(crate) fn forward_padded(&self, data: &[Complex<T>], h: usize, w: usize) -> Vec<Complex<T>> {
        debug_assert!(h <= self.pad_h && w <= self.pad_w);
        let zero = Complex::new(T::zero(), T::zero());
        let mut rows = vec![zero; h * self.pad_w];
        for i in 0..h {
            rows[i * self.pad_w..i * self.pad_w + w].copy_from_slice(&data[i * w..(i + 1) * w]);
        }
        let mut scratch = Self::scratch(&self.fwd_w);
        self.fwd_w.process_with_scratch(&mut rows, &mut scratch);
        // Rows h..pad_h are zero and stay zero; transpose into column-major.
        let mut cols = vec![zero; self.len()];
        for i in 0..h {
            for j in 0..self.pad_w {
                cols[j * self.pad_h + i] = rows[i * self.pad_w + j];
            }
        }
        let mut scratch = Self::scratch(&self.fwd_h);
        self.fwd_h.process_with_scratch(&mut cols, &mut scratch);
        cols
    }

    /// Unnormalized inverse transform, returning the top-left `h x w` block.
    pub(crate) fn inverse_cropped(&self, spectrum: &mut [Complex<T>], h: usize, w: usize) -> Vec<Complex<T>> {
        debug_assert_eq!(spectrum.len(), self.len());
        let zero = Complex::new(T::zero(), T::zero());
        let mut scratch = Self::scratch(&self.inv_h);
        self.inv_h.process_with_scratch(spectrum, &mut scratch);
        let mut rows = vec![zero; h * self.pad_w];
        for i in 0..h {
            for j in 0..self.pad_w {
                rows[i * self.pad_w + j] = spectrum[j * self.pad_h + i];
            }
        }
        let mut scratch = Self::scratch(&self.inv_w);
        self.inv_w.process_with_scratch(&mut rows, &mut scratch);
        let mut out = Vec::with_capacity(h * w);
        for i in 0..h {
            out.extend_from_slice(&rows[i * self.pad_w..i * self.pad_w + w]);
        }
        out
    }

    /// Spectrum of a correlation kernel: `taps[(dy, dx)]` for offsets in
    /// `[-half, half]²` is placed at `(-dy, -dx)` modulo the padded size, so
    /// that multiplying spectra computes `Σ_o taps(o) x(p + o)`.
    pub(crate) fn kernel_spectrum(&self, taps: &[Complex<T>], size: usize) -> Vec<Complex<T>> {
        let half = (size as isize - 1) / 2;
        let zero = Complex::new(T::zero(), T::zero());
        let mut buf = vec![zero; self.len()];
        for i in 0..size as isize {
            for j in 0..size as isize {
                let (dy, dx) = (i - half, j - half);
                let r = (-dy).rem_euclid(self.pad_h as isize) as usize;
                let c = (-dx).rem_euclid(self.pad_w as isize) as usize;
                buf[r * self.pad_w + c] = taps[(i * size as isize + j) as usize];
            }
        }
        self.forward_padded(&buf, self.pad_h, self.pad_w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_lengths() {
        assert_eq!(fast_len(63), 64);
        assert_eq!(fast_len(35), 36);
        assert_eq!(fast_len(30), 30);
        assert_eq!(fast_len(31), 32);
        assert_eq!(fast_len(7), 8);
    }

    #[test]
    fn round_trip_recovers_block() {
        let fft = Fft2::<f64>::new(8, 12);
        let data: Vec<Complex<f64>> = (0..15).map(|k| Complex::new(k as f64, -(k as f64) * 0.5)).collect();
        let mut spec = fft.forward_padded(&data, 3, 5);
        let back = fft.inverse_cropped(&mut spec, 3, 5);
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b / 96.0).norm() < 1e-12);
        }
    }
}
