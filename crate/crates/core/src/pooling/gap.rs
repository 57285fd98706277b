use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::scalar::Real;

pub(crate) fn support_indices<T: Real>(mask: &RealGrid<T>) -> Result<Vec<usize>> {
    let idx: Vec<usize> = mask
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != T::zero())
        .map(|(p, _)| p)
        .collect();
    if idx.is_empty() {
        return Err(Error::Degenerate("mask support is empty".into()));
    }
    Ok(idx)
}

pub(crate) fn check_dims<T: Real>(channels: &[RealGrid<T>], dims: (usize, usize)) -> Result<()> {
    if let Some(g) = channels.iter().find(|g| g.dims() != dims) {
        return Err(Error::Shape(format!(
            "channel is {:?}, expected {:?}",
            g.dims(),
            dims
        )));
    }
    Ok(())
}

/// Per channel, the mean over the mask support.
pub fn gap_pool<T: Real>(channels: &[RealGrid<T>], mask: &RealGrid<T>) -> Result<Vec<T>> {
    check_dims(channels, mask.dims())?;
    let idx = support_indices(mask)?;
    let n = T::of_usize(idx.len());
    Ok(channels
        .iter()
        .map(|g| {
            let s = g.as_slice();
            idx.iter().map(|&p| s[p]).sum::<T>() / n
        })
        .collect())
}

pub fn gap_backward<T: Real>(grad: &[T], mask: &RealGrid<T>) -> Result<Vec<RealGrid<T>>> {
    let idx = support_indices(mask)?;
    let n = T::of_usize(idx.len());
    let (h, w) = mask.dims();
    Ok(grad
        .iter()
        .map(|&g| {
            let mut out = RealGrid::zeros(h, w);
            let v = g / n;
            for &p in &idx {
                out.as_mut_slice()[p] = v;
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use crate::grid::{make_circular_mask, rotate_resample, Grid};
    use crate::testkit;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn constant_and_rotation() {
        let mask = make_circular_mask::<f64>(9, 9).unwrap();
        let c = Grid::from_fn(9, 9, |_, _| 0.7);
        assert!((gap_pool(&[c], &mask).unwrap()[0] - 0.7).abs() < 1e-15);
        let mut rng = testkit::rng(1);
        let g = testkit::real_grid(&mut rng, 9, 9);
        let base = gap_pool(std::slice::from_ref(&g), &mask).unwrap()[0];
        for q in 1..4 {
            let r = rotate_resample(&g, q as f64 * FRAC_PI_2);
            assert!((gap_pool(&[r], &mask).unwrap()[0] - base).abs() < 1e-14);
        }
    }

    #[test]
    fn permutation_within_support() {
        let mask = make_circular_mask::<f64>(6, 6).unwrap();
        let mut rng = testkit::rng(2);
        let g = testkit::real_grid(&mut rng, 6, 6);
        let idx = support_indices(&mask).unwrap();
        let mut p = g.clone();
        for (a, b) in idx.iter().zip(idx.iter().rev()) {
            p.as_mut_slice()[*a] = g.as_slice()[*b];
        }
        let x = gap_pool(&[g], &mask).unwrap()[0];
        let y = gap_pool(&[p], &mask).unwrap()[0];
        assert!((x - y).abs() < 1e-14);
    }

    #[test]
    fn errors() {
        let empty = RealGrid::<f64>::zeros(4, 4);
        assert!(matches!(gap_pool(&[RealGrid::zeros(4, 4)], &empty), Err(Error::Degenerate(_))));
        let mask = make_circular_mask::<f64>(4, 4).unwrap();
        assert!(matches!(gap_pool(&[RealGrid::zeros(3, 4)], &mask), Err(Error::Shape(_))));
    }

    #[test]
    fn gradient() {
        let mask = make_circular_mask::<f64>(5, 5).unwrap();
        let mut rng = testkit::rng(3);
        let g = testkit::real_grid(&mut rng, 5, 5);
        let w = [0.3];
        let ana = gap_backward(&w, &mask).unwrap();
        let num = central_difference(
            |x| 0.3 * gap_pool(&[Grid::new(5, 5, x.to_vec()).unwrap()], &mask).unwrap()[0],
            g.as_slice(),
            1e-5,
        );
        assert!(relative_error(ana[0].as_slice(), &num) < 1e-5);
    }
}
