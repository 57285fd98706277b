//! Shared fixtures for unit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::StreamBundle;
use crate::grid::make_circular_mask;

pub(crate) use crate::gradcheck::{bundle, flatten, probe, real_grid, unflatten};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn masked_bundle(
    rng: &mut ChaCha8Rng,
    orders: &[i32],
    channels: &[usize],
    h: usize,
    w: usize,
) -> StreamBundle<f64> {
    let mask = make_circular_mask(h, w).unwrap();
    bundle(rng, orders, channels, h, w).apply_mask(&mask).unwrap()
}
