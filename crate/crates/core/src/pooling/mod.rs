//! Rotation-invariant pooling heads over real feature maps.

mod gap;
mod msa;
mod zernike;

pub use gap::{gap_backward, gap_pool};
pub use msa::{distance_bucket, msa_backward, msa_pool, MsaPoolConfig, MsaWeights};
pub use zernike::{zernike_backward, zernike_basis, zernike_basis_with, ZernikeSampling, zernike_pool, zernike_radial, ZernikeBasis, ZernikeFeatures};
