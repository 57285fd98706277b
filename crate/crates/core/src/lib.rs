pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
mod fft;
pub mod filters;
pub mod gradcheck;
pub mod grid;
pub mod manifest;
pub mod network;
pub mod pooling;
pub mod scalar;
pub mod verify;

#[cfg(test)]
mod testkit;

pub use backbone::StreamBundle;
pub use config::{count_parameters, NetworkConfig, RunConfig, Variant};
pub use data::{RotatedDataset, Split};
pub use error::{Error, Result};
pub use grid::{ComplexGrid, Grid, GridGeometry, RealGrid};
pub use network::{Network, ParamStore, TrainRecord};
pub use scalar::{Complex, Real};
