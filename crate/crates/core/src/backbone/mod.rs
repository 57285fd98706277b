//! Rotation-equivariant backbone layers over [`StreamBundle`]s.

mod bundle;
mod conv;
mod magnitude;
mod pool;

pub use bundle::StreamBundle;
pub use conv::{h_conv, ConvCache, ConvGrads, ConvKernels, ConvLayerSpec, ConvPlan, ConvTopology, LinkWeights};
pub use magnitude::{h_batchnorm, h_relu, relu_backward, relu_forward, BatchNorm, BatchNormCache, RunningStats};
pub use pool::{h_meanpool, magnitude_readout, meanpool_backward, meanpool_dims, readout_backward, ReadoutMode};
