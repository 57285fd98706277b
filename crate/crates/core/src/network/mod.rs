//! Parameter storage, the composed network with its reverse pass,
//! optimizers, checkpoints and the training loop.

mod checkpoint;
mod model;
mod optim;
mod params;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use model::{argmax, cross_entropy, Network, Stage, Tape};
pub use optim::{Optimizer, OptimizerSpec};
pub use params::{ParamStore, Tensor};
pub use train::{accuracy, initial_params, predictions, seeded_rng, train, train_step, TrainRecord};
