//! MNIST ingestion, rotated dataset generation and split archives.

mod archive;
mod dataset;
mod generate;
mod idx;

pub use archive::{archive_name, decode_split, encode_split, read_split, write_split, ARCHIVE_MAGIC};
pub use dataset::{RotatedDataset, Split};
pub use generate::{fixed_angles, generate_dataset, split_sizes, GeneratedSplits};
pub use idx::{encode_idx, load_mnist, locate, parse_idx, read_idx, IdxTensor, Mnist, MnistPart, IDX_IMAGES, IDX_LABELS, MNIST_FILES};
