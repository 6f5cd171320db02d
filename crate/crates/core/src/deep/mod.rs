//! Point-network descriptors: a per-point MLP with a learned 3×3 input transform,
//! a max-pooled global feature and aggregated local/global per-point descriptors.
//!
//! Everything runs in `f64` on the CPU; training is plain mini-batch SGD with momentum.

mod io;
mod network;
mod pointset;
mod shapes;
mod train;

pub use io::{load_network, save_network};
pub use network::{orthogonality_penalty, Dense, GlobalOutput, NetConfig, NetworkParams};
pub use pointset::{sample_pointset, PointSet, CHANNELS};
pub use shapes::{generate_shape, shape_dataset, SHAPE_CLASSES};
pub use train::{accuracy, fine_tune, train, FineTuneOutcome, LabeledSet, TrainConfig, TrainOutcome};
