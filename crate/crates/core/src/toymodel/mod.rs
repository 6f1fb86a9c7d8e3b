//! Tied bottleneck autoencoder `ReLU(W^T W x + b)`, its sparse data, training
//! loop, closed-form AGOP and the training-size sweep.

mod agop;
mod data;
mod model;
mod sweep;
mod train;

pub use agop::{coactivation, tied_autoencoder_agop};
pub use data::{generate_sparse_data, SparseDataSpec};
pub use model::TiedAutoencoder;
pub use sweep::{aggregate_trials, double_descent_sweep, write_sweep_csv, SweepOutput, SweepRow, REFERENCE_SIZES};
pub use train::{toy_loss, train_toy, train_toy_on, ToyTrainConfig, ToyTrialResult};
