//! AGOP estimators: exact per-sample Jacobians, random-probe JVPs with a fixed
//! projection, and logit preprocessing.
//!
//! The tied-autoencoder closed form lives with the model in [`crate::toymodel`].

mod agop;
mod data;
mod preprocess;

pub use agop::{exact_agop_input, exact_gram_output, jvp_agop};
pub use data::{Dataset, EstimatorConfig, PointSource, ProjectionMatrix};
pub use preprocess::{logit_preprocess, PreprocessedLogits};
