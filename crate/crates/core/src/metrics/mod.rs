//! Interaction metrics on AGOP matrices.

mod agop;
mod interaction;

pub use agop::{symmetrize, AgopMatrix, AgopSpace, EstimatorTag};
pub use interaction::{
    aofe, aofe_ratio, default_threshold, diagonal_energy, is_gradient_superposed, nfa_alignment, total_energy,
    InteractionReport,
};
