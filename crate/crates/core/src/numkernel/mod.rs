//! Dense f64 numerics: tensors, the differentiable-model contract, AdamW and
//! the warmup-cosine schedule.

pub mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use model::{
    directional_derivative, forward, input_gradient, jacobian, Activation, DiffModel, Identity, LinearMap, Mlp, Relu,
};
pub use optim::{adamw_step, AdamWConfig, OptimState, StepStats};
pub use schedule::{lr_at, LrSchedule};
pub use tensor::Tensor;
