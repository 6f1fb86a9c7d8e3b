// `!(x > 0.0)` is used deliberately so NaN takes the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod lmshape;
pub mod lmtrain;
pub mod metrics;
pub mod numkernel;
pub mod toymodel;

pub use error::{Error, Result};
