use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Dataset;
use crate::numkernel::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseDataSpec {
    pub n: usize,
    pub d: usize,
    pub p_zero: f64,
    pub seed: u64,
}

impl SparseDataSpec {
    /// Training set of size `n`; the seed depends only on `n`.
    pub fn train(n: usize, d: usize) -> Self {
        SparseDataSpec {
            n,
            d,
            p_zero: 0.99,
            seed: rng::derive_seed(&format!("train:{n}")),
        }
    }

    /// The fixed evaluation set shared by every training size.
    pub fn test(n: usize, d: usize) -> Self {
        SparseDataSpec {
            n,
            d,
            p_zero: 0.99,
            seed: rng::derive_seed("test"),
        }
    }
}

/// Sparse nonnegative unit vectors. An all-zero draw is redrawn from the same stream.
pub fn generate_sparse_data(spec: &SparseDataSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.d == 0 {
        return Err(Error::InvalidArgument(format!(
            "sparse data needs n, d >= 1 (got n={}, d={})",
            spec.n, spec.d
        )));
    }
    if !(0.0..1.0).contains(&spec.p_zero) {
        return Err(Error::InvalidArgument(format!("p_zero {} not in [0,1)", spec.p_zero)));
    }
    let mut r = rng::named_stream(spec.seed, "sparse");
    let mut flat = vec![0.0; spec.n * spec.d];
    for x in flat.chunks_mut(spec.d) {
        loop {
            let mut sq = 0.0;
            for v in x.iter_mut() {
                let keep = r.gen::<f64>() >= spec.p_zero;
                *v = if keep { r.gen::<f64>() } else { 0.0 };
                sq += *v * *v;
            }
            if sq > 0.0 {
                let inv = 1.0 / sq.sqrt();
                x.iter_mut().for_each(|v| *v *= inv);
                break;
            }
        }
    }
    Dataset::from_flat(flat, spec.d, spec.seed)
}
