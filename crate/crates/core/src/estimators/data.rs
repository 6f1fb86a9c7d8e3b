use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{rng, Tensor};

/// Anything an estimator can draw input points from.
pub trait PointSource {
    fn len(&self) -> usize;
    fn point_len(&self) -> usize;
    fn point(&self, index: usize) -> Cow<'_, [f64]>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered, in-memory collection of equally sized input points.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    flat: Vec<f64>,
    point_len: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let point_len = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != point_len) {
            return Err(Error::Shape("dataset points differ in length".into()));
        }
        Ok(Dataset {
            flat: points.concat(),
            point_len,
            seed,
        })
    }

    pub fn from_flat(flat: Vec<f64>, point_len: usize, seed: u64) -> Result<Self> {
        if point_len == 0 || !flat.len().is_multiple_of(point_len) {
            return Err(Error::Shape(format!(
                "{} values do not split into points of length {point_len}",
                flat.len()
            )));
        }
        Ok(Dataset { flat, point_len, seed })
    }

    pub fn from_tensors(inputs: &[Tensor], seed: u64) -> Result<Self> {
        Dataset::new(inputs.iter().map(|t| t.data().to_vec()).collect(), seed)
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.flat[i * self.point_len..(i + 1) * self.point_len]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.flat.chunks(self.point_len.max(1))
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len().checked_div(self.point_len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point_len(&self) -> usize {
        self.point_len
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut flat = Vec::with_capacity(indices.len() * self.point_len);
        for &i in indices {
            flat.extend_from_slice(self.get(i));
        }
        Dataset {
            flat,
            point_len: self.point_len,
            seed: self.seed,
        }
    }
}

impl PointSource for Dataset {
    fn len(&self) -> usize {
        Dataset::len(self)
    }
    fn point_len(&self) -> usize {
        self.point_len
    }
    fn point(&self, index: usize) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.get(index))
    }
}

/// Fixed Gaussian projection `out_dim x in_dim`, generated once from its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMatrix {
    pub values: Tensor,
    pub seed: Option<u64>,
}

impl ProjectionMatrix {
    pub fn gaussian(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        let mut r = rng::named_stream(seed, "projection");
        let values =
            Tensor::matrix(out_dim, in_dim, rng::normal_vec(&mut r, out_dim * in_dim, 1.0)).expect("sizes agree");
        ProjectionMatrix {
            values,
            seed: Some(seed),
        }
    }

    pub fn identity(n: usize) -> Self {
        ProjectionMatrix {
            values: Tensor::identity(n),
            seed: None,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.values.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.values.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub n_batches: usize,
    pub batch_size: usize,
    pub n_probes: usize,
    pub center_logits: bool,
    pub rms_normalize_logits: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            n_batches: 4,
            batch_size: 128,
            n_probes: 64,
            center_logits: false,
            rms_normalize_logits: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_batches == 0 || self.batch_size == 0 || self.n_probes == 0 {
            return Err(Error::InvalidArgument("estimator counts must all be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_probes(&self) -> usize {
        self.n_batches * self.batch_size * self.n_probes
    }
}
