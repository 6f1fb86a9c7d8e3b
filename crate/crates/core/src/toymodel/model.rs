use crate::error::{Error, Result};
use crate::numkernel::linalg::gemm;
use crate::numkernel::{rng, DiffModel, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TiedAutoencoder {
    /// Encoder, `m x d`.
    pub w: Tensor,
    pub b: Vec<f64>,
}

impl TiedAutoencoder {
    pub fn new(w: Tensor, b: Vec<f64>) -> Result<Self> {
        if !w.is_matrix() || w.cols() != b.len() {
            return Err(Error::Shape(format!(
                "encoder {:?} does not match bias of length {}",
                w.shape(),
                b.len()
            )));
        }
        Ok(TiedAutoencoder { w, b })
    }

    pub fn zeros(m: usize, d: usize) -> Self {
        TiedAutoencoder {
            w: Tensor::zeros(vec![m, d]),
            b: vec![0.0; d],
        }
    }

    /// Gaussian encoder with the given std, zero bias.
    pub fn random(m: usize, d: usize, init_std: f64, seed: u64) -> Self {
        let mut r = rng::named_stream(seed, "toy-init");
        let w = Tensor::matrix(m, d, rng::normal_vec(&mut r, m * d, init_std)).expect("sized");
        TiedAutoencoder { w, b: vec![0.0; d] }
    }

    pub fn bottleneck(&self) -> usize {
        self.w.rows()
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }

    /// `G = W^T W`, `d x d`.
    pub fn gram(&self) -> Vec<f64> {
        let (m, d) = (self.bottleneck(), self.dim());
        let mut g = vec![0.0; d * d];
        gemm(d, m, d, 1.0, self.w.data(), true, self.w.data(), false, 0.0, &mut g);
        g
    }

    /// Pre-activations `z = X W^T W + b` for `rows` inputs stacked row-wise.
    pub(crate) fn preact_batch(&self, x: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let (m, d) = (self.bottleneck(), self.dim());
        let mut h = vec![0.0; rows * m];
        gemm(rows, d, m, 1.0, x, false, self.w.data(), true, 0.0, &mut h);
        let mut z = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            z.extend_from_slice(&self.b);
        }
        gemm(rows, m, d, 1.0, &h, false, self.w.data(), false, 1.0, &mut z);
        (h, z)
    }

    pub fn reconstruct_batch(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (_, mut z) = self.preact_batch(x, rows);
        z.iter_mut().for_each(|v| *v = v.max(0.0));
        z
    }

    fn apply_gram(&self, v: &[f64]) -> Vec<f64> {
        let w = self.w.data();
        let d = self.dim();
        let mut out = vec![0.0; d];
        for row in w.chunks(d) {
            let h: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * h;
            }
        }
        out
    }

    fn mask(&self, x: &[f64]) -> Vec<bool> {
        self.apply_gram(x)
            .iter()
            .zip(&self.b)
            .map(|(z, b)| z + b > 0.0)
            .collect()
    }
}

impl DiffModel for TiedAutoencoder {
    fn input_shape(&self) -> Vec<usize> {
        vec![self.dim()]
    }

    fn output_len(&self) -> usize {
        self.dim()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.apply_gram(x)
            .iter()
            .zip(&self.b)
            .map(|(z, b)| (z + b).max(0.0))
            .collect()
    }

    fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Vec<f64> {
        let masked: Vec<f64> = self
            .mask(x)
            .iter()
            .zip(cotangent)
            .map(|(&on, &v)| if on { v } else { 0.0 })
            .collect();
        self.apply_gram(&masked)
    }

    fn jvp(&self, x: &[f64], tangent: &[f64]) -> Vec<f64> {
        let mask = self.mask(x);
        let mut out = self.apply_gram(tangent);
        for (o, on) in out.iter_mut().zip(mask) {
            if !on {
                *o = 0.0;
            }
        }
        out
    }
}
