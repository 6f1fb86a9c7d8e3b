use super::data::EstimatorConfig;
use crate::error::{Error, Result};
use crate::numkernel::{DiffModel, Tensor};

/// Centers and/or RMS-normalizes one sample's logits (RMS taken after centering).
pub fn logit_preprocess(logits: &Tensor, cfg: &EstimatorConfig) -> Result<Tensor> {
    let out = apply(logits.data(), cfg.center_logits, cfg.rms_normalize_logits);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateLogits);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

fn center(y: &[f64]) -> Vec<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| v - mean).collect()
}

fn rms(c: &[f64]) -> f64 {
    (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt()
}

fn apply(y: &[f64], do_center: bool, do_rms: bool) -> Vec<f64> {
    let c = if do_center { center(y) } else { y.to_vec() };
    if !do_rms {
        return c;
    }
    let r = rms(&c);
    if r == 0.0 {
        return vec![f64::NAN; c.len()];
    }
    c.iter().map(|v| v / r).collect()
}

/// Jacobian of `c -> c / rms(c)` applied to `dc`; the map's Jacobian is symmetric.
fn rms_tangent(c: &[f64], dc: &[f64]) -> Vec<f64> {
    let n = c.len() as f64;
    let r = rms(c);
    let proj: f64 = c.iter().zip(dc).map(|(a, b)| a * b).sum::<f64>() / (n * r * r);
    c.iter().zip(dc).map(|(&ci, &di)| (di - ci * proj) / r).collect()
}

/// Wraps a model so its outputs pass through logit preprocessing before differentiation.
pub struct PreprocessedLogits<M> {
    pub inner: M,
    pub center: bool,
    pub rms: bool,
}

impl<M: DiffModel> PreprocessedLogits<M> {
    pub fn new(inner: M, cfg: &EstimatorConfig) -> Self {
        PreprocessedLogits {
            inner,
            center: cfg.center_logits,
            rms: cfg.rms_normalize_logits,
        }
    }

    fn tangent_at(&self, y: &[f64], t: &[f64]) -> Vec<f64> {
        let (c, dc) = if self.center {
            (center(y), center(t))
        } else {
            (y.to_vec(), t.to_vec())
        };
        if self.rms {
            rms_tangent(&c, &dc)
        } else {
            dc
        }
    }
}

impl<M: DiffModel> DiffModel for PreprocessedLogits<M> {
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape()
    }
    fn output_len(&self) -> usize {
        self.inner.output_len()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        apply(&self.inner.eval(x), self.center, self.rms)
    }
    fn vjp(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let y = self.inner.eval(x);
        // J = C R-part composition; both factors are symmetric so J^T v = C (R v).
        let pulled = if self.rms {
            let c = if self.center { center(&y) } else { y.clone() };
            rms_tangent(&c, v)
        } else {
            v.to_vec()
        };
        let pulled = if self.center { center(&pulled) } else { pulled };
        self.inner.vjp(x, &pulled)
    }
    fn jvp(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let y = self.inner.eval(x);
        self.tangent_at(&y, &self.inner.jvp(x, u))
    }
    fn jvp_batch(&self, x: &[f64], tangents: &[f64], count: usize) -> Vec<f64> {
        if !self.center && !self.rms {
            return self.inner.jvp_batch(x, tangents, count);
        }
        let y = self.inner.eval(x);
        let raw = self.inner.jvp_batch(x, tangents, count);
        let c = self.output_len();
        raw.chunks(c).flat_map(|t| self.tangent_at(&y, t)).collect()
    }
}
