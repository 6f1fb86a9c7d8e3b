use std::borrow::Cow;

use super::corpus::eval_windows;
use super::model::TinyTransformer;
use crate::error::{Error, Result};
use crate::estimators::{jvp_agop, EstimatorConfig, PointSource, PreprocessedLogits, ProjectionMatrix};
use crate::metrics::{aofe, aofe_ratio, nfa_alignment, AgopMatrix, AgopSpace, EstimatorTag};
use crate::numkernel::linalg::gemm;
use crate::numkernel::{DiffModel, Tensor};

/// Last-position logits as a function of the embedded input sequence (`seq x d`).
pub struct LastLogits<'a> {
    pub model: &'a TinyTransformer,
    pub seq: usize,
}

impl DiffModel for LastLogits<'_> {
    fn input_shape(&self) -> Vec<usize> {
        vec![self.seq, self.model.config.d_model]
    }

    fn output_len(&self) -> usize {
        self.model.config.vocab
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let v = self.model.config.vocab;
        let (logits, _) = self.model.forward_embedded(x.to_vec(), 1, self.seq);
        logits[(self.seq - 1) * v..].to_vec()
    }

    fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Vec<f64> {
        let v = self.model.config.vocab;
        let (_, cache) = self.model.forward_embedded(x.to_vec(), 1, self.seq);
        let mut dlogits = vec![0.0; self.seq * v];
        dlogits[(self.seq - 1) * v..].copy_from_slice(cotangent);
        self.model.backward(&cache, &dlogits, None)
    }

    fn jvp(&self, x: &[f64], tangent: &[f64]) -> Vec<f64> {
        self.model.jvp_last(x, self.seq, tangent, 1)
    }

    fn jvp_batch(&self, x: &[f64], tangents: &[f64], count: usize) -> Vec<f64> {
        self.model.jvp_last(x, self.seq, tangents, count)
    }
}

/// Evaluation windows of a split, embedded on demand.
pub struct WindowSource<'a> {
    pub model: &'a TinyTransformer,
    pub windows: Vec<&'a [u8]>,
    pub seq: usize,
}

impl<'a> WindowSource<'a> {
    pub fn new(model: &'a TinyTransformer, split: &'a [u8], seq: usize) -> Self {
        WindowSource {
            model,
            windows: eval_windows(split, seq),
            seq,
        }
    }
}

impl PointSource for WindowSource<'_> {
    fn len(&self) -> usize {
        self.windows.len()
    }

    fn point_len(&self) -> usize {
        self.seq * self.model.config.d_model
    }

    fn point(&self, index: usize) -> Cow<'_, [f64]> {
        Cow::Owned(self.model.embed(&self.windows[index][..self.seq], 1, self.seq))
    }
}

#[derive(Clone, Debug)]
pub struct LmInteraction {
    pub agop: AgopMatrix,
    pub aofe: f64,
    pub aofe_ratio: f64,
}

/// Projected AGOP of the last-position logits over test windows, with tangents in embedding space.
pub fn lm_agop_metrics(
    model: &TinyTransformer,
    test_split: &[u8],
    projection: &ProjectionMatrix,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<LmInteraction> {
    let seq = model.config.context;
    let source = WindowSource::new(model, test_split, seq);
    let last = LastLogits { model, seq };
    let agop = if cfg.center_logits || cfg.rms_normalize_logits {
        jvp_agop(&PreprocessedLogits::new(last, cfg), &source, projection, cfg, seed)?
    } else {
        jvp_agop(&last, &source, projection, cfg, seed)?
    };
    let ratio = match aofe_ratio(&agop) {
        Ok(r) => r,
        Err(Error::UndefinedRatio) => return Err(Error::DegenerateAgop("projected AGOP is identically zero".into())),
        Err(e) => return Err(e),
    };
    Ok(LmInteraction {
        aofe: aofe(&agop),
        aofe_ratio: ratio,
        agop,
    })
}

/// Exact input AGOP of the last-position logits with respect to the last position's
/// embedding (`d x d`), averaged over the first `max_windows` windows of a split.
pub fn lm_last_input_agop(model: &TinyTransformer, split: &[u8], max_windows: usize) -> Result<AgopMatrix> {
    let seq = model.config.context;
    let (d, v) = (model.config.d_model, model.config.vocab);
    let source = WindowSource::new(model, split, seq);
    let count = source.len().min(max_windows);
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut basis = vec![0.0; d * seq * d];
    for k in 0..d {
        basis[k * seq * d + (seq - 1) * d + k] = 1.0;
    }
    let mut sum = vec![0.0; d * d];
    for i in 0..count {
        // row k holds the derivative of the logits along embedding coordinate k
        let jt = model.jvp_last(&source.point(i), seq, &basis, d);
        gemm(d, v, d, 1.0, &jt, false, &jt, true, 1.0, &mut sum);
    }
    sum.iter_mut().for_each(|s| *s /= count as f64);
    AgopMatrix::from_square(sum, d, AgopSpace::Input, count, EstimatorTag::Exact)
}

/// Correlation between the first block's query/key/value Gram and `g^alpha`, where `g` is a
/// last-position input AGOP from [`lm_last_input_agop`].
pub fn lm_nfa_alignment(model: &TinyTransformer, g: &AgopMatrix, alpha: f64) -> Result<f64> {
    let d = model.config.d_model;
    let qkv = model
        .tensor("blocks.0.attn.qkv")
        .ok_or_else(|| Error::Shape("model has no blocks".into()))?;
    // stored input-major (d x 3d); the ansatz wants the (3d x d) map
    let w = Tensor::matrix(d, 3 * d, qkv.to_vec())?.transpose()?;
    nfa_alignment(&w, g, alpha)
}
