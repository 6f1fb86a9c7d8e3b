use crate::error::{Error, Result};
use crate::estimators::Dataset;
use crate::metrics::{AgopMatrix, AgopSpace, EstimatorTag};
use crate::numkernel::linalg::gemm;

use super::TiedAutoencoder;

fn check(model: &TiedAutoencoder, data: &Dataset, chunk: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.point_len() != model.dim() {
        return Err(Error::Shape(format!(
            "points of length {} for a model of width {}",
            data.point_len(),
            model.dim()
        )));
    }
    if chunk == 0 {
        return Err(Error::InvalidArgument("chunk size must be positive".into()));
    }
    Ok(())
}

/// Co-activation `C_ij = E[m_i m_j]` of the ReLU gates, accumulated chunk by chunk.
pub fn coactivation(model: &TiedAutoencoder, data: &Dataset, chunk: usize) -> Result<Vec<f64>> {
    check(model, data, chunk)?;
    let d = model.dim();
    let mut c = vec![0.0; d * d];
    for block in data.flat().chunks(chunk * d) {
        let rows = block.len() / d;
        let (_, z) = model.preact_batch(block, rows);
        let mask: Vec<f64> = z.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        gemm(d, rows, d, 1.0, &mask, true, &mask, false, 1.0, &mut c);
    }
    let inv = 1.0 / data.len() as f64;
    c.iter_mut().for_each(|v| *v *= inv);
    Ok(c)
}

/// Closed-form `A = (G G) ⊙ C` with `G = W^T W`.
pub fn tied_autoencoder_agop(model: &TiedAutoencoder, data: &Dataset, chunk: usize) -> Result<AgopMatrix> {
    let c = coactivation(model, data, chunk)?;
    let (m, d) = (model.bottleneck(), model.dim());
    let w = model.w.data();
    // G G = W^T (W W^T) W
    let mut k = vec![0.0; m * m];
    gemm(m, d, m, 1.0, w, false, w, true, 0.0, &mut k);
    let mut kw = vec![0.0; m * d];
    gemm(m, m, d, 1.0, &k, false, w, false, 0.0, &mut kw);
    let mut a = vec![0.0; d * d];
    gemm(d, m, d, 1.0, w, true, &kw, false, 0.0, &mut a);
    for (v, ci) in a.iter_mut().zip(&c) {
        *v *= ci;
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("non-finite closed-form AGOP".into()));
    }
    AgopMatrix::from_square(a, d, AgopSpace::Output, data.len(), EstimatorTag::ClosedForm)
}
