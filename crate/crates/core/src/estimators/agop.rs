use rand::Rng as _;

use super::data::{Dataset, EstimatorConfig, PointSource, ProjectionMatrix};
use crate::error::{Error, Result};
use crate::metrics::{AgopMatrix, AgopSpace, EstimatorTag};
use crate::numkernel::linalg::gemm;
use crate::numkernel::{jacobian, rng, DiffModel};

fn check_source<M: DiffModel + ?Sized, S: PointSource + ?Sized>(model: &M, data: &S) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.point_len() != model.input_len() {
        return Err(Error::Shape(format!(
            "data points have length {} but the model takes {}",
            data.point_len(),
            model.input_len()
        )));
    }
    if model.output_len() == 0 {
        return Err(Error::InvalidArgument("model has no outputs".into()));
    }
    Ok(())
}

/// Input-space AGOP: mean of `J_f J_f^T` (`d x d`), with `J_f` holding output gradients as columns.
pub fn exact_agop_input<M: DiffModel + ?Sized>(model: &M, data: &Dataset) -> Result<AgopMatrix> {
    check_source(model, data)?;
    let (d, c) = (model.input_len(), model.output_len());
    let mut acc = vec![0.0; d * d];
    for x in data.iter() {
        let jac = jacobian(model, x);
        // J_f J_f^T = J_std^T J_std
        gemm(d, c, d, 1.0, &jac, true, &jac, false, 1.0, &mut acc);
    }
    finish(acc, d, data.len(), AgopSpace::Input, EstimatorTag::Exact)
}

/// Output-side Gram: mean of `J J^T` (`c x c`) with `J` the standard Jacobian.
pub fn exact_gram_output<M: DiffModel + ?Sized>(model: &M, data: &Dataset) -> Result<AgopMatrix> {
    check_source(model, data)?;
    let (d, c) = (model.input_len(), model.output_len());
    let mut acc = vec![0.0; c * c];
    for x in data.iter() {
        let jac = jacobian(model, x);
        gemm(c, d, c, 1.0, &jac, false, &jac, true, 1.0, &mut acc);
    }
    finish(acc, c, data.len(), AgopSpace::Output, EstimatorTag::Exact)
}

fn finish(mut acc: Vec<f64>, dim: usize, count: usize, space: AgopSpace, tag: EstimatorTag) -> Result<AgopMatrix> {
    let inv = 1.0 / count as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("non-finite Jacobian".into()));
    }
    AgopMatrix::from_square(acc, dim, space, count, tag)
}

/// Monte-Carlo projected Gram `E_x E_u[(P J u)(P J u)^T]` from random JVPs.
///
/// Batch `b` draws its sample indices (uniform, with replacement) and its
/// standard-normal tangents from stream `b` of `seed`. Per-batch partial sums
/// are reduced in batch order.
pub fn jvp_agop<M, S>(
    model: &M,
    data: &S,
    projection: &ProjectionMatrix,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<AgopMatrix>
where
    M: DiffModel + ?Sized,
    S: PointSource + ?Sized,
{
    cfg.validate()?;
    check_source(model, data)?;
    let (d, c) = (model.input_len(), model.output_len());
    if projection.in_dim() != c {
        return Err(Error::Shape(format!(
            "projection expects {} inputs but the model emits {c}",
            projection.in_dim()
        )));
    }
    let k = projection.out_dim();
    let p = projection.values.data();
    let probes = cfg.n_probes;

    let mut partials = Vec::with_capacity(cfg.n_batches);
    for b in 0..cfg.n_batches {
        let mut r = rng::stream(seed, b as u64);
        let indices: Vec<usize> = (0..cfg.batch_size).map(|_| r.gen_range(0..data.len())).collect();
        let mut partial = vec![0.0; k * k];
        let mut tangents = vec![0.0; probes * d];
        let mut z = vec![0.0; probes * k];
        for &i in &indices {
            let x = data.point(i);
            rng::fill_normal(&mut r, &mut tangents, 1.0);
            let y = model.jvp_batch(&x, &tangents, probes);
            // z = y P^T  (probes x k)
            gemm(probes, c, k, 1.0, &y, false, p, true, 0.0, &mut z);
            gemm(k, probes, k, 1.0, &z, true, &z, false, 1.0, &mut partial);
        }
        partials.push(partial);
    }

    let mut total = vec![0.0; k * k];
    for partial in &partials {
        for (t, v) in total.iter_mut().zip(partial) {
            *t += v;
        }
    }
    let n = cfg.total_probes() as f64;
    total.iter_mut().for_each(|v| *v /= n);
    if total.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("non-finite JVP output".into()));
    }
    AgopMatrix::from_square(
        total,
        k,
        AgopSpace::Projected,
        cfg.n_batches * cfg.batch_size,
        EstimatorTag::JvpProbe,
    )
}
