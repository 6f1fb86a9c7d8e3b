use serde::{Deserialize, Serialize};

use super::agop::AgopMatrix;
use crate::error::{Error, Result};
use crate::numkernel::{linalg, Tensor};

/// Off-diagonal Frobenius energy: sum of squared off-diagonal entries.
pub fn aofe(g: &AgopMatrix) -> f64 {
    let n = g.dim();
    let v = g.values();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += v[i * n + j] * v[i * n + j];
            }
        }
    }
    acc
}

/// Squared Frobenius norm.
pub fn total_energy(g: &AgopMatrix) -> f64 {
    g.values().iter().map(|v| v * v).sum()
}

pub fn diagonal_energy(g: &AgopMatrix) -> f64 {
    g.diagonal().iter().map(|v| v * v).sum()
}

/// Fraction of total energy carried off the diagonal. Zero matrices are an error.
pub fn aofe_ratio(g: &AgopMatrix) -> Result<f64> {
    let off = aofe(g);
    let total = off + diagonal_energy(g);
    if !(total > 0.0) {
        return Err(Error::UndefinedRatio);
    }
    Ok((off / total).clamp(0.0, 1.0))
}

pub fn is_gradient_superposed(g: &AgopMatrix, tau: f64) -> bool {
    let n = g.dim();
    (0..n).any(|i| (0..n).any(|j| i != j && g.get(i, j).abs() > tau))
}

/// `1e-8 * max diagonal entry`.
pub fn default_threshold(g: &AgopMatrix) -> f64 {
    let max_diag = g.diagonal().into_iter().fold(0.0_f64, f64::max);
    1e-8 * max_diag
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub aofe: f64,
    pub aofe_ratio: f64,
    pub superposed: bool,
    pub threshold_used: f64,
}

impl InteractionReport {
    pub fn from_agop(g: &AgopMatrix, tau: Option<f64>) -> Result<Self> {
        let threshold_used = tau.unwrap_or_else(|| default_threshold(g));
        Ok(InteractionReport {
            aofe: aofe(g),
            aofe_ratio: aofe_ratio(g)?,
            superposed: is_gradient_superposed(g, threshold_used),
            threshold_used,
        })
    }
}

/// Pearson correlation between the entries of `W^T W` and of `G^alpha`.
pub fn nfa_alignment(w: &Tensor, g: &AgopMatrix, alpha: f64) -> Result<f64> {
    if !w.is_matrix() {
        return Err(Error::Shape("NFA weight must be a matrix".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let (rows, cols) = (w.rows(), w.cols());
    if cols != g.dim() {
        return Err(Error::Shape(format!(
            "W^T W is {cols}x{cols} but the AGOP is {0}x{0}",
            g.dim()
        )));
    }
    let gram = linalg::gram_cols(w.data(), rows, cols);
    let powered = linalg::psd_power(g.values(), g.dim(), alpha);
    pearson_flat(&gram, &powered)
}

fn pearson_flat(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0) || !(sbb > 0.0) {
        return Err(Error::DegenerateAlignment("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}
