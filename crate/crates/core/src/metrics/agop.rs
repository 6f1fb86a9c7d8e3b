use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::linalg;
use crate::numkernel::Tensor;

/// Which space the AGOP lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgopSpace {
    Input,
    Output,
    Projected,
}

impl fmt::Display for AgopSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgopSpace::Input => "input",
            AgopSpace::Output => "output",
            AgopSpace::Projected => "projected",
        })
    }
}

impl FromStr for AgopSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(AgopSpace::Input),
            "output" => Ok(AgopSpace::Output),
            "projected" => Ok(AgopSpace::Projected),
            other => Err(Error::InvalidArgument(format!("unknown AGOP space {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    Exact,
    JvpProbe,
    ClosedForm,
    Supplied,
}

/// Symmetric co-sensitivity matrix plus provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct AgopMatrix {
    values: Vec<f64>,
    dim: usize,
    pub space: AgopSpace,
    pub sample_count: usize,
    pub estimator: EstimatorTag,
}

impl AgopMatrix {
    /// Wraps a square matrix, symmetrizing it.
    pub fn from_square(
        values: Vec<f64>,
        dim: usize,
        space: AgopSpace,
        sample_count: usize,
        estimator: EstimatorTag,
    ) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::Shape(format!(
                "AGOP of side {dim} needs {} values, got {}",
                dim * dim,
                values.len()
            )));
        }
        let mut m = AgopMatrix {
            values,
            dim,
            space,
            sample_count,
            estimator,
        };
        m.symmetrize_in_place();
        Ok(m)
    }

    pub fn zeros(dim: usize, space: AgopSpace) -> Self {
        AgopMatrix {
            values: vec![0.0; dim * dim],
            dim,
            space,
            sample_count: 0,
            estimator: EstimatorTag::Supplied,
        }
    }

    fn symmetrize_in_place(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.values[i * n + j] + self.values[j * n + i]);
                self.values[i * n + j] = avg;
                self.values[j * n + i] = avg;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.dim, self.dim, self.values.clone()).expect("square by construction")
    }

    pub fn scaled(&self, s: f64) -> AgopMatrix {
        AgopMatrix {
            values: self.values.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    /// Simultaneous row/column permutation: `out[i][j] = self[p[i]][p[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<AgopMatrix> {
        let n = self.dim;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = self.get(perm[i], perm[j]);
            }
        }
        Ok(AgopMatrix { values, ..self.clone() })
    }

    /// Elementwise mean of several same-shaped AGOPs (heatmap averaging across seeds).
    pub fn mean_of(mats: &[AgopMatrix]) -> Result<AgopMatrix> {
        let first = mats.first().ok_or(Error::EmptyDataset)?;
        let mut values = vec![0.0; first.values.len()];
        for m in mats {
            if m.dim != first.dim {
                return Err(Error::Shape("AGOP sides differ".into()));
            }
            for (acc, v) in values.iter_mut().zip(&m.values) {
                *acc += v;
            }
        }
        let k = mats.len() as f64;
        values.iter_mut().for_each(|v| *v /= k);
        Ok(AgopMatrix {
            values,
            sample_count: mats.iter().map(|m| m.sample_count).sum(),
            ..first.clone()
        })
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim == 0 {
            return 0.0;
        }
        let (evals, _) = linalg::sym_eigen(&self.values, self.dim);
        evals.into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Checks the PSD and diagonal invariants with the given tolerances.
    pub fn check_psd(&self, eig_tol: f64) -> Result<()> {
        if let Some(i) = (0..self.dim).find(|&i| self.get(i, i) < -1e-10) {
            return Err(Error::DegenerateAgop(format!("negative diagonal at {i}")));
        }
        let lo = self.min_eigenvalue();
        if lo < -eig_tol {
            return Err(Error::DegenerateAgop(format!("eigenvalue {lo} below -{eig_tol}")));
        }
        Ok(())
    }

    /// Dense CSV: header `agop,dim=N,space=S`, then `N` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "agop,dim={},space={}", self.dim, self.space)?;
        let mut line = String::new();
        for i in 0..self.dim {
            line.clear();
            for j in 0..self.dim {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{}", self.get(i, j)));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<AgopMatrix> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or(Error::Table {
                line: 1,
                reason: "missing header".into(),
            })?
            .map_err(|e| Error::io("<agop csv>", e))?;
        let parts: Vec<&str> = header.trim().split(',').collect();
        let bad_header = || Error::Table {
            line: 1,
            reason: format!("expected `agop,dim=N,space=S`, got {header:?}"),
        };
        if parts.len() != 3 || parts[0] != "agop" {
            return Err(bad_header());
        }
        let dim: usize = parts[1]
            .strip_prefix("dim=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(bad_header)?;
        let space: AgopSpace = parts[2].strip_prefix("space=").ok_or_else(bad_header)?.parse()?;
        let mut values = Vec::with_capacity(dim * dim);
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<agop csv>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::Table {
                line: k + 2,
                reason: e.to_string(),
            })?;
            if row.len() != dim {
                return Err(Error::Table {
                    line: k + 2,
                    reason: format!("expected {dim} values, got {}", row.len()),
                });
            }
            values.extend(row);
        }
        AgopMatrix::from_square(values, dim, space, 0, EstimatorTag::Supplied)
    }
}

/// `(M + M^T) / 2` for a square matrix.
pub fn symmetrize(m: &Tensor) -> Result<AgopMatrix> {
    if !m.is_matrix() || m.rows() != m.cols() {
        return Err(Error::Shape(format!(
            "symmetrize needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    AgopMatrix::from_square(m.data().to_vec(), m.rows(), AgopSpace::Input, 0, EstimatorTag::Supplied)
}
