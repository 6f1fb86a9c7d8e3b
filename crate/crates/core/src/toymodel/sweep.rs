use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::data::{generate_sparse_data, SparseDataSpec};
use super::train::{train_toy_on, ToyTrainConfig, ToyTrialResult};
use crate::error::{Error, Result};
use crate::metrics::AgopMatrix;

/// Training sizes of the reference double-descent grid.
pub const REFERENCE_SIZES: [usize; 22] = [
    3, 5, 8, 10, 15, 30, 50, 100, 200, 500, 1000, 1395, 1946, 2714, 3786, 5282, 7368, 10278, 14337, 20000, 30000, 40000,
];

/// Per-size aggregate over seeds. Standard deviations are population (ddof 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub data_size: usize,
    pub test_loss_mean: f64,
    pub test_loss_std: f64,
    #[serde(rename = "AOFE_mean")]
    pub aofe_mean: f64,
    #[serde(rename = "AOFE_std")]
    pub aofe_std: f64,
    #[serde(rename = "AOFE_ratio_mean")]
    pub aofe_ratio_mean: f64,
    #[serde(rename = "AOFE_ratio_std")]
    pub aofe_ratio_std: f64,
    pub diverged: usize,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<ToyTrialResult>,
    /// Seed-averaged AGOP per requested size.
    pub heatmaps: Vec<(usize, AgopMatrix)>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let xs: Vec<f64> = xs.iter().copied().filter(|v| v.is_finite()).collect();
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups trials by training size (ascending); diverged trials are only counted.
pub fn aggregate_trials(trials: &[ToyTrialResult]) -> Vec<SweepRow> {
    let mut groups: BTreeMap<usize, Vec<&ToyTrialResult>> = BTreeMap::new();
    for t in trials {
        groups.entry(t.n).or_default().push(t);
    }
    groups
        .into_iter()
        .map(|(n, ts)| {
            let ok: Vec<&&ToyTrialResult> = ts.iter().filter(|t| !t.diverged).collect();
            let pick = |f: fn(&ToyTrialResult) -> f64| ok.iter().map(|t| f(t)).collect::<Vec<_>>();
            let (lm, ls) = mean_std(&pick(|t| t.test_loss));
            let (am, as_) = mean_std(&pick(|t| t.aofe));
            let (rm, rs) = mean_std(&pick(|t| t.aofe_ratio));
            SweepRow {
                data_size: n,
                test_loss_mean: lm,
                test_loss_std: ls,
                aofe_mean: am,
                aofe_std: as_,
                aofe_ratio_mean: rm,
                aofe_ratio_std: rs,
                diverged: ts.len() - ok.len(),
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush().map_err(|e| Error::io("sweep csv", e))?;
    Ok(())
}

/// Trains every `(size, seed)` pair against one fixed test set.
pub fn double_descent_sweep(
    sizes: &[usize],
    seeds: &[u64],
    cfg: &ToyTrainConfig,
    heatmap_sizes: &[usize],
) -> Result<SweepOutput> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one size and one seed".into(),
        ));
    }
    let test = generate_sparse_data(&SparseDataSpec::test(cfg.test_size, cfg.d))?;
    let mut trials = Vec::with_capacity(sizes.len() * seeds.len());
    let mut heatmaps = Vec::new();
    for &n in sizes {
        let train = generate_sparse_data(&SparseDataSpec::train(n, cfg.d))?;
        let mut mats = Vec::new();
        for &seed in seeds {
            let (_, mut result) = train_toy_on(&train, &test, seed, cfg)?;
            log::info!(
                "toy n={n} seed={seed} test_loss={:.4} aofe_ratio={:.4}",
                result.test_loss,
                result.aofe_ratio
            );
            if let Some(a) = result.agop.take() {
                if heatmap_sizes.contains(&n) {
                    mats.push(a);
                }
            }
            trials.push(result);
        }
        if !mats.is_empty() {
            heatmaps.push((n, AgopMatrix::mean_of(&mats)?));
        }
    }
    Ok(SweepOutput {
        rows: aggregate_trials(&trials),
        trials,
        heatmaps,
    })
}
