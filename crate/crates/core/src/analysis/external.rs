use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::stats::{linear_fit, pearson};
use crate::lmshape::{delta_alpha, layer_gap, EfficiencyInterval};
use crate::{Error, Result};

/// One released dense model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalModelRow {
    pub model: String,
    pub family: String,
    pub params_b: f64,
    pub d_model: usize,
    pub layers: usize,
    pub mmlu_pro: f64,
    pub param_group: String,
}

impl ExternalModelRow {
    pub fn alpha(&self) -> f64 {
        self.layers as f64 / self.d_model as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IngestedTable {
    pub rows: Vec<ExternalModelRow>,
    pub rejected: Vec<RejectedRow>,
    pub duplicates: Vec<RejectedRow>,
}

const REQUIRED: [&str; 7] = [
    "model",
    "family",
    "params_b",
    "d_model",
    "layers",
    "mmlu_pro",
    "param_group",
];

/// Parses a model table. Malformed rows and mixture-of-experts rows are rejected with their line
/// numbers; a repeated (family, d_model, layers) shape keeps its first occurrence.
/// Columns beyond the required ones are ignored, except an optional boolean `moe`.
pub fn ingest_model_table<R: Read>(reader: R) -> Result<IngestedTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = col(name).ok_or_else(|| Error::Table {
            line: 1,
            reason: format!("missing column `{name}`"),
        })?;
    }
    let moe_col = col("moe");

    let mut out = IngestedTable::default();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.rejected.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize| rec.get(idx[i]).unwrap_or("");
        let parsed = (|| -> std::result::Result<ExternalModelRow, String> {
            for (i, name) in REQUIRED.iter().enumerate() {
                if cell(i).is_empty() {
                    return Err(format!("empty `{name}`"));
                }
            }
            let num = |i: usize| {
                cell(i)
                    .parse::<f64>()
                    .map_err(|_| format!("bad `{}`: {:?}", REQUIRED[i], cell(i)))
            };
            let count = |i: usize| match cell(i).parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(format!("bad `{}`: {:?}", REQUIRED[i], cell(i))),
            };
            Ok(ExternalModelRow {
                model: cell(0).to_string(),
                family: cell(1).to_string(),
                params_b: num(2)?,
                d_model: count(3)?,
                layers: count(4)?,
                mmlu_pro: num(5)?,
                param_group: cell(6).to_string(),
            })
        })();
        let row = match parsed {
            Ok(r) => r,
            Err(reason) => {
                out.rejected.push(RejectedRow { line, reason });
                continue;
            }
        };
        if let Some(c) = moe_col {
            let flag = rec.get(c).unwrap_or("").to_ascii_lowercase();
            if matches!(flag.as_str(), "1" | "true" | "yes" | "moe") {
                out.rejected.push(RejectedRow {
                    line,
                    reason: format!("{}: mixture-of-experts model", row.model),
                });
                continue;
            }
        }
        if !seen.insert((row.family.clone(), row.d_model, row.layers)) {
            log::info!(
                "line {line}: duplicate shape {} ({}, {}) dropped",
                row.model,
                row.d_model,
                row.layers
            );
            out.duplicates.push(RejectedRow {
                line,
                reason: format!(
                    "{} repeats ({}, {}) in family {}",
                    row.model, row.d_model, row.layers, row.family
                ),
            });
            continue;
        }
        out.rows.push(row);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendResult {
    pub group: String,
    pub n: usize,
    /// `None` when the group has fewer than two rows or no spread.
    pub r: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

/// Per parameter group, correlation and least-squares line of interval distance against score.
/// Groups come out in order of first appearance.
pub fn grouped_trend(rows: &[ExternalModelRow], interval: &EfficiencyInterval) -> Vec<TrendResult> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let g = groups.entry(&row.param_group).or_insert_with(|| {
            order.push(row.param_group.clone());
            (vec![], vec![])
        });
        g.0.push(delta_alpha(row.layers, row.d_model, interval));
        g.1.push(row.mmlu_pro);
    }
    order
        .into_iter()
        .map(|group| {
            let (xs, ys) = &groups[group.as_str()];
            let r = pearson(xs, ys).ok();
            let fit = linear_fit(xs, ys).ok();
            TrendResult {
                n: xs.len(),
                r,
                slope: fit.map(|f| f.0),
                intercept: fit.map(|f| f.1),
                group,
            }
        })
        .collect()
}

/// Depth-width ratio, interval distance and layer gap of one row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapeDistance {
    pub model: String,
    pub param_group: String,
    pub alpha: f64,
    pub delta_alpha: f64,
    pub layer_gap: f64,
}

pub fn shape_distances(rows: &[ExternalModelRow], interval: &EfficiencyInterval) -> Vec<ShapeDistance> {
    rows.iter()
        .map(|r| ShapeDistance {
            model: r.model.clone(),
            param_group: r.param_group.clone(),
            alpha: r.alpha(),
            delta_alpha: delta_alpha(r.layers, r.d_model, interval),
            layer_gap: layer_gap(r.layers, r.d_model, interval),
        })
        .collect()
}
