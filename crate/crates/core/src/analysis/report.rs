use serde::Serialize;

use super::budget::{best_per_budget, interval_estimate};
use super::external::{grouped_trend, ingest_model_table, shape_distances};
use super::fixtures::{self, FixtureSet};
use super::stats::pearson;
use crate::lmshape::EfficiencyInterval;
use crate::lmtrain::TrialRecord;
use crate::Result;

/// One recomputed quantity next to its published value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportEntry {
    pub metric: String,
    pub published: f64,
    pub recomputed: f64,
    pub deviation: f64,
    /// `None` marks an informational variant that is not judged.
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
}

impl ReportEntry {
    pub fn new(metric: impl Into<String>, published: f64, recomputed: f64, tolerance: Option<f64>) -> Self {
        let deviation = (recomputed - published).abs();
        ReportEntry {
            metric: metric.into(),
            published,
            recomputed,
            deviation,
            tolerance,
            pass: tolerance.map(|t| deviation <= t),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CorrelationReport {
    pub entries: Vec<ReportEntry>,
}

impl CorrelationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass != Some(false))
    }

    pub fn get(&self, metric: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.metric == metric)
    }
}

/// Budget at and above which best points define the efficiency interval.
pub const INTERVAL_MIN_BUDGET: usize = 1_000_000;

fn best_point_r(best: &[TrialRecord], min_budget: usize) -> Result<(f64, f64)> {
    let pts: Vec<&TrialRecord> = best.iter().filter(|r| r.target_n >= min_budget).collect();
    let loss: Vec<f64> = pts.iter().map(|r| r.test_loss).collect();
    let aofe: Vec<f64> = pts.iter().map(|r| r.aofe).collect();
    let ratio: Vec<f64> = pts.iter().map(|r| r.aofe_ratio).collect();
    Ok((pearson(&loss, &aofe)?, pearson(&loss, &ratio)?))
}

/// Recomputes every published correlation and derived quantity from the bundled tables.
pub fn fixture_correlations(set: &FixtureSet) -> Result<CorrelationReport> {
    let mut rep = CorrelationReport::default();
    let mut push = |e: ReportEntry| rep.entries.push(e);

    // toy double descent: raw AOFE is the judged variant
    let toy = set.toy()?;
    let loss: Vec<f64> = toy.iter().map(|r| r.test_loss_mean).collect();
    let aofe: Vec<f64> = toy.iter().map(|r| r.aofe).collect();
    let log_aofe: Vec<f64> = aofe.iter().map(|a| a.ln()).collect();
    push(ReportEntry::new(
        "toy r(test loss, AOFE)",
        0.94,
        pearson(&loss, &aofe)?,
        Some(0.05),
    ));
    push(ReportEntry::new(
        "toy r(test loss, log AOFE)",
        0.94,
        pearson(&loss, &log_aofe)?,
        None,
    ));

    for (name, label, published) in [
        (fixtures::CROSS_CNN, "cnn", -0.896),
        (fixtures::CROSS_VIT, "vit", -0.856),
        (fixtures::CROSS_RNN, "rnn", -0.718),
    ] {
        let rows = set.cross(name)?;
        let loss: Vec<f64> = rows.iter().map(|r| r.l_test).collect();
        let ratio: Vec<f64> = rows.iter().map(|r| r.aofe_ratio).collect();
        push(ReportEntry::new(
            format!("{label} r(test loss, AOFE-ratio)"),
            published,
            pearson(&loss, &ratio)?,
            Some(0.01),
        ));
    }

    let best = best_per_budget(&set.lm_records()?);
    let (r_aofe, r_ratio) = best_point_r(&best, 0)?;
    push(ReportEntry::new(
        "lm best points r(test loss, AOFE)",
        0.883,
        r_aofe,
        Some(0.01),
    ));
    push(ReportEntry::new(
        "lm best points r(test loss, AOFE-ratio)",
        -0.967,
        r_ratio,
        Some(0.01),
    ));
    let (v_aofe, v_ratio) = best_point_r(&best, INTERVAL_MIN_BUDGET)?;
    push(ReportEntry::new(
        "lm best points >=1.0M r(test loss, AOFE)",
        0.883,
        v_aofe,
        None,
    ));
    push(ReportEntry::new(
        "lm best points >=1.0M r(test loss, AOFE-ratio)",
        -0.967,
        v_ratio,
        None,
    ));
    let interval = interval_estimate(&best, INTERVAL_MIN_BUDGET)?;
    push(ReportEntry::new(
        "efficiency interval lower bound",
        0.023,
        interval.lo,
        Some(5e-4),
    ));
    push(ReportEntry::new(
        "efficiency interval upper bound",
        0.047,
        interval.hi,
        Some(5e-4),
    ));

    // external models, judged against the published interval
    let published = EfficiencyInterval::default();
    let table = ingest_model_table(set.text(fixtures::LLM_SHAPES)?.as_bytes())?;
    push(ReportEntry::new(
        "llm rows kept",
        18.0,
        table.rows.len() as f64,
        Some(0.0),
    ));
    let listed = listed_distances(set)?;
    let computed = shape_distances(&table.rows, &published);
    let mut dmax: f64 = 0.0;
    let mut gmax: f64 = 0.0;
    for (c, (d, g)) in computed.iter().zip(&listed) {
        dmax = dmax.max((c.delta_alpha - d).abs());
        gmax = gmax.max((c.layer_gap - g).abs());
    }
    push(ReportEntry::new(
        "llm max |delta_alpha - listed|",
        0.0,
        dmax,
        Some(1e-4),
    ));
    push(ReportEntry::new("llm max |layer_gap - listed|", 0.0, gmax, Some(1e-3)));
    for (group, published_r) in [("0.5-1B", -0.80), ("1-2.5B", -0.84), ("3-4.5B", -0.42), ("7-9B", -0.18)] {
        let r = grouped_trend(&table.rows, &published)
            .into_iter()
            .find(|t| t.group == group)
            .and_then(|t| t.r)
            .unwrap_or(f64::NAN);
        push(ReportEntry::new(
            format!("llm {group} r(delta_alpha, MMLU-Pro)"),
            published_r,
            r,
            Some(0.03),
        ));
    }
    Ok(rep)
}

/// Interval distance and layer gap as printed in the model table, in row order.
fn listed_distances(set: &FixtureSet) -> Result<Vec<(f64, f64)>> {
    #[derive(serde::Deserialize)]
    struct Listed {
        distance_to_interval: f64,
        vertical_layer_gap: f64,
    }
    let mut rdr = csv::Reader::from_reader(set.text(fixtures::LLM_SHAPES)?.as_bytes());
    let mut out = Vec::new();
    for row in rdr.deserialize::<Listed>() {
        let row = row?;
        out.push((row.distance_to_interval, row.vertical_layer_gap));
    }
    Ok(out)
}
