//! Experiment drivers behind the CLI verbs. Each writes into one run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nilab_core::analysis::svg::{Scatter, Series};
use nilab_core::analysis::{
    best_per_budget, grouped_trend, ingest_model_table, interval_estimate, pearson, shape_distances, FixtureSet,
    IngestedTable, ShapeDistance, TrendResult,
};
use nilab_core::estimators::ProjectionMatrix;
use nilab_core::lmshape::{enumerate_shapes_with, write_shapes_csv, EfficiencyInterval, ShapeConfig};
use nilab_core::lmtrain::{
    lm_last_input_agop, lm_nfa_alignment, load_checkpoint, load_corpus, save_checkpoint, synthetic_corpus, train_lm,
    ByteCorpus, CorpusPaths, MetricSpec, TrialRecord,
};
use nilab_core::metrics::{aofe, aofe_ratio, AgopMatrix, AgopSpace, EstimatorTag};
use nilab_core::toymodel::{
    aggregate_trials, generate_sparse_data, train_toy_on, write_sweep_csv, SparseDataSpec, SweepRow, ToyTrialResult,
};
use serde::Serialize;

use crate::config::{LmSweepConfig, RunConfig};
use crate::manifest::{write_atomic, RunDir, RunManifest};

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> nilab_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

// ---------------------------------------------------------------------------
// double descent

pub struct DoubleDescentOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub failed: usize,
}

fn agop_path(dir: &Path, n: usize, seed: u64) -> PathBuf {
    dir.join("work").join(format!("agop_n{n}_seed{seed}.bin"))
}

fn save_agop(path: &Path, g: &AgopMatrix) -> Result<()> {
    std::fs::create_dir_all(path.parent().expect("work dir"))?;
    let bytes: Vec<u8> = g.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(path, &bytes)
}

fn load_agop(path: &Path, dim: usize) -> Result<AgopMatrix> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() != dim * dim * 8 {
        bail!("{}: expected {} bytes", path.display(), dim * dim * 8);
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(AgopMatrix::from_square(
        values,
        dim,
        AgopSpace::Output,
        0,
        EstimatorTag::ClosedForm,
    )?)
}

/// Trains every (size, seed) pair not already logged, then rewrites the aggregate outputs.
pub fn run_double_descent(
    cfg: &RunConfig,
    overrides: &[String],
    out: &Path,
    resume: bool,
) -> Result<DoubleDescentOutcome> {
    let dd = &cfg.double_descent;
    if dd.sizes.is_empty() || dd.seeds.is_empty() {
        bail!("double descent needs at least one size and one seed");
    }
    let run = RunDir::open(out, RunManifest::new("double-descent", cfg, overrides), resume)?;
    let mut log = run.trial_log::<ToyTrialResult>()?;
    let done: std::collections::HashSet<(usize, u64)> = log.rows.iter().map(|r| (r.n, r.seed)).collect();
    let tc = &dd.train;
    let test = generate_sparse_data(&SparseDataSpec::test(tc.test_size, tc.d))?;
    let mut failed = 0;
    for &n in &dd.sizes {
        let pending: Vec<u64> = dd.seeds.iter().copied().filter(|s| !done.contains(&(n, *s))).collect();
        if pending.is_empty() {
            continue;
        }
        let train = generate_sparse_data(&SparseDataSpec::train(n, tc.d))?;
        for seed in pending {
            match train_toy_on(&train, &test, seed, tc) {
                Ok((_, mut result)) => {
                    log::info!(
                        "toy n={n} seed={seed} test={:.4} ratio={:.4}",
                        result.test_loss,
                        result.aofe_ratio
                    );
                    if let Some(g) = result.agop.take() {
                        if dd.heatmap_sizes.contains(&n) {
                            save_agop(&agop_path(out, n, seed), &g)?;
                        }
                    }
                    log.append(result)?;
                }
                Err(e) => {
                    log::error!("toy n={n} seed={seed} failed: {e}");
                    failed += 1;
                }
            }
        }
    }

    let wanted: Vec<&ToyTrialResult> = log
        .rows
        .iter()
        .filter(|r| dd.sizes.contains(&r.n) && dd.seeds.contains(&r.seed))
        .collect();
    let trials: Vec<ToyTrialResult> = wanted.into_iter().cloned().collect();
    let rows = aggregate_trials(&trials);
    write_atomic(&run.path("sweep.csv"), &csv_bytes(|b| write_sweep_csv(&rows, b))?)?;

    for &n in &dd.heatmap_sizes {
        let mut mats = Vec::new();
        for &seed in &dd.seeds {
            let p = agop_path(out, n, seed);
            if p.exists() {
                mats.push(load_agop(&p, tc.d)?);
            }
        }
        if mats.is_empty() {
            continue;
        }
        let mean = AgopMatrix::mean_of(&mats)?;
        let mut buf = Vec::new();
        mean.write_csv(&mut buf)?;
        write_atomic(&run.path(&format!("heatmap_n{n}.csv")), &buf)?;
    }

    let series = |label: &str, f: fn(&SweepRow) -> f64| Series {
        label: label.into(),
        points: rows.iter().map(|r| (r.data_size as f64, f(r))).collect(),
    };
    for (file, label, f) in [
        (
            "test_loss.svg",
            "test loss",
            (|r: &SweepRow| r.test_loss_mean) as fn(&SweepRow) -> f64,
        ),
        ("aofe.svg", "AOFE", |r| r.aofe_mean),
        ("aofe_ratio.svg", "AOFE-ratio", |r| r.aofe_ratio_mean),
    ] {
        let plot = Scatter {
            title: format!("{label} vs training set size"),
            x_label: "training samples".into(),
            y_label: label.into(),
            log_x: true,
            series: vec![series(label, f)],
        };
        write_atomic(&run.path(file), plot.render().as_bytes())?;
    }
    Ok(DoubleDescentOutcome {
        dir: out.to_path_buf(),
        rows,
        failed,
    })
}

// ---------------------------------------------------------------------------
// language-model sweep

pub fn lm_corpus(lm: &LmSweepConfig) -> Result<ByteCorpus> {
    let c = &lm.corpus;
    match &c.train {
        Some(train) => Ok(load_corpus(
            &CorpusPaths {
                train: train.clone(),
                valid: c.valid.clone(),
                test: c.test.clone(),
            },
            lm.context,
        )?),
        None if c.synthetic_bytes > 0 => {
            let corpus = ByteCorpus::split(synthetic_corpus(c.synthetic_bytes, c.synthetic_seed))?;
            corpus.check_context(lm.context)?;
            Ok(corpus)
        }
        None => bail!("no corpus: pass --corpus or set lm_sweep.corpus.train"),
    }
}

pub fn lm_shapes(lm: &LmSweepConfig) -> Vec<ShapeConfig> {
    lm.budgets
        .iter()
        .flat_map(|&b| enumerate_shapes_with(b, &lm.depths, lm.vocab, lm.context))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct LmSummary {
    pub trials: usize,
    pub diverged: usize,
    pub best: Vec<TrialRecord>,
    /// Present once at least two budgets have a best point.
    pub interval: Option<EfficiencyInterval>,
    pub r_test_loss_aofe_ratio: Option<f64>,
    pub r_test_loss_aofe: Option<f64>,
}

pub struct LmSweepOutcome {
    pub dir: PathBuf,
    pub records: Vec<TrialRecord>,
    pub summary: Option<LmSummary>,
    pub failed: usize,
}

pub fn run_lm_sweep(cfg: &RunConfig, overrides: &[String], out: &Path, resume: bool) -> Result<LmSweepOutcome> {
    let lm = &cfg.lm_sweep;
    let shapes = lm_shapes(lm);
    if lm.shapes_only {
        std::fs::create_dir_all(out)?;
        write_atomic(&out.join("shapes.csv"), &csv_bytes(|b| write_shapes_csv(&shapes, b))?)?;
        return Ok(LmSweepOutcome {
            dir: out.to_path_buf(),
            records: vec![],
            summary: None,
            failed: 0,
        });
    }
    let corpus = lm_corpus(lm)?;
    let mut manifest = RunManifest::new("lm-sweep", cfg, overrides);
    manifest.inputs.insert("corpus".into(), corpus.content_hash());
    let run = RunDir::open(out, manifest, resume)?;
    write_atomic(&run.path("shapes.csv"), &csv_bytes(|b| write_shapes_csv(&shapes, b))?)?;

    let spec = MetricSpec {
        projection: ProjectionMatrix::gaussian(lm.projection_dim, lm.vocab, lm.projection_seed),
        estimator: lm.estimator,
        seed: lm.metric_seed,
    };
    let mut log = run.trial_log::<TrialRecord>()?;
    let done: std::collections::HashSet<(String, u64)> = log.rows.iter().map(|r| (r.id.clone(), r.seed)).collect();
    let mut failed = 0;
    for shape in &shapes {
        let budget = lm.recipe.budget(shape.target_n, lm.context);
        for &seed in &lm.seeds {
            if done.contains(&(shape.id.clone(), seed)) {
                continue;
            }
            log::info!(
                "training {} (L={}, d={}) seed {seed}, up to {} steps",
                shape.id,
                shape.depth,
                shape.d_model,
                budget.max_steps
            );
            match train_lm(shape, &corpus, &budget, Some(&spec), seed) {
                Ok(trial) => {
                    let r = &trial.record;
                    log::info!(
                        "{} seed {seed}: test {:.4} AOFE {:.4e} ratio {:.4} after {} steps",
                        r.id,
                        r.test_loss,
                        r.aofe,
                        r.aofe_ratio,
                        r.steps
                    );
                    if !r.diverged {
                        save_checkpoint(&trial.model, &run.path("checkpoints"), &format!("{}-s{seed}", r.id))?;
                    }
                    log.append(trial.record)?;
                }
                Err(e) => {
                    log::error!("{} seed {seed} failed: {e}", shape.id);
                    failed += 1;
                }
            }
        }
    }

    let records: Vec<TrialRecord> = log.rows.clone();
    let summary = summarize_lm(&records);
    write_atomic(&run.path("best.csv"), &csv_bytes(|b| write_records(&summary.best, b))?)?;
    write_json(&run.path("summary.json"), &summary)?;
    let mut by_budget: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.diverged) {
        by_budget
            .entry(r.target_n)
            .or_default()
            .push((r.aofe_ratio, r.test_loss));
    }
    let plot = Scatter {
        title: "test loss vs AOFE-ratio".into(),
        x_label: "AOFE-ratio".into(),
        y_label: "test loss".into(),
        log_x: false,
        series: by_budget
            .into_iter()
            .map(|(b, points)| Series {
                label: nilab_core::lmshape::budget_id(b),
                points,
            })
            .collect(),
    };
    write_atomic(&run.path("loss_vs_ratio.svg"), plot.render().as_bytes())?;
    Ok(LmSweepOutcome {
        dir: out.to_path_buf(),
        records,
        summary: Some(summary),
        failed,
    })
}

fn write_records(records: &[TrialRecord], w: &mut Vec<u8>) -> nilab_core::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| nilab_core::Error::io("records csv", e))?;
    Ok(())
}

pub fn summarize_lm(records: &[TrialRecord]) -> LmSummary {
    let best = best_per_budget(records);
    let interval = if best.len() >= 2 {
        interval_estimate(&best, 0).ok()
    } else {
        None
    };
    let ok: Vec<&TrialRecord> = records
        .iter()
        .filter(|r| !r.diverged && r.test_loss.is_finite() && r.aofe_ratio.is_finite())
        .collect();
    let loss: Vec<f64> = ok.iter().map(|r| r.test_loss).collect();
    let ratio: Vec<f64> = ok.iter().map(|r| r.aofe_ratio).collect();
    let raw: Vec<f64> = ok.iter().map(|r| r.aofe).collect();
    LmSummary {
        trials: records.len(),
        diverged: records.iter().filter(|r| r.diverged).count(),
        best,
        interval,
        r_test_loss_aofe_ratio: pearson(&loss, &ratio).ok(),
        r_test_loss_aofe: pearson(&loss, &raw).ok(),
    }
}

// ---------------------------------------------------------------------------
// external comparison

#[derive(Debug, Serialize)]
pub struct ExtCompareReport {
    pub interval: EfficiencyInterval,
    pub table: IngestedTable,
    pub distances: Vec<ShapeDistance>,
    pub trends: Vec<TrendResult>,
}

pub fn ext_compare(cfg: &RunConfig, out: &Path) -> Result<ExtCompareReport> {
    let interval = cfg.ext_compare.interval()?;
    let table = match &cfg.ext_compare.table {
        Some(p) => {
            let f = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            ingest_model_table(f)?
        }
        None => {
            let set = FixtureSet::embedded()?;
            ingest_model_table(set.text(nilab_core::analysis::fixtures::LLM_SHAPES)?.as_bytes())?
        }
    };
    let report = ExtCompareReport {
        distances: shape_distances(&table.rows, &interval),
        trends: grouped_trend(&table.rows, &interval),
        table,
        interval,
    };
    std::fs::create_dir_all(out)?;
    write_json(&out.join("ext_compare.json"), &report)?;
    let mut groups: Vec<Series> = Vec::new();
    for (row, dist) in report.table.rows.iter().zip(&report.distances) {
        let pt = (dist.delta_alpha, row.mmlu_pro);
        match groups.iter_mut().find(|s| s.label == row.param_group) {
            Some(s) => s.points.push(pt),
            None => groups.push(Series {
                label: row.param_group.clone(),
                points: vec![pt],
            }),
        }
    }
    let plot = Scatter {
        title: "MMLU-Pro vs distance to interval".into(),
        x_label: "delta alpha".into(),
        y_label: "MMLU-Pro".into(),
        log_x: false,
        series: groups,
    };
    write_atomic(&out.join("ext_compare.svg"), plot.render().as_bytes())?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// alignment check

#[derive(Debug, Serialize)]
pub struct AgopCheck {
    pub checkpoint: String,
    pub alpha: f64,
    pub windows: usize,
    pub alignment: f64,
    pub input_aofe: f64,
    pub input_aofe_ratio: Option<f64>,
}

/// Alignment of a checkpoint's first-block weights with its last-position input AGOP on the test split.
pub fn agop_check(cfg: &RunConfig, checkpoint: &Path) -> Result<AgopCheck> {
    let dir = checkpoint
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    // budget ids contain dots, so only a known extension is stripped
    let name = checkpoint
        .file_name()
        .and_then(|s| s.to_str())
        .context("checkpoint path needs a file name")?;
    let stem = name
        .strip_suffix(".bin")
        .or_else(|| name.strip_suffix(".json"))
        .unwrap_or(name);
    let model = load_checkpoint(dir, stem)?;
    let mut lm = cfg.lm_sweep.clone();
    lm.context = model.config.context;
    let corpus = lm_corpus(&lm)?;
    let ac = &cfg.agop_check;
    let g = lm_last_input_agop(&model, &corpus.test, ac.windows)?;
    Ok(AgopCheck {
        checkpoint: checkpoint.display().to_string(),
        alpha: ac.alpha,
        windows: g.sample_count,
        alignment: lm_nfa_alignment(&model, &g, ac.alpha)?,
        input_aofe: aofe(&g),
        input_aofe_ratio: aofe_ratio(&g).ok(),
    })
}
