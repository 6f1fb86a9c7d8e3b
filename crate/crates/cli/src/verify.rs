//! The verification suite: nine numbered checks with pinned thresholds.
//!
//! Criteria 1-6 take seconds. 7-9 train models for hours and only run when
//! `verify.heavy` is set.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nilab_core::analysis::fixtures::LM_RANGES;
use nilab_core::analysis::{fixture_correlations, pearson, FixtureSet};
use nilab_core::estimators::{exact_gram_output, jvp_agop, Dataset, EstimatorConfig, ProjectionMatrix};
use nilab_core::lmshape::{enumerate_shapes, solve_shape, ShapeOutcome};
use nilab_core::lmtrain::{LastLogits, TinyConfig, TinyTransformer};
use nilab_core::metrics::{aofe, aofe_ratio, diagonal_energy, total_energy, AgopMatrix, AgopSpace, EstimatorTag};
use nilab_core::numkernel::{directional_derivative, input_gradient, rng, DiffModel, LinearMap, Tensor};
use nilab_core::toymodel::{generate_sparse_data, tied_autoencoder_agop, SparseDataSpec, TiedAutoencoder};
use rand::Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::experiments::{run_double_descent, run_lm_sweep};
use crate::manifest::{RunManifest, CODE_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub status: Status,
    /// What was measured against which threshold.
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {} [{}] {}: {} ({:.1}s)",
            self.id, self.status, self.name, self.detail, self.seconds
        )
    }
}

pub const NAMES: [&str; 9] = [
    "metric invariants",
    "gradient correctness",
    "estimator oracle equivalence",
    "shape-table bit-exactness",
    "external comparison",
    "fixture correlations",
    "double-descent desk run",
    "LM smoke sweep",
    "determinism",
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Runs one criterion. `work` holds the run directories of the heavy checks.
pub fn run_criterion(id: u8, cfg: &RunConfig, work: &Path) -> CriterionResult {
    let name = NAMES[(id - 1) as usize];
    let start = Instant::now();
    if id >= 7 && !cfg.verify.heavy {
        return CriterionResult {
            id,
            name,
            status: Status::Skip,
            detail: "training check; enable verify.heavy to run".into(),
            seconds: 0.0,
        };
    }
    let res = match id {
        1 => metric_invariants(cfg),
        2 => gradient_checks(cfg),
        3 => estimator_oracles(cfg),
        4 => shape_tables(cfg),
        5 => external_comparison(cfg),
        6 => fixture_r(cfg),
        7 => double_descent(cfg, work),
        8 => lm_smoke(cfg, work),
        9 => determinism(cfg, work),
        _ => Err(anyhow::anyhow!("no criterion {id}")),
    };
    let (status, detail) = match res {
        Ok(o) => (if o.pass { Status::Pass } else { Status::Fail }, o.detail),
        Err(e) => (Status::Fail, format!("error: {e:#}")),
    };
    CriterionResult {
        id,
        name,
        status,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_all(cfg: &RunConfig, work: &Path, only: &[u8]) -> Vec<CriterionResult> {
    (1..=9u8)
        .filter(|id| only.is_empty() || only.contains(id))
        .map(|id| {
            let r = run_criterion(id, cfg, work);
            log::info!("{r}");
            r
        })
        .collect()
}

// ---------------------------------------------------------------------------
// 1: metrics

fn random_psd(dim: usize, rank: usize, seed: u64) -> Result<AgopMatrix> {
    let mut r = rng::stream(seed, 0);
    let b = rng::normal_vec(&mut r, rank * dim, 1.0);
    let mut g = vec![0.0; dim * dim];
    for row in b.chunks(dim) {
        for i in 0..dim {
            for j in 0..dim {
                g[i * dim + j] += row[i] * row[j];
            }
        }
    }
    Ok(AgopMatrix::from_square(
        g,
        dim,
        AgopSpace::Input,
        rank,
        EstimatorTag::Exact,
    )?)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn metric_invariants(cfg: &RunConfig) -> Result<Outcome> {
    let tol = cfg.verify.tolerances.metric;
    let mut worst: f64 = 0.0;
    let mut range_ok = true;
    for case in 0..200u64 {
        let mut r = rng::stream(case, 1);
        let dim = r.gen_range(2..=24);
        let rank = r.gen_range(1..=dim + 2);
        let g = random_psd(dim, rank, case)?;
        let c = r.gen_range(0.01..100.0);
        let ratio = aofe_ratio(&g)?;
        let scaled = g.scaled(c);
        worst = worst.max(rel(aofe(&scaled), c * c * aofe(&g)));
        worst = worst.max(rel(aofe_ratio(&scaled)?, ratio));
        let mut perm: Vec<usize> = (0..dim).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let p = g.permuted(&perm)?;
        worst = worst.max(rel(aofe(&p), aofe(&g)));
        worst = worst.max(rel(aofe_ratio(&p)?, ratio));
        worst = worst.max(rel(diagonal_energy(&g) + aofe(&g), total_energy(&g)));
        range_ok &= (0.0..=1.0).contains(&ratio);
    }
    // diagonal matrices carry no interaction; rank one with equal entries carries the most
    let diag = AgopMatrix::from_square(vec![2.0, 0.0, 0.0, 3.0], 2, AgopSpace::Input, 1, EstimatorTag::Exact)?;
    range_ok &= aofe(&diag) == 0.0 && aofe_ratio(&diag)? == 0.0;
    let ones = AgopMatrix::from_square(vec![1.0; 16], 4, AgopSpace::Input, 1, EstimatorTag::Exact)?;
    worst = worst.max(rel(aofe_ratio(&ones)?, 0.75));
    range_ok &= aofe_ratio(&AgopMatrix::zeros(3, AgopSpace::Input)).is_err();
    Ok(outcome(
        worst <= tol && range_ok,
        format!(
            "max relative deviation {worst:.2e} (tol {tol:.0e}), range checks {}",
            if range_ok { "ok" } else { "violated" }
        ),
    ))
}

// ---------------------------------------------------------------------------
// 2: gradients

const FD_STEP: f64 = 1e-5;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn fd_gradient(model: &dyn DiffModel, x: &[f64], out: usize) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + FD_STEP;
            let hi = model.eval(&xp)[out];
            xp[i] = x[i] - FD_STEP;
            let lo = model.eval(&xp)[out];
            xp[i] = x[i];
            (hi - lo) / (2.0 * FD_STEP)
        })
        .collect()
}

fn fd_directional(model: &dyn DiffModel, x: &[f64], v: &[f64]) -> Vec<f64> {
    let hi: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + FD_STEP * b).collect();
    let lo: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - FD_STEP * b).collect();
    model
        .eval(&hi)
        .iter()
        .zip(model.eval(&lo))
        .map(|(h, l)| (h - l) / (2.0 * FD_STEP))
        .collect()
}

/// Worst (gradient, directional) relative errors over `points` random inputs.
fn check_model(
    model: &dyn DiffModel,
    points: usize,
    seed: u64,
    mut draw: impl FnMut(&mut rng::Rng) -> Option<(Vec<f64>, usize)>,
) -> Result<(f64, f64)> {
    let mut r = rng::stream(seed, 2);
    let shape = model.input_shape();
    let (mut g_worst, mut d_worst): (f64, f64) = (0.0, 0.0);
    let mut done = 0;
    let mut tries = 0;
    while done < points {
        tries += 1;
        if tries > 100 * points {
            bail!("could not draw {points} usable points");
        }
        let Some((x, out)) = draw(&mut r) else { continue };
        let xt = Tensor::new(shape.clone(), x.clone())?;
        let g = input_gradient(&model, &xt, out)?;
        g_worst = g_worst.max(rel_err(g.data(), &fd_gradient(model, &x, out)));
        let v = rng::normal_vec(&mut r, x.len(), 1.0);
        let vt = Tensor::new(shape.clone(), v.clone())?;
        let jv = directional_derivative(&model, &xt, &vt)?;
        d_worst = d_worst.max(rel_err(jv.data(), &fd_directional(model, &x, &v)));
        done += 1;
    }
    Ok((g_worst, d_worst))
}

/// Toy autoencoder with a random bias. Points whose pre-activations sit near a
/// ReLU kink are redrawn, and the probed output is an active unit.
fn toy_gradients(points: usize) -> Result<(f64, f64)> {
    let (m, d) = (2, 20);
    let mut r = rng::stream(7, 3);
    let w = Tensor::matrix(m, d, rng::normal_vec(&mut r, m * d, 0.5))?;
    let b = rng::normal_vec(&mut r, d, 0.3);
    let model = TiedAutoencoder::new(w, b)?;
    let gram = model.gram();
    let pre = |x: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|i| model.b[i] + (0..d).map(|j| gram[i * d + j] * x[j]).sum::<f64>())
            .collect()
    };
    check_model(&model, points, 11, |r| {
        let x = rng::normal_vec(r, d, 1.0);
        let z = pre(&x);
        if z.iter().any(|v| v.abs() < 1e-3) {
            return None;
        }
        let active: Vec<usize> = (0..d).filter(|&i| z[i] > 0.0).collect();
        if active.is_empty() {
            return None;
        }
        Some((x, active[r.gen_range(0..active.len())]))
    })
}

/// Two-block width-16 transformer with every parameter jittered away from its init.
fn lm_gradients(points: usize) -> Result<(f64, f64)> {
    let cfg = TinyConfig {
        vocab: 24,
        context: 6,
        d_model: 16,
        n_layers: 2,
        n_heads: 4,
        d_ff: 64,
    };
    let mut model = TinyTransformer::new(cfg, 5)?;
    let mut r = rng::stream(5, 4);
    for p in model.params_mut() {
        *p += 0.2 * rng::normal_vec(&mut r, 1, 1.0)[0];
    }
    let seq = cfg.context;
    let f = LastLogits { model: &model, seq };
    check_model(&f, points, 13, |r| {
        let tokens: Vec<u8> = (0..seq).map(|_| r.gen_range(0..cfg.vocab as u8)).collect();
        let mut x = model.embed(&tokens, 1, seq);
        for v in x.iter_mut() {
            *v += 0.1 * rng::normal_vec(r, 1, 1.0)[0];
        }
        Some((x, r.gen_range(0..cfg.vocab)))
    })
}

fn gradient_checks(cfg: &RunConfig) -> Result<Outcome> {
    let tol = cfg.verify.tolerances.gradient_rel;
    let points = cfg.verify.gradient_points;
    let (tg, td) = toy_gradients(points)?;
    let (lg, ld) = lm_gradients(points)?;
    let worst = tg.max(td).max(lg).max(ld);
    Ok(outcome(
        worst <= tol,
        format!(
            "{points} points each; toy grad {tg:.1e} dir {td:.1e}, transformer grad {lg:.1e} dir {ld:.1e} (tol {tol:.0e})"
        ),
    ))
}

// ---------------------------------------------------------------------------
// 3: estimators

fn closed_form_gap() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (case, (m, d)) in [(1, 4), (2, 8), (2, 12), (3, 16), (2, 20), (5, 20)]
        .into_iter()
        .enumerate()
    {
        let mut r = rng::stream(case as u64, 5);
        let w = Tensor::matrix(m, d, rng::normal_vec(&mut r, m * d, 0.6))?;
        let b = rng::normal_vec(&mut r, d, 0.2);
        let model = TiedAutoencoder::new(w, b)?;
        let mut spec = SparseDataSpec::train(300, d);
        spec.seed = case as u64;
        let data = generate_sparse_data(&spec)?;
        let closed = tied_autoencoder_agop(&model, &data, 64)?;
        let exact = exact_gram_output(&model, &data)?;
        worst = worst.max(rel_err(closed.values(), exact.values()));
    }
    Ok(worst)
}

fn fixed_maps() -> Result<Vec<(Tensor, Dataset)>> {
    let a = Tensor::from_rows(&[
        vec![1.0, 2.0, 0.0, -1.0],
        vec![0.5, -0.3, 1.2, 0.0],
        vec![0.0, 1.0, 1.0, 2.0],
    ])?;
    let mut r = rng::stream(17, 6);
    let b = Tensor::matrix(3, 6, rng::normal_vec(&mut r, 18, 1.0))?;
    let mut out = Vec::new();
    for (i, m) in [a, b].into_iter().enumerate() {
        let d = m.cols();
        let mut r = rng::stream(i as u64, 99);
        let data = Dataset::new((0..8).map(|_| rng::normal_vec(&mut r, d, 1.0)).collect(), i as u64)?;
        out.push((m, data));
    }
    Ok(out)
}

fn estimator_oracles(cfg: &RunConfig) -> Result<Outcome> {
    let t = &cfg.verify.tolerances;
    let closed = closed_form_gap()?;
    let mut pass = closed <= t.closed_form;
    let mut parts = vec![format!("closed form vs exact {closed:.1e} (tol {:.0e})", t.closed_form)];
    for (k, (a, data)) in fixed_maps()?.into_iter().enumerate() {
        let map = LinearMap::new(a)?;
        let exact = exact_gram_output(&map, &data)?;
        for n in [1_000usize, 10_000] {
            let est_cfg = EstimatorConfig {
                n_batches: 4,
                batch_size: 5,
                n_probes: n / 20,
                ..Default::default()
            };
            let est = jvp_agop(&map, &data, &ProjectionMatrix::identity(3), &est_cfg, 3)?;
            let err = rel_err(est.values(), exact.values());
            let bound = t.jvp_factor * (2.0 / n as f64).sqrt();
            pass &= err <= bound;
            parts.push(format!("map {k} n={n}: {err:.4} (bound {bound:.4})"));
        }
    }
    Ok(outcome(pass, parts.join("; ")))
}

// ---------------------------------------------------------------------------
// 4-6: bundled tables

fn fixtures(cfg: &RunConfig) -> Result<FixtureSet> {
    Ok(match &cfg.verify.fixtures {
        Some(dir) => FixtureSet::from_dir(dir)?,
        None => FixtureSet::embedded()?,
    })
}

/// Published row that no width reproduces under the parameter count fitting every
/// other row (its head count also breaks the fixed head width). Its cells are
/// compared and reported but not judged.
const ANOMALOUS_ROW: &str = "10M-12";

fn shape_tables(cfg: &RunConfig) -> Result<Outcome> {
    let set = fixtures(cfg)?;
    let rows = set.lm_shapes()?;
    let mut mismatches = Vec::new();
    let mut anomalous = Vec::new();
    let mut cells = 0;
    for row in &rows {
        let s = match solve_shape(row.target_n, row.depth) {
            ShapeOutcome::Shape(s) => s,
            ShapeOutcome::Skip { reason, .. } => {
                mismatches.push(format!("{}: skipped ({reason})", row.id));
                continue;
            }
        };
        let judged = row.id != ANOMALOUS_ROW;
        for (field, want, got) in [
            ("id", row.id.clone(), s.id.clone()),
            ("d_model", row.d_model.to_string(), s.d_model.to_string()),
            ("n_heads", row.n_heads.to_string(), s.n_heads.to_string()),
            ("d_ff", row.d_ff.to_string(), s.d_ff.to_string()),
            ("active_n", row.active_n.to_string(), s.active_n.to_string()),
            (
                "depth_width_ratio",
                row.depth_width_ratio.clone(),
                format!("{:.4}", s.depth_width_ratio),
            ),
        ] {
            let diff = (want != got).then(|| format!("{} {field}: table {want}, solver {got}", row.id));
            if judged {
                cells += 1;
                mismatches.extend(diff);
            } else {
                anomalous.extend(diff);
            }
        }
    }
    // every budget enumerates exactly the listed shapes, in order
    let mut budgets: Vec<usize> = rows.iter().map(|r| r.target_n).collect();
    budgets.dedup();
    for b in &budgets {
        let listed: Vec<&str> = rows
            .iter()
            .filter(|r| r.target_n == *b)
            .map(|r| r.id.as_str())
            .collect();
        let depths: Vec<usize> = rows.iter().filter(|r| r.target_n == *b).map(|r| r.depth).collect();
        let solved: Vec<String> = enumerate_shapes(*b, &depths).into_iter().map(|s| s.id).collect();
        if listed != solved {
            mismatches.push(format!("budget {b}: listed {listed:?}, enumerated {solved:?}"));
        }
    }
    let pass = mismatches.is_empty() && !rows.is_empty();
    let mut detail = format!(
        "{} rows over {} budgets from {} tables, {cells} cells compared, {} mismatches; \
         {ANOMALOUS_ROW} not judged ({} cells differ)",
        rows.len(),
        budgets.len(),
        LM_RANGES.len(),
        mismatches.len(),
        anomalous.len()
    );
    if !pass {
        detail.push_str(&format!(
            ": {}",
            mismatches.iter().take(5).cloned().collect::<Vec<_>>().join("; ")
        ));
    }
    Ok(outcome(pass, detail))
}

fn judged(entries: &[&nilab_core::analysis::ReportEntry], tol: impl Fn(&str) -> f64) -> (bool, String) {
    let mut pass = true;
    let parts: Vec<String> = entries
        .iter()
        .map(|e| {
            let t = tol(&e.metric);
            let ok = e.recomputed.is_finite() && e.deviation <= t;
            pass &= ok;
            format!(
                "{} {:.4} vs {} (dev {:.1e}, tol {t})",
                e.metric, e.recomputed, e.published, e.deviation
            )
        })
        .collect();
    (pass, parts.join("; "))
}

fn external_comparison(cfg: &RunConfig) -> Result<Outcome> {
    let t = &cfg.verify.tolerances;
    let report = fixture_correlations(&fixtures(cfg)?)?;
    let entries: Vec<_> = report.entries.iter().filter(|e| e.metric.starts_with("llm ")).collect();
    if entries.len() < 7 {
        bail!("report is missing external-model entries");
    }
    let (pass, detail) = judged(&entries, |m| {
        if m.contains("delta_alpha - listed") {
            t.delta_alpha
        } else if m.contains("layer_gap") {
            t.layer_gap
        } else if m.contains("rows kept") {
            0.0
        } else {
            t.group_r
        }
    });
    Ok(outcome(pass, detail))
}

fn fixture_r(cfg: &RunConfig) -> Result<Outcome> {
    let t = &cfg.verify.tolerances;
    let report = fixture_correlations(&fixtures(cfg)?)?;
    let wanted = [
        "cnn r(test loss, AOFE-ratio)",
        "vit r(test loss, AOFE-ratio)",
        "rnn r(test loss, AOFE-ratio)",
        "lm best points r(test loss, AOFE)",
        "lm best points r(test loss, AOFE-ratio)",
        "toy r(test loss, AOFE)",
    ];
    let entries = wanted
        .iter()
        .map(|m| report.get(m).with_context(|| format!("report has no {m}")))
        .collect::<Result<Vec<_>>>()?;
    let (pass, detail) = judged(&entries, |m| if m.starts_with("toy") { t.toy_r } else { t.fixture_r });
    Ok(outcome(pass, detail))
}

// ---------------------------------------------------------------------------
// 7-9: training runs

fn fresh(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    Ok(())
}

fn dd_dir(work: &Path, tag: &str) -> PathBuf {
    work.join(format!("double-descent-{tag}"))
}

fn lm_dir(work: &Path, tag: &str) -> PathBuf {
    work.join(format!("lm-sweep-{tag}"))
}

fn double_descent(cfg: &RunConfig, work: &Path) -> Result<Outcome> {
    let t = &cfg.verify.tolerances;
    let dir = dd_dir(work, "a");
    fresh(&dir)?;
    let out = run_double_descent(cfg, &[], &dir, false)?;
    if out.failed > 0 {
        bail!("{} trials failed", out.failed);
    }
    let mean = |n: usize| {
        out.rows
            .iter()
            .find(|r| r.data_size == n)
            .map(|r| (r.test_loss_mean, r.aofe_ratio_mean))
            .with_context(|| format!("no size {n} in the sweep"))
    };
    let (peak, _) = mean(500)?;
    let (small, _) = mean(30)?;
    let (large, r_large) = mean(10278)?;
    let (_, r_mid) = mean(2714)?;
    let bump = peak >= t.bump_factor * small && peak >= t.bump_factor * large;
    let ratios = r_mid >= t.ratio_floor && r_large >= t.ratio_floor;
    let loss: Vec<f64> = out.rows.iter().map(|r| r.test_loss_mean).collect();
    let aofe: Vec<f64> = out.rows.iter().map(|r| r.aofe_mean).collect();
    let r = pearson(&loss, &aofe)?;
    let corr = r >= t.dd_pearson;
    Ok(outcome(
        bump && ratios && corr,
        format!(
            "(a) loss n=500 {peak:.4} vs n=30 {small:.4}, n=10278 {large:.4} (need x{}) {}; \
             (b) ratio n=2714 {r_mid:.4}, n=10278 {r_large:.4} (floor {}) {}; \
             (c) r(test loss, AOFE) {r:.4} (min {}) {}",
            t.bump_factor,
            ok(bump),
            t.ratio_floor,
            ok(ratios),
            t.dd_pearson,
            ok(corr)
        ),
    ))
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

fn lm_smoke(cfg: &RunConfig, work: &Path) -> Result<Outcome> {
    let t = &cfg.verify.tolerances;
    let dir = lm_dir(work, "a");
    fresh(&dir)?;
    let out = run_lm_sweep(cfg, &[], &dir, false)?;
    if out.failed > 0 || out.records.is_empty() {
        bail!("{} trials failed out of {}", out.failed, out.records.len() + out.failed);
    }
    let mut parts = Vec::new();
    let mut loss_ok = true;
    let mut ratio_ok = true;
    for r in &out.records {
        loss_ok &= !r.diverged && r.train_loss <= t.lm_loss_factor * r.initial_loss;
        ratio_ok &= r.aofe_ratio > 0.0 && r.aofe_ratio < 1.0;
        parts.push(format!(
            "{} train {:.3}/{:.3} ratio {:.4} test {:.4}",
            r.id, r.train_loss, r.initial_loss, r.aofe_ratio, r.test_loss
        ));
    }
    let loss: Vec<f64> = out.records.iter().map(|r| r.test_loss).collect();
    let ratio: Vec<f64> = out.records.iter().map(|r| r.aofe_ratio).collect();
    let r = pearson(&loss, &ratio)?;
    let sign = r < 0.0;
    Ok(outcome(
        loss_ok && ratio_ok && sign,
        format!(
            "{}; train <= x{} initial {}; ratio in (0,1) {}; r(test loss, AOFE-ratio) {r:.4} < 0 {}",
            parts.join(", "),
            t.lm_loss_factor,
            ok(loss_ok),
            ok(ratio_ok),
            ok(sign)
        ),
    ))
}

/// Every CSV directly inside `dir`, sorted by name.
fn csv_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            out.push((name, std::fs::read(&p)?));
        }
    }
    out.sort();
    Ok(out)
}

fn compare_runs(a: &Path, b: &Path) -> Result<(usize, Vec<String>)> {
    let (fa, fb) = (csv_files(a)?, csv_files(b)?);
    let mut diffs = Vec::new();
    let names_a: Vec<&String> = fa.iter().map(|f| &f.0).collect();
    let names_b: Vec<&String> = fb.iter().map(|f| &f.0).collect();
    if names_a != names_b {
        diffs.push(format!("file sets differ: {names_a:?} vs {names_b:?}"));
    }
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        if x != y {
            diffs.push(name.clone());
        }
    }
    Ok((fa.len(), diffs))
}

/// Reruns both training checks into fresh directories; reuses the first runs when present.
fn determinism(cfg: &RunConfig, work: &Path) -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut pass = true;
    for (label, a, b) in [
        ("double descent", dd_dir(work, "a"), dd_dir(work, "b")),
        ("lm sweep", lm_dir(work, "a"), lm_dir(work, "b")),
    ] {
        let complete = a.join("trials.csv").exists()
            && RunManifest::read(&a).is_ok_and(|m| m.config == *cfg && m.code_version == CODE_VERSION);
        for dir in if complete { vec![&b] } else { vec![&a, &b] } {
            fresh(dir)?;
            if label == "double descent" {
                run_double_descent(cfg, &[], dir, false)?;
            } else {
                run_lm_sweep(cfg, &[], dir, false)?;
            }
        }
        let (n, diffs) = compare_runs(&a, &b)?;
        pass &= diffs.is_empty() && n > 0;
        parts.push(if diffs.is_empty() {
            format!("{label}: {n} CSV files identical")
        } else {
            format!("{label}: differing {}", diffs.join(", "))
        });
    }
    Ok(outcome(pass, parts.join("; ")))
}
