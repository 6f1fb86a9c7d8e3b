use std::path::Path;

use nilab_cli::config::{Profile, RunConfig};
use nilab_cli::experiments::{ext_compare, run_double_descent, run_lm_sweep, summarize_lm};
use nilab_cli::manifest::RunManifest;

fn tiny_toy() -> RunConfig {
    let mut cfg = RunConfig::for_profile(Profile::Desk);
    let dd = &mut cfg.double_descent;
    dd.sizes = vec![5, 20];
    dd.seeds = vec![0, 1];
    dd.heatmap_sizes = vec![20];
    dd.train.d = 12;
    dd.train.steps = 30;
    dd.train.test_size = 50;
    cfg
}

fn tiny_lm() -> RunConfig {
    let mut cfg = RunConfig::for_profile(Profile::Desk);
    let lm = &mut cfg.lm_sweep;
    lm.budgets = vec![6000];
    lm.depths = vec![1, 2];
    lm.context = 8;
    lm.corpus.synthetic_bytes = 30_000;
    lm.recipe.bytes_per_param = 1;
    lm.recipe.min_steps = 12;
    lm.recipe.batch = 4;
    lm.recipe.eval_every = 6;
    lm.recipe.warmup = 3;
    lm.recipe.eval_windows_cap = 16;
    lm.estimator.n_batches = 2;
    lm.estimator.batch_size = 3;
    lm.estimator.n_probes = 4;
    lm.projection_dim = 8;
    cfg
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn double_descent_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_toy();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = run_double_descent(&cfg, &[], &a, false).unwrap();
    run_double_descent(&cfg, &[], &b, false).unwrap();
    assert_eq!(out.rows.len(), 2);
    assert_eq!(out.failed, 0);
    for f in ["trials.csv", "sweep.csv", "heatmap_n20.csv", "test_loss.svg"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    let m = RunManifest::read(&a).unwrap();
    assert_eq!(m.config, cfg);
    assert_eq!(m.experiment, "double-descent");
}

#[test]
fn existing_runs_need_resume_and_a_matching_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = tiny_toy();
    run_double_descent(&cfg, &[], &dir, false).unwrap();
    assert!(run_double_descent(&cfg, &[], &dir, false).is_err());
    let mut other = cfg.clone();
    other.double_descent.train.lr = 1e-2;
    assert!(run_double_descent(&other, &[], &dir, true).is_err());
}

#[test]
fn resume_skips_logged_trials_and_drops_a_torn_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_toy();
    let full = tmp.path().join("full");
    run_double_descent(&cfg, &[], &full, false).unwrap();
    let reference = read(&full, "trials.csv");

    // an interrupted run: two complete trials and half of a third
    let part = tmp.path().join("part");
    run_double_descent(&cfg, &[], &part, false).unwrap();
    let text = String::from_utf8(reference.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut torn = lines[..3].join("\n");
    torn.push('\n');
    torn.push_str(&lines[3][..lines[3].len() / 2]);
    std::fs::write(part.join("trials.csv"), torn).unwrap();

    let out = run_double_descent(&cfg, &[], &part, true).unwrap();
    assert_eq!(out.failed, 0);
    let resumed = String::from_utf8(read(&part, "trials.csv")).unwrap();
    let mut got: Vec<&str> = resumed.lines().skip(1).collect();
    let mut want: Vec<&str> = lines[1..].to_vec();
    got.sort();
    want.sort();
    assert_eq!(got, want);
    assert_eq!(read(&part, "sweep.csv"), read(&full, "sweep.csv"));
}

#[test]
fn lm_sweep_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_lm();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = run_lm_sweep(&cfg, &[], &a, false).unwrap();
    run_lm_sweep(&cfg, &[], &b, false).unwrap();
    assert_eq!(out.failed, 0);
    assert_eq!(out.records.len(), 2);
    for r in &out.records {
        assert!(r.initial_loss.is_finite() && r.test_loss.is_finite());
        assert!(r.aofe_ratio > 0.0 && r.aofe_ratio < 1.0);
    }
    for f in ["trials.csv", "shapes.csv", "best.csv", "summary.json"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    let m = RunManifest::read(&a).unwrap();
    assert!(m.inputs.contains_key("corpus"));
    assert!(a.join("checkpoints").read_dir().unwrap().count() > 0);
    let s = summarize_lm(&out.records);
    assert_eq!(s.best.len(), 1);
    assert!(s.interval.is_none());
}

#[test]
fn shapes_only_writes_just_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::for_profile(Profile::Full);
    cfg.lm_sweep.shapes_only = true;
    cfg.lm_sweep.budgets = vec![300_000];
    let out = run_lm_sweep(&cfg, &[], tmp.path(), false).unwrap();
    assert!(out.records.is_empty());
    let text = std::fs::read_to_string(tmp.path().join("shapes.csv")).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert!(text.contains("0.3M-4,300000,4,68,17,272,275400,0.0588"));
}

#[test]
fn ext_compare_uses_the_bundled_table() {
    let tmp = tempfile::tempdir().unwrap();
    let report = ext_compare(&RunConfig::for_profile(Profile::Desk), tmp.path()).unwrap();
    assert_eq!(report.table.rows.len(), 18);
    assert_eq!(report.trends.len(), 4);
    assert!(tmp.path().join("ext_compare.json").exists());
    assert!(tmp.path().join("ext_compare.svg").exists());
}

#[test]
fn agop_check_reads_a_sweep_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_lm();
    cfg.lm_sweep.depths = vec![1];
    cfg.agop_check.windows = 4;
    let dir = tmp.path().join("lm");
    let out = run_lm_sweep(&cfg, &[], &dir, false).unwrap();
    let id = &out.records[0].id;
    assert!(id.contains('.'));
    for path in [
        dir.join("checkpoints").join(format!("{id}-s0")),
        dir.join("checkpoints").join(format!("{id}-s0.bin")),
    ] {
        let check = nilab_cli::experiments::agop_check(&cfg, &path).unwrap();
        assert_eq!(check.windows, 4);
        assert!(check.alignment.abs() <= 1.0);
        assert!(check.input_aofe >= 0.0);
    }
}
