use proptest::prelude::*;

use nilab_core::analysis::*;
use nilab_core::lmshape::EfficiencyInterval;
use nilab_core::lmtrain::TrialRecord;
use nilab_core::Error;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn pearson_examples() {
    assert!(close(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0, 1e-15));
    assert!(close(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0, 1e-15));
    assert!(close(
        pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(),
        0.8,
        1e-15
    ));
}

#[test]
fn pearson_rejects_bad_series() {
    assert!(matches!(
        pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
        Err(Error::DegenerateSeries(_))
    ));
    assert!(matches!(pearson(&[1.0, 2.0], &[1.0]), Err(Error::InvalidArgument(_))));
    assert!(matches!(pearson(&[1.0], &[1.0]), Err(Error::InvalidArgument(_))));
    assert!(pearson(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
}

#[test]
fn linear_fit_recovers_line() {
    let xs = [0.0, 1.0, 2.0, 5.0];
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.5).collect();
    let (m, c) = linear_fit(&xs, &ys).unwrap();
    assert!(close(m, 3.0, 1e-12) && close(c, -1.5, 1e-12));
}

fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..20).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0..100.0f64, n),
            prop::collection::vec(-100.0..100.0f64, n),
        )
    })
}

proptest! {
    #[test]
    fn pearson_symmetry_and_affine_invariance((xs, ys) in series(), a in 0.1..10.0f64, b in -50.0..50.0f64) {
        let Ok(r) = pearson(&xs, &ys) else { return Ok(()) };
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!(close(pearson(&ys, &xs).unwrap(), r, 1e-12));
        let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        prop_assert!(close(pearson(&scaled, &ys).unwrap(), r, 1e-9));
        let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
        prop_assert!(close(pearson(&xs, &neg).unwrap(), -r, 1e-12));
    }
}

fn record(id: &str, target_n: usize, depth: usize, d_model: usize, test_loss: f64) -> TrialRecord {
    TrialRecord {
        id: id.into(),
        target_n,
        depth,
        d_model,
        n_heads: d_model / 4,
        d_ff: 4 * d_model,
        active_n: target_n,
        depth_width_ratio: depth as f64 / d_model as f64,
        seed: 0,
        initial_loss: 0.0,
        train_loss: test_loss,
        val_loss: test_loss,
        test_loss,
        aofe: 1.0,
        aofe_ratio: 0.5,
        steps: 0,
        best_step: 0,
        diverged: !test_loss.is_finite(),
        note: String::new(),
    }
}

#[test]
fn best_per_budget_on_published_tables() {
    let set = FixtureSet::embedded().unwrap();
    let best = best_per_budget(&set.lm_records().unwrap());
    assert_eq!(best.len(), 11);
    let at = |n: usize| best.iter().find(|r| r.target_n == n).unwrap();
    assert_eq!(at(300_000).id, "0.3M-1");
    assert!(close(at(300_000).test_loss, 2.2186, 0.0));
    assert_eq!(at(2_300_000).id, "2.3M-6");
    assert!(close(at(2_300_000).test_loss, 1.2138, 0.0));
    let iv = interval_estimate(&best, INTERVAL_MIN_BUDGET).unwrap();
    assert!(close(iv.lo, 0.023, 5e-4) && close(iv.hi, 0.047, 5e-4), "{iv:?}");
}

#[test]
fn best_per_budget_rules() {
    let one = vec![record("a", 10, 2, 64, 1.0)];
    assert_eq!(best_per_budget(&one), one);
    // exact tie resolves to the deeper, narrower shape
    let tie = vec![
        record("wide", 10, 2, 64, 1.0),
        record("deep", 10, 3, 48, 1.0),
        record("worse", 10, 4, 32, 1.1),
    ];
    assert_eq!(best_per_budget(&tie)[0].id, "deep");
    // diverged records never win; an all-diverged budget disappears
    let mixed = vec![
        record("nan", 10, 2, 64, f64::NAN),
        record("ok", 10, 3, 48, 2.0),
        record("gone", 20, 2, 64, f64::NAN),
    ];
    let best = best_per_budget(&mixed);
    assert_eq!(best.len(), 1);
    assert_eq!(best[0].id, "ok");
}

#[test]
fn interval_estimate_rules() {
    let pt = vec![record("a", 2_000_000, 3, 100, 1.0)];
    let iv = interval_estimate(&pt, 1_000_000).unwrap();
    assert_eq!((iv.lo, iv.hi), (0.03, 0.03));
    assert!(interval_estimate(&pt, 5_000_000).is_err());
}

proptest! {
    #[test]
    fn best_point_beats_its_budget(losses in prop::collection::vec((0usize..3, 1usize..8, 0.5..3.0f64), 1..30)) {
        let recs: Vec<TrialRecord> = losses
            .iter()
            .enumerate()
            .map(|(i, &(b, l, loss))| record(&i.to_string(), (b + 1) * 1_000_000, l, 64, loss))
            .collect();
        let best = best_per_budget(&recs);
        for r in &recs {
            let b = best.iter().find(|x| x.target_n == r.target_n).unwrap();
            prop_assert!(b.test_loss <= r.test_loss);
        }
        let iv = interval_estimate(&best, 0).unwrap();
        for b in &best {
            prop_assert!(iv.contains(b.depth as f64 / b.d_model as f64));
        }
    }
}

const HEADER: &str = "model,family,params_b,d_model,layers,mmlu_pro,param_group\n";

#[test]
fn ingest_published_table() {
    let set = FixtureSet::embedded().unwrap();
    let t = ingest_model_table(set.text(fixtures::LLM_SHAPES).unwrap().as_bytes()).unwrap();
    assert_eq!(t.rows.len(), 18);
    assert!(t.rejected.is_empty() && t.duplicates.is_empty());
    let trends = grouped_trend(&t.rows, &EfficiencyInterval::default());
    let groups: Vec<&str> = trends.iter().map(|t| t.group.as_str()).collect();
    assert_eq!(groups, ["0.5-1B", "1-2.5B", "3-4.5B", "7-9B"]);
}

#[test]
fn ingest_drops_duplicates_and_bad_rows() {
    let csv = format!(
        "{HEADER}A,Fam,1.2,2048,16,7.5,0.5-1B\nB,Fam,1.3,2048,16,8.0,0.5-1B\nC,Fam,2.0,2304,26,,1-2.5B\nD,Fam,x,1,1,1,g\nE,Fam,2.0,0,26,3,g\n"
    );
    let t = ingest_model_table(csv.as_bytes()).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.rows[0].model, "A");
    assert_eq!(t.duplicates.len(), 1);
    assert_eq!(t.duplicates[0].line, 3);
    let lines: Vec<u64> = t.rejected.iter().map(|r| r.line).collect();
    assert_eq!(lines, [4, 5, 6]);
    assert!(t.rejected[0].reason.contains("mmlu_pro"));
}

#[test]
fn ingest_guards_dense_models_and_header() {
    let csv = "model,family,params_b,d_model,layers,mmlu_pro,param_group,moe\nA,F,1,2048,16,7,g,false\nB,F,3,2048,24,9,g,true\n";
    let t = ingest_model_table(csv.as_bytes()).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert!(t.rejected[0].reason.contains("mixture-of-experts"));
    let bad = "model,family,params_b,d_model,layers,param_group\n";
    assert!(matches!(
        ingest_model_table(bad.as_bytes()),
        Err(Error::Table { line: 1, .. })
    ));
}

#[test]
fn grouped_trend_single_row_group_is_undefined() {
    let csv = format!("{HEADER}A,F,1,2048,16,7,solo\nB,F,2,1024,20,9,pair\nC,G,2,2048,30,12,pair\n");
    let t = ingest_model_table(csv.as_bytes()).unwrap();
    let trends = grouped_trend(&t.rows, &EfficiencyInterval::default());
    assert_eq!(trends[0].n, 1);
    assert!(trends[0].r.is_none());
    assert_eq!(trends[1].n, 2);
    assert!(trends[1].r.is_some());
}

#[test]
fn grouped_trend_ignores_row_order() {
    let set = FixtureSet::embedded().unwrap();
    let mut rows = ingest_model_table(set.text(fixtures::LLM_SHAPES).unwrap().as_bytes())
        .unwrap()
        .rows;
    let iv = EfficiencyInterval::default();
    let key = |ts: Vec<TrendResult>| {
        let mut v: Vec<(String, f64)> = ts.into_iter().map(|t| (t.group, t.r.unwrap())).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    };
    let before = key(grouped_trend(&rows, &iv));
    rows.reverse();
    let after = key(grouped_trend(&rows, &iv));
    for (a, b) in before.iter().zip(&after) {
        assert_eq!(a.0, b.0);
        assert!(close(a.1, b.1, 1e-12));
    }
}

#[test]
fn published_correlations_reproduce() {
    let rep = fixture_correlations(&FixtureSet::embedded().unwrap()).unwrap();
    for e in &rep.entries {
        assert_ne!(e.pass, Some(false), "{e:?}");
    }
    assert!(rep.passed());
    assert!(rep
        .get("lm best points >=1.0M r(test loss, AOFE)")
        .unwrap()
        .pass
        .is_none());
}

#[test]
fn corrupted_fixture_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let set = FixtureSet::embedded().unwrap();
    let names = [
        fixtures::TOY,
        fixtures::CROSS_CNN,
        fixtures::CROSS_VIT,
        fixtures::CROSS_RNN,
        fixtures::LLM_SHAPES,
    ];
    for name in names {
        std::fs::write(dir.path().join(name), set.text(name).unwrap()).unwrap();
    }
    for range in fixtures::LM_RANGES {
        for kind in ["shapes", "metrics"] {
            let name = format!("lm_{kind}_{range}.csv");
            std::fs::write(dir.path().join(&name), set.text(&name).unwrap()).unwrap();
        }
    }
    assert!(FixtureSet::from_dir(dir.path()).is_ok());
    let edited = set.text(fixtures::CROSS_VIT).unwrap().replacen("0.9619", "0.9620", 1);
    std::fs::write(dir.path().join(fixtures::CROSS_VIT), edited).unwrap();
    match FixtureSet::from_dir(dir.path()) {
        Err(Error::Fixture { name, reason }) => {
            assert_eq!(name, fixtures::CROSS_VIT);
            assert!(reason.contains("checksum"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn scatter_svg_is_well_formed() {
    let plot = svg::Scatter {
        title: "a < b".into(),
        x_label: "x".into(),
        y_label: "y".into(),
        log_x: true,
        series: vec![svg::Series {
            label: "s".into(),
            points: vec![(1.0, 2.0), (10.0, 3.0), (0.0, 1.0)],
        }],
    };
    let s = plot.render();
    assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
    assert!(s.contains("a &lt; b"));
    assert_eq!(s.matches("<circle").count(), 3);
}
