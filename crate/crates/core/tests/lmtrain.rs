use rand::Rng as _;

use nilab_core::estimators::{EstimatorConfig, ProjectionMatrix};
use nilab_core::lmshape::{param_count, ShapeConfig};
use nilab_core::lmtrain::*;
use nilab_core::numkernel::{directional_derivative, input_gradient, rng, DiffModel, Tensor};

fn tiny(context: usize, d: usize, layers: usize, seed: u64) -> TinyTransformer {
    let shape = ShapeConfig::custom(layers, d, 256, context).unwrap();
    TinyTransformer::new(TinyConfig::from_shape(&shape), seed).unwrap()
}

fn random_bytes(n: usize, seed: u64) -> Vec<u8> {
    let mut r = rng::stream(seed, 0);
    (0..n).map(|_| r.gen()).collect()
}

/// Perturbs every parameter so norms and biases are not at their trivial init.
fn jitter(model: &mut TinyTransformer, seed: u64) {
    let mut r = rng::stream(seed, 1);
    for p in model.params_mut() {
        *p += rng::normal_vec(&mut r, 1, 0.1)[0];
    }
}

#[test]
fn parameter_count_matches_formula() {
    for (l, d, ctx) in [(1, 128, 256), (2, 96, 256), (24, 28, 256), (3, 16, 64), (12, 24, 64)] {
        let m = tiny(ctx, d, l, 0);
        assert_eq!(m.num_params(), param_count(l, d, 256, ctx));
        let by_layout: usize = m.layout().iter().map(|s| s.len()).sum();
        assert_eq!(by_layout, m.num_params());
    }
}

#[test]
fn future_tokens_do_not_change_past_logits() {
    let mut m = tiny(16, 16, 2, 3);
    jitter(&mut m, 3);
    for trial in 0..5u64 {
        let tokens = random_bytes(16, trial);
        let base = lm_forward(&m, &tokens).unwrap();
        let cut = 3 + trial as usize * 2;
        let mut changed = tokens.clone();
        for t in changed[cut + 1..].iter_mut() {
            *t = t.wrapping_add(17);
        }
        let other = lm_forward(&m, &changed).unwrap();
        assert_eq!(base.data()[..(cut + 1) * 256], other.data()[..(cut + 1) * 256]);
        assert_ne!(base.data()[(cut + 1) * 256..], other.data()[(cut + 1) * 256..]);
    }
}

#[test]
fn untrained_loss_is_near_uniform() {
    let m = tiny(32, 32, 2, 5);
    let windows = random_bytes(8 * 33, 9);
    let loss = m.loss(&windows, 32).unwrap();
    assert!((loss - 256f64.ln()).abs() < 0.2, "loss {loss}");
}

#[test]
fn training_gradient_matches_finite_differences() {
    let mut m = tiny(6, 16, 2, 7);
    jitter(&mut m, 7);
    let windows = random_bytes(3 * 7, 11);
    let mut grads = vec![0.0; m.num_params()];
    m.loss_and_grad(&windows, 6, &mut grads).unwrap();
    let mut r = rng::stream(13, 0);
    let h = 1e-5;
    let mut checked = 0;
    // every tensor gets probed at a few random coordinates
    for spec in m.layout().to_vec() {
        for _ in 0..4 {
            let i = spec.offset + r.gen_range(0..spec.len());
            let orig = m.params()[i];
            m.params_mut()[i] = orig + h;
            let up = m.loss(&windows, 6).unwrap();
            m.params_mut()[i] = orig - h;
            let down = m.loss(&windows, 6).unwrap();
            m.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
            assert!(
                err < 1e-4 || (fd - grads[i]).abs() < 1e-9,
                "{} [{i}]: fd {fd} analytic {}",
                spec.name,
                grads[i]
            );
            checked += 1;
        }
    }
    assert!(checked > 40);
}

#[test]
fn input_derivatives_match_finite_differences() {
    let mut m = tiny(5, 16, 2, 17);
    jitter(&mut m, 17);
    let f = LastLogits { model: &m, seq: 5 };
    let mut r = rng::stream(19, 0);
    let x = Tensor::new(vec![5, 16], rng::normal_vec(&mut r, 80, 1.0)).unwrap();
    let u = Tensor::new(vec![5, 16], rng::normal_vec(&mut r, 80, 1.0)).unwrap();
    let h = 1e-5;
    let shifted = |s: f64| -> Vec<f64> { x.data().iter().zip(u.data()).map(|(a, b)| a + s * b).collect() };
    let fd: Vec<f64> = f
        .eval(&shifted(h))
        .iter()
        .zip(f.eval(&shifted(-h)))
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    let jv = directional_derivative(&f, &x, &u).unwrap();
    let num: f64 = jv
        .data()
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(num / den < 1e-6, "relative error {}", num / den);
    // adjoint: <e_i, J u> = <J^T e_i, u>
    for i in [0usize, 31, 255] {
        let g = input_gradient(&f, &x, i).unwrap();
        let gu: f64 = g.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        assert!((gu - jv.data()[i]).abs() < 1e-10 * (1.0 + gu.abs()));
    }
    // batched tangents agree with one-at-a-time
    let mut tangents = u.data().to_vec();
    tangents.extend(rng::normal_vec(&mut r, 80, 1.0));
    let batch = f.jvp_batch(x.data(), &tangents, 2);
    assert_eq!(batch.len(), 512);
    let second = f.jvp(x.data(), &tangents[80..]);
    for (a, b) in batch[256..].iter().zip(&second) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn budget_arithmetic() {
    let b = TrainBudget::for_budget(300_000, 256);
    assert_eq!(b.bytes, 18_000_000);
    assert_eq!(b.base_steps, 1098);
    assert_eq!(b.max_steps, 1647);
    assert_eq!(TrainBudget::for_budget(1_000, 256).base_steps, 200);
    assert_eq!(TrainBudget::for_budget(100_000, 64).base_steps, 1464);
}

#[test]
fn evaluation_windows() {
    let split = vec![1u8; 513];
    assert_eq!(eval_windows(&split, 256).len(), 2);
    assert_eq!(eval_windows(&split[..511], 256).len(), 1);
    let data: Vec<u8> = (0..=255).collect();
    let w = eval_windows(&data, 100);
    assert_eq!(w.len(), 2);
    assert_eq!(w[1][0], 100);
    assert_eq!(w[1].len(), 101);
    assert_eq!(eval_windows(&data, 100), w);
    assert!(eval_windows(&data[..50], 100).is_empty());
}

fn corpus_of(train: Vec<u8>) -> ByteCorpus {
    ByteCorpus {
        valid: train.clone(),
        test: train.clone(),
        train,
        sources: vec![],
    }
}

#[test]
fn train_windows_are_deterministic_and_uniform() {
    let c = corpus_of((0..=32u8).collect());
    assert_eq!(sample_train_window(&c, 32, 1, 5), c.train);
    let long = corpus_of(random_bytes(10_000, 4));
    assert_eq!(
        sample_train_window(&long, 64, 2, 9),
        sample_train_window(&long, 64, 2, 9)
    );
    assert_ne!(
        sample_train_window(&long, 64, 2, 9),
        sample_train_window(&long, 64, 2, 10)
    );

    // start offsets, bucketed in 20 bins, against a uniform law
    let ctx = 50;
    let corpus = corpus_of(random_bytes(2051, 77));
    let span = corpus.train.len() - ctx;
    let mut bins = [0f64; 20];
    let draws = 10_000;
    for step in 0..draws as u64 {
        let w = sample_train_batch(&corpus, ctx, 1, 3, step);
        let start = corpus.train.windows(ctx + 1).position(|s| s == w.as_slice()).unwrap();
        bins[start * 20 / span] += 1.0;
    }
    let expected = draws as f64 / 20.0;
    let chi2: f64 = bins.iter().map(|o| (o - expected).powi(2) / expected).sum();
    // 19 degrees of freedom, p = 0.001 critical value
    assert!(chi2 < 43.82, "chi-square {chi2}");
}

#[test]
fn corpus_loading() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("all.txt");
    std::fs::write(&one, vec![b'a'; 1_000_000]).unwrap();
    let c = load_corpus(
        &CorpusPaths {
            train: one.clone(),
            ..CorpusPaths::default()
        },
        256,
    )
    .unwrap();
    assert_eq!((c.train.len(), c.valid.len(), c.test.len()), (980_000, 10_000, 10_000));
    let (t, v, s) = (dir.path().join("t"), dir.path().join("v"), dir.path().join("s"));
    std::fs::write(&t, vec![b'x'; 600]).unwrap();
    std::fs::write(&v, vec![b'y'; 300]).unwrap();
    std::fs::write(&s, vec![b'z'; 300]).unwrap();
    let c = load_corpus(
        &CorpusPaths {
            train: t.clone(),
            valid: Some(v),
            test: Some(s.clone()),
        },
        256,
    )
    .unwrap();
    assert_eq!(c.valid, vec![b'y'; 300]);
    assert_eq!(c.sources.len(), 3);
    let empty = dir.path().join("empty");
    std::fs::write(&empty, b"").unwrap();
    assert!(load_corpus(
        &CorpusPaths {
            train: empty,
            ..CorpusPaths::default()
        },
        16
    )
    .is_err());
    assert!(load_corpus(
        &CorpusPaths {
            train: t,
            valid: None,
            test: Some(s)
        },
        16
    )
    .is_err());
}

#[test]
fn synthetic_corpus_is_reproducible_text() {
    let a = synthetic_corpus(20_000, 1);
    assert_eq!(a.len(), 20_000);
    assert_eq!(a, synthetic_corpus(20_000, 1));
    assert_ne!(a, synthetic_corpus(20_000, 2));
    assert!(a.iter().all(|b| b.is_ascii()));
    assert!(a.iter().filter(|&&b| b == b' ').count() > 2_000);
}

fn smoke_corpus() -> ByteCorpus {
    ByteCorpus::split(synthetic_corpus(200_000, 7)).unwrap()
}

#[test]
fn short_training_run_behaves() {
    let corpus = smoke_corpus();
    let shape = ShapeConfig::custom(1, 16, 256, 16).unwrap();
    let budget = TrainBudget {
        base_steps: 40,
        max_steps: 60,
        batch: 8,
        eval_every: 10,
        warmup: 10,
        lr: 3e-3,
        eval_windows_cap: Some(32),
        ..TrainBudget::for_budget(10_000, 16)
    };
    let spec = MetricSpec {
        projection: ProjectionMatrix::gaussian(8, 256, 1),
        estimator: EstimatorConfig {
            n_batches: 2,
            batch_size: 4,
            n_probes: 4,
            ..EstimatorConfig::default()
        },
        seed: 0,
    };
    let a = train_lm(&shape, &corpus, &budget, Some(&spec), 1).unwrap();
    let b = train_lm(&shape, &corpus, &budget, Some(&spec), 1).unwrap();
    assert_eq!(a.record, b.record);
    let r = &a.record;
    assert!(!r.diverged);
    assert!(r.train_loss < r.initial_loss);
    assert!(r.aofe_ratio > 0.0 && r.aofe_ratio < 1.0);
    let min_val = a.history.iter().map(|c| c.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(r.val_loss, min_val);
    let restored = split_loss(&a.model, &corpus.valid, budget.eval_windows_cap).unwrap();
    assert_eq!(restored.to_bits(), r.val_loss.to_bits());
    assert!(r.steps >= budget.base_steps && r.steps <= budget.max_steps);
}

#[test]
fn zero_steps_leave_uniform_loss() {
    let corpus = smoke_corpus();
    let shape = ShapeConfig::custom(1, 16, 256, 16).unwrap();
    let budget = TrainBudget {
        base_steps: 0,
        max_steps: 0,
        eval_windows_cap: Some(64),
        ..TrainBudget::for_budget(10_000, 16)
    };
    let t = train_lm(&shape, &corpus, &budget, None, 0).unwrap();
    assert!((t.record.test_loss - 256f64.ln()).abs() < 0.2);
    assert!(t.record.aofe.is_nan());
}

#[test]
fn zero_head_gives_degenerate_agop() {
    let mut m = tiny(8, 16, 1, 1);
    m.tensor_mut("head").unwrap().iter_mut().for_each(|v| *v = 0.0);
    let corpus = smoke_corpus();
    let cfg = EstimatorConfig {
        n_batches: 1,
        batch_size: 2,
        n_probes: 2,
        ..EstimatorConfig::default()
    };
    let err = lm_agop_metrics(&m, &corpus.test, &ProjectionMatrix::gaussian(8, 256, 0), &cfg, 0).unwrap_err();
    assert!(err.to_string().contains("degenerate"));
}

#[test]
fn checkpoint_round_trip_and_eval_determinism() {
    let mut m = tiny(8, 16, 2, 21);
    jitter(&mut m, 21);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&m, dir.path(), "best").unwrap();
    let back = load_checkpoint(dir.path(), "best").unwrap();
    assert_eq!(back.params(), m.params());
    let corpus = smoke_corpus();
    let a = split_loss(&back, &corpus.test, Some(16)).unwrap();
    let b = split_loss(&m, &corpus.test, Some(16)).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let bin = dir.path().join("best.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[3] ^= 1;
    std::fs::write(&bin, bytes).unwrap();
    assert!(load_checkpoint(dir.path(), "best").is_err());
}

#[test]
fn last_input_agop_matches_reverse_mode() {
    let mut m = tiny(6, 16, 2, 23);
    jitter(&mut m, 23);
    let split = random_bytes(6 * 3 + 1, 29);
    let g = lm_last_input_agop(&m, &split, 2).unwrap();
    assert_eq!(g.dim(), 16);
    // oracle: per-logit gradients from the reverse pass, restricted to the last position
    let f = LastLogits { model: &m, seq: 6 };
    let mut want = vec![0.0; 16 * 16];
    for w in eval_windows(&split, 6).into_iter().take(2) {
        let x = Tensor::new(vec![6, 16], m.embed(&w[..6], 1, 6)).unwrap();
        for o in 0..256 {
            let grad = input_gradient(&f, &x, o).unwrap();
            let last = &grad.data()[5 * 16..];
            for a in 0..16 {
                for b in 0..16 {
                    want[a * 16 + b] += last[a] * last[b] / 2.0;
                }
            }
        }
    }
    for (a, b) in g.values().iter().zip(&want) {
        assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
    }
    let r = lm_nfa_alignment(&m, &g, 0.5).unwrap();
    assert!((-1.0..=1.0).contains(&r));
}
