use nilab_core::estimators::*;
use nilab_core::metrics::AgopMatrix;
use nilab_core::numkernel::{input_gradient, rng, Activation, DiffModel, Identity, LinearMap, Mlp, Tensor};

fn rel_frob(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, 99);
    Dataset::new((0..n).map(|_| rng::normal_vec(&mut r, d, 1.0)).collect(), seed).unwrap()
}

fn a_matrix() -> Tensor {
    Tensor::from_rows(&[
        vec![1.0, 2.0, 0.0, -1.0],
        vec![0.5, -0.3, 1.2, 0.0],
        vec![0.0, 1.0, 1.0, 2.0],
    ])
    .unwrap()
}

#[test]
fn linear_map_input_and_output_grams() {
    let a = a_matrix();
    let m = LinearMap::new(a.clone()).unwrap();
    let data = random_data(5, 4, 1);
    let gin = exact_agop_input(&m, &data).unwrap();
    let ata = a.transpose().unwrap().matmul(&a).unwrap();
    assert!(max_abs_diff(gin.values(), ata.data()) < 1e-12);
    let gout = exact_gram_output(&m, &data).unwrap();
    let aat = a.matmul(&a.transpose().unwrap()).unwrap();
    assert!(max_abs_diff(gout.values(), aat.data()) < 1e-12);
}

#[test]
fn identity_and_orthogonal_give_identity() {
    let data = random_data(3, 5, 2);
    let g = exact_agop_input(&Identity(5), &data).unwrap();
    assert!(max_abs_diff(g.values(), Tensor::identity(5).data()) < 1e-15);
    let (c, s) = (0.6, 0.8);
    let rot = LinearMap::new(Tensor::from_rows(&[vec![c, -s], vec![s, c]]).unwrap()).unwrap();
    let g = exact_gram_output(&rot, &random_data(4, 2, 3)).unwrap();
    assert!(max_abs_diff(g.values(), Tensor::identity(2).data()) < 1e-12);
}

/// Brute force: sum over output coordinates of outer products of per-coordinate gradients.
fn brute_input_agop<M: DiffModel>(m: &M, data: &Dataset) -> Vec<f64> {
    let d = m.input_len();
    let mut acc = vec![0.0; d * d];
    for x in data.iter() {
        let xt = Tensor::vector(x.to_vec());
        for i in 0..m.output_len() {
            let g = input_gradient(m, &xt, i).unwrap();
            for a in 0..d {
                for b in 0..d {
                    acc[a * d + b] += g.data()[a] * g.data()[b];
                }
            }
        }
    }
    acc.iter().map(|v| v / data.len() as f64).collect()
}

#[test]
fn mlp_input_agop_matches_brute_force() {
    let m = Mlp::random(6, 10, 4, Activation::Tanh, 11);
    let data = random_data(16, 6, 4);
    let g = exact_agop_input(&m, &data).unwrap();
    assert!(max_abs_diff(g.values(), &brute_input_agop(&m, &data)) < 1e-10);
}

#[test]
fn symmetric_jacobian_routes_coincide() {
    let b = Tensor::from_rows(&[vec![1.0, 0.3, -0.2], vec![0.4, 2.0, 0.1], vec![0.0, 0.7, -1.0]]).unwrap();
    let s = b.transpose().unwrap().matmul(&b).unwrap();
    let m = LinearMap::new(s).unwrap();
    let data = random_data(4, 3, 5);
    let gi = exact_agop_input(&m, &data).unwrap();
    let go = exact_gram_output(&m, &data).unwrap();
    assert!(max_abs_diff(gi.values(), go.values()) < 1e-12);
}

#[test]
fn exact_estimators_ignore_order_and_duplication() {
    let m = Mlp::random(4, 8, 3, Activation::Gelu, 12);
    let data = random_data(9, 4, 6);
    let reversed = data.select(&(0..9).rev().collect::<Vec<_>>());
    let doubled = data.select(&(0..18).map(|i| i % 9).collect::<Vec<_>>());
    for f in [exact_agop_input::<Mlp>, exact_gram_output::<Mlp>] {
        let base = f(&m, &data).unwrap();
        assert!(max_abs_diff(base.values(), f(&m, &reversed).unwrap().values()) < 1e-12);
        assert!(max_abs_diff(base.values(), f(&m, &doubled).unwrap().values()) < 1e-12);
    }
}

#[test]
fn empty_dataset_is_rejected() {
    let empty = Dataset::new(vec![], 0).unwrap();
    assert!(matches!(
        exact_agop_input(&Identity(2), &empty),
        Err(nilab_core::Error::EmptyDataset)
    ));
    assert!(exact_gram_output(&Identity(2), &empty).is_err());
}

#[test]
fn jvp_identity_probes_recover_identity() {
    let data = random_data(1, 4, 7);
    let cfg = EstimatorConfig {
        n_batches: 1,
        batch_size: 1,
        n_probes: 100_000,
        ..EstimatorConfig::default()
    };
    let g = jvp_agop(&Identity(4), &data, &ProjectionMatrix::identity(4), &cfg, 1).unwrap();
    assert!(rel_frob(g.values(), Tensor::identity(4).data()) < 0.05);
}

fn linear_probe_error(n: usize, seed: u64) -> f64 {
    let a = a_matrix();
    let m = LinearMap::new(a.clone()).unwrap();
    let data = random_data(8, 4, 8);
    let cfg = EstimatorConfig {
        n_batches: 4,
        batch_size: 5,
        n_probes: n / 20,
        ..EstimatorConfig::default()
    };
    let exact = exact_gram_output(&m, &data).unwrap();
    let est = jvp_agop(&m, &data, &ProjectionMatrix::identity(3), &cfg, seed).unwrap();
    rel_frob(est.values(), exact.values())
}

#[test]
fn jvp_linear_map_error_bound() {
    for &n in &[1_000usize, 10_000] {
        let bound = 3.0 * (2.0 / n as f64).sqrt();
        for seed in 0..5 {
            let err = linear_probe_error(n, seed);
            assert!(err <= bound, "n={n} seed={seed} err={err} bound={bound}");
        }
    }
    assert!(linear_probe_error(200_000, 9) < 0.05);
}

#[test]
fn jvp_mean_over_seeds_converges() {
    let seeds = 40;
    let m = LinearMap::new(a_matrix()).unwrap();
    let data = random_data(8, 4, 8);
    let exact = exact_gram_output(&m, &data).unwrap();
    let cfg = EstimatorConfig {
        n_batches: 2,
        batch_size: 4,
        n_probes: 25,
        ..EstimatorConfig::default()
    };
    let runs: Vec<AgopMatrix> = (0..seeds)
        .map(|s| jvp_agop(&m, &data, &ProjectionMatrix::identity(3), &cfg, s).unwrap())
        .collect();
    let single = rel_frob(runs[0].values(), exact.values());
    let mean = AgopMatrix::mean_of(&runs).unwrap();
    let averaged = rel_frob(mean.values(), exact.values());
    assert!(averaged < single.max(0.05));
    assert!(averaged <= 3.0 * (2.0 / (seeds as usize * cfg.total_probes()) as f64).sqrt());
}

#[test]
fn jvp_zero_model_is_exactly_zero() {
    let m = LinearMap::new(Tensor::zeros(vec![3, 4])).unwrap();
    let data = random_data(3, 4, 9);
    let cfg = EstimatorConfig {
        n_batches: 2,
        batch_size: 2,
        n_probes: 8,
        ..EstimatorConfig::default()
    };
    let g = jvp_agop(&m, &data, &ProjectionMatrix::gaussian(2, 3, 5), &cfg, 0).unwrap();
    assert!(g.values().iter().all(|&v| v == 0.0));
}

#[test]
fn jvp_is_reproducible_and_checks_projection_width() {
    let m = Mlp::random(4, 6, 5, Activation::Tanh, 3);
    let data = random_data(10, 4, 10);
    let cfg = EstimatorConfig {
        n_batches: 2,
        batch_size: 3,
        n_probes: 4,
        ..EstimatorConfig::default()
    };
    let p = ProjectionMatrix::gaussian(3, 5, 42);
    let a = jvp_agop(&m, &data, &p, &cfg, 17).unwrap();
    let b = jvp_agop(&m, &data, &p, &cfg, 17).unwrap();
    assert_eq!(a.values(), b.values());
    assert!(jvp_agop(&m, &data, &ProjectionMatrix::identity(4), &cfg, 17).is_err());
}

#[test]
fn logit_preprocess_examples() {
    let center = EstimatorConfig {
        center_logits: true,
        ..EstimatorConfig::default()
    };
    let rms = EstimatorConfig {
        rms_normalize_logits: true,
        ..EstimatorConfig::default()
    };
    let both = EstimatorConfig {
        center_logits: true,
        rms_normalize_logits: true,
        ..EstimatorConfig::default()
    };
    let out = logit_preprocess(&Tensor::vector(vec![1.0, 2.0, 3.0]), &center).unwrap();
    assert_eq!(out.data(), &[-1.0, 0.0, 1.0]);
    let out = logit_preprocess(&Tensor::vector(vec![-1.0, 0.0, 1.0]), &rms).unwrap();
    let s = (1.5f64).sqrt();
    assert!(max_abs_diff(out.data(), &[-s, 0.0, s]) < 1e-15);
    assert!(matches!(
        logit_preprocess(&Tensor::vector(vec![2.0; 4]), &both),
        Err(nilab_core::Error::DegenerateLogits)
    ));
}

#[test]
fn preprocessed_model_derivatives_match_differences() {
    let cfg = EstimatorConfig {
        center_logits: true,
        rms_normalize_logits: true,
        ..EstimatorConfig::default()
    };
    let m = PreprocessedLogits::new(Mlp::random(5, 7, 6, Activation::Tanh, 21), &cfg);
    let mut r = rng::stream(5, 5);
    let x = rng::normal_vec(&mut r, 5, 1.0);
    let u = rng::normal_vec(&mut r, 5, 1.0);
    let h = 1e-5;
    let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + h * b).collect();
    let xm: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - h * b).collect();
    let fd: Vec<f64> = m
        .eval(&xp)
        .iter()
        .zip(m.eval(&xm))
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    let jv = m.jvp(&x, &u);
    assert!(rel_frob(&jv, &fd) < 1e-6);
    // <v, J u> == <J^T v, u>
    let v = rng::normal_vec(&mut r, 6, 1.0);
    let lhs: f64 = v.iter().zip(&jv).map(|(a, b)| a * b).sum();
    let rhs: f64 = m.vjp(&x, &v).iter().zip(&u).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    let batch = m.jvp_batch(&x, &u, 1);
    assert!(max_abs_diff(&batch, &jv) < 1e-14);
}
