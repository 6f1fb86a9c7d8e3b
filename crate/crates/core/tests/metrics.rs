use proptest::prelude::*;

use nilab_core::metrics::*;
use nilab_core::numkernel::Tensor;

fn agop(rows: &[Vec<f64>]) -> AgopMatrix {
    symmetrize(&Tensor::from_rows(rows).unwrap()).unwrap()
}

fn example() -> AgopMatrix {
    agop(&[vec![1.0, 2.0], vec![2.0, 3.0]])
}

#[test]
fn aofe_examples() {
    assert_eq!(aofe(&example()), 8.0);
    assert_eq!(aofe(&agop(&[vec![4.0, 0.0], vec![0.0, -1.0]])), 0.0);
    let p = example().permuted(&[1, 0]).unwrap();
    assert_eq!(aofe(&p), 8.0);
    assert_eq!(aofe(&AgopMatrix::zeros(0, AgopSpace::Input)), 0.0);
    assert_eq!(aofe(&agop(&[vec![5.0]])), 0.0);
}

#[test]
fn ratio_examples() {
    assert!((aofe_ratio(&example()).unwrap() - 8.0 / 18.0).abs() < 1e-15);
    let hollow = agop(&[vec![0.0, 1.5], vec![1.5, 0.0]]);
    assert_eq!(aofe_ratio(&hollow).unwrap(), 1.0);
    let diag = agop(&[vec![2.0, 0.0], vec![0.0, 3.0]]);
    assert_eq!(aofe_ratio(&diag).unwrap(), 0.0);
}

#[test]
fn ratio_of_zero_matrix_is_an_error() {
    let z = AgopMatrix::zeros(3, AgopSpace::Output);
    assert!(matches!(aofe_ratio(&z), Err(nilab_core::Error::UndefinedRatio)));
}

#[test]
fn superposition_predicate() {
    let diag = agop(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    assert!(!is_gradient_superposed(&diag, 0.0));
    let tiny = agop(&[vec![1.0, 1e-6], vec![1e-6, 1.0]]);
    assert!(!is_gradient_superposed(&tiny, 1e-3));
    assert!(is_gradient_superposed(&example(), 1.0));
    let r = InteractionReport::from_agop(&example(), None).unwrap();
    assert!(r.superposed);
    assert!((r.threshold_used - 3e-8).abs() < 1e-20);
}

#[test]
fn symmetrize_examples() {
    let s = symmetrize(&Tensor::from_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap()).unwrap();
    assert_eq!(s.values(), &[0.0, 1.0, 1.0, 0.0]);
    let s = symmetrize(&Tensor::from_rows(&[vec![1.0, 3.0], vec![1.0, 1.0]]).unwrap()).unwrap();
    assert_eq!(s.values(), &[1.0, 2.0, 2.0, 1.0]);
    let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 5.0]]).unwrap();
    assert_eq!(symmetrize(&m).unwrap().values(), m.data());
    assert!(symmetrize(&Tensor::zeros(vec![2, 3])).is_err());
}

#[test]
fn nfa_self_alignment() {
    let w = Tensor::from_rows(&[vec![1.0, 0.5, -0.3], vec![0.2, -1.0, 0.7]]).unwrap();
    let gram = w.transpose().unwrap().matmul(&w).unwrap();
    let g = symmetrize(&gram).unwrap();
    assert!((nfa_alignment(&w, &g, 1.0).unwrap() - 1.0).abs() < 1e-12);
    let sq = symmetrize(&gram.matmul(&gram).unwrap()).unwrap();
    assert!((nfa_alignment(&w, &sq, 0.5).unwrap() - 1.0).abs() < 1e-8);
}

#[test]
fn nfa_random_is_bounded_and_degenerate_errors() {
    use nilab_core::numkernel::rng;
    let mut r = rng::stream(3, 0);
    let w = Tensor::matrix(4, 6, rng::normal_vec(&mut r, 24, 1.0)).unwrap();
    let b = Tensor::matrix(6, 6, rng::normal_vec(&mut r, 36, 1.0)).unwrap();
    let g = symmetrize(&b.transpose().unwrap().matmul(&b).unwrap()).unwrap();
    let rho = nfa_alignment(&w, &g, 1.0).unwrap();
    assert!((-1.0..=1.0).contains(&rho));
    let zero_w = Tensor::zeros(vec![2, 6]);
    assert!(matches!(
        nfa_alignment(&zero_w, &g, 1.0),
        Err(nilab_core::Error::DegenerateAlignment(_))
    ));
    assert!(nfa_alignment(&w, &g, 0.0).is_err());
}

#[test]
fn csv_roundtrip_and_header() {
    let g = example();
    let mut buf = Vec::new();
    g.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("agop,dim=2,space=input\n"));
    let back = AgopMatrix::read_csv(&buf[..]).unwrap();
    assert_eq!(back.values(), g.values());
    assert!(AgopMatrix::read_csv(&b"agop,dim=2\n1,2\n"[..]).is_err());
}

fn sym_strategy() -> impl Strategy<Value = AgopMatrix> {
    (1usize..7).prop_flat_map(|n| {
        prop::collection::vec(-10.0f64..10.0, n * n)
            .prop_map(move |v| AgopMatrix::from_square(v, n, AgopSpace::Input, 1, EstimatorTag::Supplied).unwrap())
    })
}

proptest! {
    #[test]
    fn scale_law(g in sym_strategy(), s in -5.0f64..5.0) {
        let scaled = g.scaled(s);
        let base = aofe(&g);
        prop_assert!((aofe(&scaled) - s * s * base).abs() <= 1e-12 * (1.0 + s * s * base));
        if s.abs() > 1e-3 && total_energy(&g) > 0.0 {
            let r0 = aofe_ratio(&g).unwrap();
            let r1 = aofe_ratio(&scaled).unwrap();
            prop_assert!((r0 - r1).abs() <= 1e-12);
        }
    }

    #[test]
    fn permutation_invariance(g in sym_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..g.dim()).collect();
        perm.shuffle(&mut nilab_core::numkernel::rng::stream(seed, 0));
        let p = g.permuted(&perm).unwrap();
        prop_assert!((aofe(&p) - aofe(&g)).abs() <= 1e-12 * (1.0 + aofe(&g)));
        if total_energy(&g) > 0.0 {
            prop_assert!((aofe_ratio(&p).unwrap() - aofe_ratio(&g).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn energy_decomposition(g in sym_strategy()) {
        let total = total_energy(&g);
        let parts = aofe(&g) + diagonal_energy(&g);
        prop_assert!((total - parts).abs() <= 1e-12 * (1.0 + total));
    }

    #[test]
    fn ratio_in_unit_interval(g in sym_strategy()) {
        if total_energy(&g) > 0.0 {
            let r = aofe_ratio(&g).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn zero_threshold_predicate_matches_aofe(g in sym_strategy(), zero_mask in any::<bool>()) {
        let g = if zero_mask {
            let n = g.dim();
            let v: Vec<f64> = (0..n * n).map(|k| if k % (n + 1) == 0 { g.values()[k] } else { 0.0 }).collect();
            AgopMatrix::from_square(v, n, AgopSpace::Input, 1, EstimatorTag::Supplied).unwrap()
        } else { g };
        prop_assert_eq!(is_gradient_superposed(&g, 0.0), aofe(&g) != 0.0);
    }
}
