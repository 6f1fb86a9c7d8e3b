use proptest::prelude::*;

use nilab_core::lmshape::*;

fn shape(target: usize, l: usize) -> ShapeConfig {
    match solve_shape(target, l) {
        ShapeOutcome::Shape(s) => s,
        ShapeOutcome::Skip { reason, .. } => panic!("unexpected skip: {reason}"),
    }
}

#[test]
fn param_count_examples() {
    assert_eq!(param_count(1, 128, VOCAB, CONTEXT), 295_680);
    assert_eq!(param_count(2, 96, VOCAB, CONTEXT), 295_872);
    assert_eq!(param_count(24, 28, VOCAB, CONTEXT), 250_040);
}

#[test]
fn solver_examples() {
    let s = shape(300_000, 4);
    assert_eq!((s.d_model, s.active_n, s.n_heads, s.d_ff), (68, 275_400, 17, 272));
    assert_eq!(s.id, "0.3M-4");
    let s = shape(1_000_000, 24);
    assert_eq!((s.d_model, s.active_n), (56, 951_664));
    assert_eq!(s.id, "1M-24");
    assert!(matches!(solve_shape(300_000, 1000), ShapeOutcome::Skip { .. }));
    assert!(matches!(solve_shape(300_000, 0), ShapeOutcome::Skip { .. }));
    assert!(enumerate_shapes(300_000, &[]).is_empty());
    assert_eq!(enumerate_shapes(300_000, &DEFAULT_DEPTHS).len(), 12);
}

#[test]
fn budget_labels() {
    assert_eq!(budget_id(300_000), "0.3M");
    assert_eq!(budget_id(1_000_000), "1M");
    assert_eq!(budget_id(2_700_000), "2.7M");
    assert_eq!(budget_id(10_000_000), "10M");
    assert_eq!(budget_id(100_000), "0.1M");
}

#[test]
fn distance_examples() {
    let i = EfficiencyInterval::default();
    assert_eq!(delta_alpha(24, 896, &i), 0.0);
    assert!((delta_alpha(16, 2048, &i) - 0.0151875).abs() < 1e-15);
    assert!((i.distance(0.06) - 0.013).abs() < 1e-15);
    assert!((layer_gap(16, 2048, &i) - 31.104).abs() < 1e-9);
    assert!((layer_gap(26, 1152, &i) - 0.496).abs() < 1e-9);
    assert_eq!(layer_gap(1, 30, &i), 0.0);
    assert!(EfficiencyInterval::new(0.05, 0.01).is_err());
}

#[test]
fn csv_layout() {
    let mut buf = Vec::new();
    write_shapes_csv(&[shape(300_000, 1)], &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "id,target_n,depth,d_model,n_heads,d_ff,active_n,depth_width_ratio\n0.3M-1,300000,1,128,32,512,295680,0.0078\n"
    );
}

proptest! {
    #[test]
    fn param_count_is_monotone(l in 1usize..40, d in 1usize..400) {
        prop_assert!(param_count(l, d + 1, VOCAB, CONTEXT) > param_count(l, d, VOCAB, CONTEXT));
        prop_assert!(param_count(l + 1, d, VOCAB, CONTEXT) > param_count(l, d, VOCAB, CONTEXT));
    }

    #[test]
    fn solved_shapes_are_maximal_and_valid(target in 50_000usize..20_000_000, l in 1usize..30) {
        if let ShapeOutcome::Shape(s) = solve_shape(target, l) {
            prop_assert!(param_count(l, s.d_model + HEAD_DIM, VOCAB, CONTEXT) > target);
            prop_assert!(s.active_n <= target);
            prop_assert!(s.padding_ratio() <= MAX_PADDING);
            prop_assert_eq!(s.d_model % HEAD_DIM, 0);
            prop_assert_eq!(s.n_heads * HEAD_DIM, s.d_model);
            prop_assert_eq!(s.d_ff, 4 * s.d_model);
            prop_assert!(s.alpha() > 0.0);
        }
    }

    #[test]
    fn distance_is_zero_exactly_inside_and_lipschitz(a in 0.0f64..0.2, b in 0.0f64..0.2) {
        let i = EfficiencyInterval::default();
        prop_assert_eq!(i.distance(a) == 0.0, i.contains(a));
        prop_assert!((i.distance(a) - i.distance(b)).abs() <= (a - b).abs() + 1e-15);
    }
}
