use proptest::prelude::*;

use crate::{check_gradients, check_gradients_sampled, Error, Graph, NodeId, ParameterStore, Tensor};

fn store_with(name: &str, t: Tensor) -> ParameterStore {
    let mut s = ParameterStore::new();
    s.insert(name, t, true).unwrap();
    s
}

#[test]
fn constant_product() {
    let mut g = Graph::new();
    let a = g.scalar(3.0);
    let b = g.scalar(4.0);
    let c = g.mul(a, b).unwrap();
    assert_eq!(g.evaluate(c, &ParameterStore::new()).unwrap().item(), 12.0);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0, 0.0]));
    let y = g.softmax(x, 0, None).unwrap();
    assert_eq!(g.evaluate(y, &ParameterStore::new()).unwrap().data(), &[0.5, 0.5]);
}

#[test]
fn l2_normalize_three_four() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![3.0, 4.0]));
    let y = g.l2_normalize(x, 0, 1e-12).unwrap();
    let v = g.evaluate(y, &ParameterStore::new()).unwrap();
    assert!((v.data()[0] - 0.6).abs() < 1e-12);
    assert!((v.data()[1] - 0.8).abs() < 1e-12);
}

#[test]
fn square_derivative() {
    let store = store_with("x", Tensor::scalar(3.0));
    let mut g = Graph::new();
    let x = g.parameter(&store, "x").unwrap();
    let y = g.square(x).unwrap();
    let (_, grads) = g.gradients(y, &store).unwrap();
    assert_eq!(grads.get("x").unwrap().item(), 6.0);
}

#[test]
fn sine_derivative_at_zero() {
    let store = store_with("x", Tensor::scalar(0.0));
    let mut g = Graph::new();
    let x = g.parameter(&store, "x").unwrap();
    let y = g.sin(x).unwrap();
    let (_, grads) = g.gradients(y, &store).unwrap();
    assert_eq!(grads.get("x").unwrap().item(), 1.0);
}

#[test]
fn norm_gradient_is_unit_direction() {
    let store = store_with("v", Tensor::vector(vec![3.0, 4.0]));
    let mut g = Graph::new();
    let v = g.parameter(&store, "v").unwrap();
    let n = g.l2_norm(v, 0).unwrap();
    let (_, grads) = g.gradients(n, &store).unwrap();
    let d = grads.get("v").unwrap().data();
    assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
}

#[test]
fn non_scalar_root_is_rejected() {
    let store = store_with("v", Tensor::vector(vec![1.0, 2.0]));
    let mut g = Graph::new();
    let v = g.parameter(&store, "v").unwrap();
    assert!(matches!(g.gradients(v, &store), Err(Error::NonScalarRoot(_))));
}

#[test]
fn shape_errors_surface_at_construction() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(g.matmul(a, b).is_err());
    let c = g.constant(Tensor::zeros(&[4]));
    assert!(g.add(a, c).is_err());
    assert!(g.gather_rows(a, vec![2]).is_err());
    assert!(g.sum(a, 2).is_err());
}

#[test]
fn non_finite_output_names_the_op() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![-1.0]));
    let y = g.log(x).unwrap();
    match g.evaluate(y, &ParameterStore::new()) {
        Err(Error::NonFinite { op, .. }) => assert_eq!(op, "log"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn quadratic_in_five_parameters() {
    let store = store_with("w", Tensor::vector(vec![0.3, -1.2, 0.7, 1.9, -0.4]));
    let mut g = Graph::new();
    let w = g.parameter(&store, "w").unwrap();
    let coef = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 5.0]));
    let sq = g.square(w).unwrap();
    let weighted = g.mul(sq, coef).unwrap();
    let f = g.sum_all(weighted).unwrap();
    let report = check_gradients(&g, f, &store, 1e-5, 1e-6).unwrap();
    assert!(report.passed(), "{report:?}");
    for s in &report.slots {
        assert!(s.max_coordinate_error < 1e-6);
    }
}

#[test]
fn checker_catches_a_wrong_backward_rule() {
    let store = store_with("x", Tensor::vector(vec![0.5, -1.5, 1.1]));
    let mut g = Graph::new();
    let x = g.parameter(&store, "x").unwrap();
    let y = g.broken_square(x).unwrap();
    let f = g.sum_all(y).unwrap();
    let report = check_gradients(&g, f, &store, 1e-5, 1e-4).unwrap();
    assert!(!report.passed());
}

#[test]
fn sampled_checker_probes_a_strided_subset() {
    let store = store_with("x", Tensor::vector((0..10).map(|k| 0.3 * k as f64 - 1.0).collect()));
    let mut g = Graph::new();
    let x = g.parameter(&store, "x").unwrap();
    let y = g.broken_square(x).unwrap();
    let f = g.sum_all(y).unwrap();
    let report = check_gradients_sampled(&g, f, &store, 1e-5, 1e-4, 3, 1).unwrap();
    assert_eq!(report.slots[0].coordinates, 3);
    assert!(!report.passed());

    let mut g = Graph::new();
    let x = g.parameter(&store, "x").unwrap();
    let y = g.square(x).unwrap();
    let f = g.sum_all(y).unwrap();
    let report = check_gradients_sampled(&g, f, &store, 1e-5, 1e-6, 50, 0).unwrap();
    assert_eq!(report.slots[0].coordinates, 10);
    assert!(report.passed());
}

#[test]
fn kink_inside_the_window_is_reprobed() {
    // The leaky ReLU switch sits 3e-6 from the probe point, inside ε = 1e-5.
    let store = store_with("x", Tensor::vector(vec![3e-6, 0.5]));
    let mut g = Graph::new();
    let x = g.parameter(&store, "x").unwrap();
    let y = g.leaky_relu(x, 0.01).unwrap();
    let f = g.sum_all(y).unwrap();
    let report = check_gradients(&g, f, &store, 1e-5, 1e-6).unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.slots[0].kinks, 1);

    // Narrowing the window does not rescue a wrong gradient.
    let mut g = Graph::new();
    let x = g.parameter(&store, "x").unwrap();
    let y = g.leaky_relu(x, 0.01).unwrap();
    let y = g.broken_square(y).unwrap();
    let f = g.sum_all(y).unwrap();
    assert!(!check_gradients(&g, f, &store, 1e-5, 1e-4).unwrap().passed());
}

#[test]
fn frozen_slots_are_marked_non_applicable() {
    let mut store = ParameterStore::new();
    store.insert("a", Tensor::scalar(2.0), true).unwrap();
    store.insert("b", Tensor::scalar(5.0), false).unwrap();
    let mut g = Graph::new();
    let a = g.parameter(&store, "a").unwrap();
    let b = g.parameter(&store, "b").unwrap();
    let y = g.mul(a, b).unwrap();
    let (_, grads) = g.gradients(y, &store).unwrap();
    let slots = grads.slots();
    assert!(slots[0].applicable && !slots[1].applicable);
    assert_eq!(slots[1].grad.item(), 2.0);
}

#[test]
fn masked_softmax_entries_are_zero_with_zero_gradient() {
    let store = store_with("x", Tensor::matrix(2, 3, vec![0.1, 0.5, -0.3, 1.0, 2.0, 3.0]).unwrap());
    let mut g = Graph::new();
    let x = g.parameter(&store, "x").unwrap();
    let mask = vec![true, false, true, false, true, true];
    let y = g.softmax(x, 1, Some(mask)).unwrap();
    let w = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let p = g.mul(y, w).unwrap();
    let f = g.sum_all(p).unwrap();
    let (values, grads) = g.gradients(f, &store).unwrap();
    let out = values.get(y).data();
    assert_eq!(out[1], 0.0);
    assert_eq!(out[3], 0.0);
    assert!((out[0] + out[2] - 1.0).abs() < 1e-12);
    assert!((out[4] + out[5] - 1.0).abs() < 1e-12);
    let gx = grads.get("x").unwrap().data();
    assert_eq!(gx[1], 0.0);
    assert_eq!(gx[3], 0.0);
}

/// Builds `sum(op(x) * weights)` for a random probe of the op's gradient.
fn scalarize(g: &mut Graph, y: NodeId, seed: u64) -> NodeId {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|k| ((k as u64 * 7919 + seed * 104729) % 997) as f64 / 997.0 - 0.4).collect();
    let w = g.constant(Tensor::new(shape, data).unwrap());
    let p = g.mul(y, w).unwrap();
    g.sum_all(p).unwrap()
}

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn passes(g: &Graph, root: NodeId, store: &ParameterStore) -> bool {
    let report = check_gradients(g, root, store, 1e-5, 1e-4).unwrap();
    report.passed()
}

type UnaryBuilder = fn(&mut Graph, NodeId) -> NodeId;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_ops_match_central_differences(x in matrix_strategy(3, 4), seed in 0u64..1000) {
        let ops: Vec<(&str, UnaryBuilder)> = vec![
            ("sin", |g, x| g.sin(x).unwrap()),
            ("cos", |g, x| g.cos(x).unwrap()),
            ("square", |g, x| g.square(x).unwrap()),
            ("sigmoid", |g, x| g.sigmoid(x).unwrap()),
            ("leaky_relu", |g, x| g.leaky_relu(x, 0.01).unwrap()),
            ("max_with_zero", |g, x| g.max_with_zero(x).unwrap()),
            ("softplus", |g, x| g.softplus(x).unwrap()),
            ("neg", |g, x| g.neg(x).unwrap()),
            ("scale", |g, x| g.scale(x, -2.5).unwrap()),
            ("abs", |g, x| g.abs(x).unwrap()),
            ("sqrt", |g, x| { let s = g.square(x).unwrap(); let c = g.constant(Tensor::filled(&[3, 4], 0.5)); let p = g.add(s, c).unwrap(); g.sqrt(p).unwrap() }),
            ("log", |g, x| { let s = g.square(x).unwrap(); let c = g.constant(Tensor::filled(&[3, 4], 0.5)); let p = g.add(s, c).unwrap(); g.log(p).unwrap() }),
            ("l2_norm", |g, x| g.l2_norm(x, 1).unwrap()),
            ("l2_normalize", |g, x| g.l2_normalize(x, 0, 1e-12).unwrap()),
            ("softmax", |g, x| g.softmax(x, 1, Some(vec![true, true, false, true, true, true, true, false, false, true, true, true])).unwrap()),
            ("segment_softmax", |g, x| g.segment_softmax(x, vec![1, 0, 1], 2).unwrap()),
            ("sum0", |g, x| g.sum(x, 0).unwrap()),
            ("sum1", |g, x| g.sum(x, 1).unwrap()),
            ("mean", |g, x| g.mean(x).unwrap()),
            ("gather", |g, x| g.gather_rows(x, vec![2, 0, 2, 1]).unwrap()),
            ("scatter", |g, x| g.scatter_add_rows(x, vec![1, 1, 0], 3).unwrap()),
            ("reshape", |g, x| { let r = g.reshape(x, vec![6, 2]).unwrap(); let s = g.sin(r).unwrap(); g.reshape(s, vec![12]).unwrap() }),
        ];
        let store = store_with("x", x);
        for (name, build) in ops {
            let mut g = Graph::new();
            let p = g.parameter(&store, "x").unwrap();
            let y = build(&mut g, p);
            let f = if g.shape(y).is_empty() { y } else { scalarize(&mut g, y, seed) };
            prop_assert!(passes(&g, f, &store), "op {} failed", name);
        }
    }

    #[test]
    fn binary_ops_match_central_differences(a in matrix_strategy(3, 4), b in matrix_strategy(4, 2), bias in prop::collection::vec(-2.0f64..2.0, 4), seed in 0u64..1000) {
        let mut store = ParameterStore::new();
        store.insert("a", a, true).unwrap();
        store.insert("b", b, true).unwrap();
        store.insert("bias", Tensor::vector(bias), true).unwrap();
        let builders: Vec<(&str, fn(&mut Graph, NodeId, NodeId, NodeId) -> NodeId)> = vec![
            ("matmul", |g, a, b, _| g.matmul(a, b).unwrap()),
            ("add_bias", |g, a, _, c| g.add(a, c).unwrap()),
            ("sub_bias", |g, a, _, c| g.sub(a, c).unwrap()),
            ("mul_bias", |g, a, _, c| g.mul(a, c).unwrap()),
            ("mul_same", |g, a, _, _| { let s = g.sin(a).unwrap(); g.mul(a, s).unwrap() }),
            ("concat1", |g, a, b, _| { let bt = g.matmul(a, b).unwrap(); g.concat(&[a, bt], 1).unwrap() }),
            ("concat0", |g, a, _, c| { let s = g.sin(a).unwrap(); let r = g.concat(&[a, s], 0).unwrap(); g.add(r, c).unwrap() }),
        ];
        for (name, build) in builders {
            let mut g = Graph::new();
            let pa = g.parameter(&store, "a").unwrap();
            let pb = g.parameter(&store, "b").unwrap();
            let pc = g.parameter(&store, "bias").unwrap();
            let y = build(&mut g, pa, pb, pc);
            let f = scalarize(&mut g, y, seed);
            prop_assert!(passes(&g, f, &store), "op {} failed", name);
        }
    }

    #[test]
    fn gradients_are_linear(x in matrix_strategy(2, 3), ca in -3.0f64..3.0, cb in -3.0f64..3.0) {
        let store = store_with("x", x);
        let build = |g: &mut Graph| {
            let p = g.parameter(&store, "x").unwrap();
            let s = g.sin(p).unwrap();
            let f = g.sum_all(s).unwrap();
            let q = g.square(p).unwrap();
            let h = g.mean(q).unwrap();
            (f, h)
        };
        let mut g = Graph::new();
        let (f, h) = build(&mut g);
        let gf = g.gradients(f, &store).unwrap().1;
        let gh = g.gradients(h, &store).unwrap().1;
        let sf = g.scale(f, ca).unwrap();
        let sh = g.scale(h, cb).unwrap();
        let combo = g.add(sf, sh).unwrap();
        let gc = g.gradients(combo, &store).unwrap().1;
        let (a, b, c) = (gf.get("x").unwrap(), gh.get("x").unwrap(), gc.get("x").unwrap());
        for k in 0..c.len() {
            let expected = ca * a.data()[k] + cb * b.data()[k];
            prop_assert!((c.data()[k] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(x in matrix_strategy(4, 5)) {
        let mut g = Graph::new();
        let c = g.constant(x);
        let y = g.softmax(c, 1, None).unwrap();
        let v = g.evaluate(y, &ParameterStore::new()).unwrap();
        for r in 0..4 {
            prop_assert!((v.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn l2_normalize_gives_unit_rows(x in matrix_strategy(4, 3)) {
        let mut g = Graph::new();
        let c = g.constant(x.clone());
        let y = g.l2_normalize(c, 1, 1e-12).unwrap();
        let v = g.evaluate(y, &ParameterStore::new()).unwrap();
        for r in 0..4 {
            let input_norm = x.row(r).iter().map(|a| a * a).sum::<f64>().sqrt();
            if input_norm > 1e-12 {
                let n = v.row(r).iter().map(|a| a * a).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() <= 1e-12);
            }
        }
    }
}
