use std::cell::Cell;
use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts `out` against fixed random weights so every output coordinate
/// carries a distinct upstream gradient.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(rand_tensor(&mut rng, &shape));
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

#[test]
fn matmul_identity() {
    let mut tape = Tape::<f64>::new();
    let eye = tape.constant(Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
    let m = tape.constant(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_row_by_column() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::matrix(&[vec![1.0, 2.0]]));
    let b = tape.constant(Tensor::matrix(&[vec![3.0], vec![4.0]]));
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).shape(), &[1, 1]);
    assert_eq!(tape.value(out).data(), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, Error::Dimension { .. }));
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let a = store.add("a", rand_tensor(&mut rng, &[4, 3]));
    let b = store.add("b", rand_tensor(&mut rng, &[3, 2]));
    let report = finite_diff_check(&store, 1e-5, |tape, p| {
        let (va, vb) = (p.bind(tape, a), p.bind(tape, b));
        let out = tape.matmul(va, vb)?;
        Ok(project(tape, out, 1))
    })
    .unwrap();
    assert_eq!(report.coordinates, 18);
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn activations_at_zero() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::scalar(0.0));
    let s = tape.sigmoid(z);
    let t = tape.tanh(z);
    assert_eq!(tape.value(s).item(), 0.5);
    assert_eq!(tape.value(t).item(), 0.0);
}

#[test]
fn sigmoid_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::vector(vec![-2.0, -1.0, 1.0, 2.0]));
    let report = finite_diff_check(&store, 1e-5, |tape, p| {
        let v = p.bind(tape, x);
        let s = tape.sigmoid(v);
        Ok(project(tape, s, 2))
    })
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn elementwise_rejects_incompatible_shapes() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(&[2]));
    let b = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
    assert!(matches!(tape.mul(a, b), Err(Error::Dimension { .. })));
    let s = tape.constant(Tensor::scalar(2.0));
    let ok = tape.mul(a, s).unwrap();
    assert_eq!(tape.value(ok).shape(), &[2]);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::vector(vec![0.0; 3]));
    let y = tape.softmax(x).unwrap();
    for &p in tape.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_matches_direct_formula() {
    // Oracle: the textbook formula without max subtraction.
    let xs = [1.0f64, 2.0, 3.0];
    let denom: f64 = xs.iter().map(|x| x.exp()).sum();
    let expected: Vec<f64> = xs.iter().map(|x| x.exp() / denom).collect();
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::vector(xs.to_vec()));
    let y = tape.softmax(x).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-9);
    }
    // 0.09003057, 0.24472847, 0.66524096
    assert!((expected[2] - 0.665_240_955_774_821_6).abs() < 1e-12);
}

#[test]
fn softmax_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let x = store.add("x", rand_tensor(&mut rng, &[3, 4]));
    let report = finite_diff_check(&store, 1e-5, |tape, p| {
        let v = p.bind(tape, x);
        let s = tape.softmax(v)?;
        Ok(project(tape, s, 3))
    })
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn max_over_time_examples() {
    let mut tape = Tape::<f64>::new();
    let one = tape.constant(Tensor::matrix(&[vec![4.0, -1.0]]));
    let out = tape.max_over_time(one, &[1]).unwrap();
    assert_eq!(tape.value(out).data(), &[4.0, -1.0]);

    let m = tape.constant(Tensor::matrix(&[vec![1.0, 5.0], vec![3.0, 2.0]]));
    let out = tape.max_over_time(m, &[2]).unwrap();
    assert_eq!(tape.value(out).data(), &[3.0, 5.0]);
}

#[test]
fn max_over_time_ignores_padding_bitwise() {
    let mut tape = Tape::<f32>::new();
    let base = tape.constant(Tensor::matrix(&[vec![0.1, -0.7], vec![0.3, -0.2]]));
    let padded = tape.constant(Tensor::matrix(&[
        vec![0.1, -0.7],
        vec![0.3, -0.2],
        vec![9.0, 9.0],
        vec![0.0, 0.0],
    ]));
    let a = tape.max_over_time(base, &[2]).unwrap();
    let b = tape.max_over_time(padded, &[2]).unwrap();
    let bits = |v: Var| tape.value(v).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a), bits(b));
}

#[test]
fn max_over_time_tie_routes_to_lowest_index() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::matrix(&[vec![2.0], vec![2.0], vec![1.0]]));
    let m = tape.max_over_time(x, &[3]).unwrap();
    let loss = tape.sum(m);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0, 0.0, 0.0]);
}

#[test]
fn max_over_time_bounds() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.max_over_time(x, &[0]), Err(Error::Bounds { .. })));
    assert!(matches!(tape.max_over_time(x, &[4]), Err(Error::Bounds { .. })));
}

#[test]
fn conv1d_unit_window_sums_coordinates() {
    let mut tape = Tape::<f64>::new();
    let seq = tape.constant(Tensor::matrix(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]));
    let f = tape.constant(Tensor::full(&[1, 3, 1], 1.0));
    let out = tape.conv1d(seq, f, &[2]).unwrap();
    assert_eq!(tape.value(out).shape(), &[2, 1]);
    assert_eq!(tape.value(out).data(), &[6.0, -0.5]);
}

#[test]
fn conv1d_hand_arithmetic() {
    // windows: 5·1 + 3·(−1) = 2 and 3·1 + 9·(−1) = −6
    let mut tape = Tape::<f64>::new();
    let seq = tape.constant(Tensor::new(vec![3, 1], vec![5.0, 3.0, 9.0]).unwrap());
    let f = tape.constant(Tensor::new(vec![2, 1, 1], vec![1.0, -1.0]).unwrap());
    let out = tape.conv1d(seq, f, &[3]).unwrap();
    assert_eq!(tape.value(out).data(), &[2.0, -6.0]);
}

#[test]
fn conv1d_rejects_short_sequences() {
    let mut tape = Tape::<f64>::new();
    let seq = tape.constant(Tensor::zeros(&[2, 4]));
    let f = tape.constant(Tensor::zeros(&[3, 4, 2]));
    assert!(matches!(
        tape.conv1d(seq, f, &[2]),
        Err(Error::SequenceTooShort { len: 2, width: 3 })
    ));
}

#[test]
fn conv1d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let seq = store.add("seq", rand_tensor(&mut rng, &[2, 5, 3]));
    let f = store.add("filters", rand_tensor(&mut rng, &[2, 3, 4]));
    let report = finite_diff_check(&store, 1e-5, |tape, p| {
        let (s, w) = (p.bind(tape, seq), p.bind(tape, f));
        let out = tape.conv1d(s, w, &[5, 3])?;
        Ok(project(tape, out, 4))
    })
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::vector(vec![3.0, -1.0, 7.0]));
    let loss = tape.sum(x);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_sum_of_squares() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    let y = tape.tanh(x);
    assert!(matches!(tape.backward(y), Err(Error::Usage(_))));
}

#[test]
fn backward_visits_each_node_once() {
    let calls = Rc::new(Cell::new(0));
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    let counter = calls.clone();
    let value = tape.value(x).clone();
    let y = tape.custom(&[x], value, move |_, _, g| {
        counter.set(counter.get() + 1);
        vec![g.to_vec()]
    });
    // y feeds the loss through two paths.
    let z = tape.add(y, y).unwrap();
    let loss = tape.sum(z);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(calls.get(), 1);
    assert_eq!(grads.visited(), 3);
    assert_eq!(grads.get(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn gradcheck_exact_on_quadratic() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::vector(vec![0.3, -1.2, 2.5]));
    let report = finite_diff_check(&store, 1e-5, |tape, p| {
        let v = p.bind(tape, x);
        let sq = tape.mul(v, v)?;
        let s = tape.scale(sq, 1.5);
        Ok(tape.sum(s))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-9, "{report:?}");
}

#[test]
fn gradcheck_sigmoid_chain() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::vector(vec![0.4, -0.9, 1.7]));
    let report = finite_diff_check(&store, 1e-5, |tape, p| {
        let v = p.bind(tape, x);
        let a = tape.sigmoid(v);
        let b = tape.sigmoid(a);
        let c = tape.tanh(b);
        Ok(project(tape, c, 8))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn gradcheck_catches_corrupted_backward_rule() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::vector(vec![0.4, -0.9, 1.7]));
    let report = finite_diff_check(&store, 1e-5, |tape, p| {
        let v = p.bind(tape, x);
        let src = tape.value(v).clone();
        let out = Tensor::vector(src.data().iter().map(|&t| 1.0 / (1.0 + (-t).exp())).collect());
        // Wrong derivative: s instead of s(1 − s).
        let y = tape.custom(&[v], out, |_, out, g| {
            vec![g.iter().zip(out.data()).map(|(&g, &s)| g * s).collect()]
        });
        Ok(project(tape, y, 8))
    })
    .unwrap();
    assert!(report.max_rel_error > 1e-2, "{report:?}");
}

#[test]
fn weighted_sum_and_affine_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let alpha = store.add("alpha", rand_tensor(&mut rng, &[2, 3]));
    let parts: Vec<_> = (0..3)
        .map(|i| store.add(format!("r{i}"), rand_tensor(&mut rng, &[2, 4])))
        .collect();
    let w = store.add("w", rand_tensor(&mut rng, &[4, 2]));
    let b = store.add("b", rand_tensor(&mut rng, &[2]));
    let report = finite_diff_check(&store, 1e-5, |tape, p| {
        let a = p.bind(tape, alpha);
        let rs: Vec<Var> = parts.iter().map(|&id| p.bind(tape, id)).collect();
        let v = tape.weighted_sum(a, &rs)?;
        let (wv, bv) = (p.bind(tape, w), p.bind(tape, b));
        let out = tape.affine(v, wv, bv)?;
        let t = tape.tanh(out);
        Ok(project(tape, t, 6))
    })
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn structural_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut store = ParamStore::new();
    let seq = store.add("seq", rand_tensor(&mut rng, &[3, 4, 2]));
    let h = store.add("h", rand_tensor(&mut rng, &[3, 2]));
    let table = store.add("table", rand_tensor(&mut rng, &[5, 3]));
    let report = finite_diff_check(&store, 1e-5, |tape, p| {
        let s = p.bind(tape, seq);
        let hv = p.bind(tape, h);
        let x1 = tape.select_step(s, 1)?;
        let x3 = tape.select_step(s, 3)?;
        let picked = tape.select_rows(&[true, false, true], x1, hv)?;
        let cat = tape.concat(&[picked, x3])?;
        let rows = p.bind(tape, table);
        let g = tape.gather_rows(rows, &[4, 0, 4])?;
        let cat2 = tape.concat(&[cat, g])?;
        let r = tape.reshape(cat2, &[21])?;
        let sg = tape.sigmoid(r);
        Ok(project(tape, sg, 10))
    })
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::vector(vec![0.2, 0.7, 0.45]));
    let q = store.add("q", Tensor::matrix(&[vec![0.1, 0.6, 0.3], vec![0.5, 0.25, 0.25]]));
    let report = finite_diff_check(&store, 1e-5, |tape, b| {
        let pv = b.bind(tape, p);
        let qv = b.bind(tape, q);
        let l1 = tape.bce(pv, &[1.0, 0.0, 1.0])?;
        let l2 = tape.cross_entropy(qv, &[1, 2])?;
        tape.add(l1, l2)
    })
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

proptest! {
    #[test]
    fn softmax_stays_on_simplex(xs in prop::collection::vec(-30.0f64..30.0, 1..12), c in -50.0f64..50.0) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::vector(xs.clone()));
        let shifted = tape.constant(Tensor::vector(xs.iter().map(|v| v + c).collect()));
        let y = tape.softmax(x).unwrap();
        let ys = tape.softmax(shifted).unwrap();
        let total: f64 = tape.value(y).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        prop_assert!(tape.value(y).data().iter().all(|&p| p >= 0.0));
        for (a, b) in tape.value(y).data().iter().zip(tape.value(ys).data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn repeated_backward_doubles_gradients(xs in prop::collection::vec(-3.0f64..3.0, 1..8)) {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(xs));
        let mut once = None;
        for round in 0..2 {
            let mut tape = Tape::new();
            let mut binder = Binder::trainable(&store);
            let x = binder.bind(&mut tape, id);
            let t = tape.tanh(x);
            let s = tape.mul(t, x).unwrap();
            let loss = tape.sum(s);
            let bindings = binder.finish();
            let grads = tape.backward(loss).unwrap();
            store.accumulate(&bindings, &grads);
            if round == 0 {
                once = store.grad(id).map(<[f64]>::to_vec);
            }
        }
        let once = once.unwrap();
        for (twice, single) in store.grad(id).unwrap().iter().zip(&once) {
            prop_assert_eq!(*twice, 2.0 * single);
        }
    }

    #[test]
    fn random_shapes_pass_gradient_checks(
        m in 1usize..4, k in 1usize..4, n in 1usize..4, seed in 0u64..1000
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", rand_tensor(&mut rng, &[m, k]));
        let w = store.add("w", rand_tensor(&mut rng, &[k, n]));
        let b = store.add("b", rand_tensor(&mut rng, &[n]));
        let report = finite_diff_check(&store, 1e-5, |tape, p| {
            let (xv, wv, bv) = (p.bind(tape, x), p.bind(tape, w), p.bind(tape, b));
            let a = tape.affine(xv, wv, bv)?;
            let s = tape.sigmoid(a);
            let t = tape.tanh(s);
            let sm = tape.softmax(t)?;
            Ok(project(tape, sm, seed))
        }).unwrap();
        prop_assert!(report.passes(1e-5), "{:?}", report);
    }
}
