use proptest::prelude::*;
use rfadv::tensor::{
    NamedTensorArchive, Optimizer, OptimizerKind, ParamStore, Tape, Tensor, TensorError,
};

fn t(shape: &[usize], data: &[f32]) -> Tensor {
    Tensor::from_slice(shape, data).unwrap()
}

#[test]
fn relu_forward() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]), false);
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 2], &[0.0, 0.0]), false);
    let y = tape.softmax(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn identity_kernel_leaves_signal_unchanged() {
    let signal: Vec<f32> = (0..10).map(|i| (i as f32 * 0.7).sin()).collect();
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 10], &signal), false);
    let k = tape.leaf(t(&[1, 1, 1], &[1.0]), false);
    let y = tape.conv1d(x, k, 0, 0).unwrap();
    assert_eq!(tape.value(y).data(), &signal[..]);
}

#[test]
fn square_has_derivative_six_at_three() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0), true);
    let y = tape.mul(x, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[6.0]);
}

#[test]
fn relu_gradient_is_zero_for_negative_input() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(-1.0), true);
    let y = tape.relu(x);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0]);
}

#[test]
fn loss_gradient_with_respect_to_itself_is_one() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(1.5), true);
    let g = tape.backward(x).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0]);
}

#[test]
fn backward_on_non_scalar_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
    let y = tape.relu(x);
    assert!(matches!(tape.backward(y), Err(TensorError::NotScalar(_))));
}

#[test]
fn shape_mismatch_names_the_op() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
    let w = tape.leaf(Tensor::zeros(&[4, 5]), false);
    let err = tape.matmul(a, w).unwrap_err();
    assert!(matches!(err, TensorError::Shape { .. }), "{err:?}");
    assert!(err.to_string().contains("matmul"), "{err}");
}

#[test]
fn zero_weight_lstm_cell_has_zero_hidden_state() {
    let (b, f, h) = (3, 2, 4);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[b, f]), false);
    let s = tape.leaf(Tensor::zeros(&[b, 2 * h]), false);
    let wi = tape.leaf(Tensor::zeros(&[f, 4 * h]), false);
    let wh = tape.leaf(Tensor::zeros(&[h, 4 * h]), false);
    let bias = tape.leaf(Tensor::zeros(&[4 * h]), false);
    let out = tape.lstm_cell(x, s, wi, wh, bias).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn sgd_with_zero_gradient_leaves_parameters_unchanged() {
    let mut store = ParamStore::new();
    store.add("p", t(&[3], &[0.5, -1.0, 2.0])).unwrap();
    let before = store.value(0).clone();
    let mut opt = Optimizer::new(OptimizerKind::Sgd { lr: 0.1, momentum: 0.0 }, &store);
    opt.step(&mut store).unwrap();
    assert_eq!(store.value(0), &before);
}

#[test]
fn first_adam_step_moves_by_learning_rate() {
    let mut store = ParamStore::new();
    store.add("p", Tensor::scalar(1.0)).unwrap();
    store.iter_mut().next().unwrap().grad = Tensor::scalar(1.0);
    let mut opt = Optimizer::new(OptimizerKind::Adam { lr: 0.1 }, &store);
    opt.step(&mut store).unwrap();
    // m̂ = 1, v̂ = 1 after bias correction, so the step is lr / (1 + eps).
    assert!((store.value(0).data()[0] - 0.9).abs() < 1e-6);
}

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-20.0f32..20.0, r * c).prop_map(move |d| Tensor::new(vec![r, c], d).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(z in matrix(4, 11)) {
        let mut tape = Tape::new();
        let x = tape.leaf(z.clone(), false);
        let p = tape.softmax(x).unwrap();
        let k = z.shape()[1];
        for row in tape.value(p).data().chunks(k) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn cross_entropy_is_non_negative(z in matrix(4, 11), seed in any::<u64>()) {
        let (b, k) = (z.shape()[0], z.shape()[1]);
        let labels: Vec<usize> = (0..b).map(|i| ((seed >> (i * 4)) as usize) % k).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(z, false);
        let loss = tape.cross_entropy(x, &labels).unwrap();
        prop_assert!(tape.value(loss).data()[0] >= 0.0);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k(k in 2usize..=11, c in -5.0f32..5.0, label in 0usize..11) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, k], c), false);
        let loss = tape.cross_entropy(x, &[label % k]).unwrap();
        prop_assert!((tape.value(loss).data()[0] as f64 - (k as f64).ln()).abs() <= 1e-5);
    }

    #[test]
    fn ops_leave_their_inputs_unmodified(a in matrix(3, 6)) {
        let copy = a.clone();
        let mut tape = Tape::new();
        let x = tape.borrowed(&a, true);
        let r = tape.relu(x);
        let s = tape.sigmoid(r);
        let th = tape.tanh(s);
        let p = tape.softmax(th).unwrap();
        let m = tape.mul(p, x).unwrap();
        let l = tape.sum(m);
        tape.backward(l).unwrap();
        prop_assert_eq!(&a, &copy);
    }

    #[test]
    fn archive_round_trips(tensors in proptest::collection::vec(matrix(3, 5), 0..4)) {
        let archive = NamedTensorArchive {
            metadata: [("k".to_string(), "v".to_string())].into_iter().collect(),
            tensors: tensors.into_iter().enumerate().map(|(i, t)| (format!("t{i}"), t)).collect(),
        };
        let bytes = archive.to_bytes().unwrap();
        prop_assert_eq!(NamedTensorArchive::from_bytes(&bytes).unwrap(), archive);
    }
}
