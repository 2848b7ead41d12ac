use da6_core::autodiff::{grad_check, grad_check_many, Tape};
use da6_core::testkit::primitive_grad_errors;
use da6_core::{Error, Tensor};
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn matmul_forward_and_backward() {
    let mut tape = Tape::new();
    let a = tape.param(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.param(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
    let s = tape.sum(c).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap().data(), &[11.0, 15.0, 11.0, 15.0]);
    assert_eq!(tape.grad(b).unwrap().data(), &[4.0, 4.0, 6.0, 6.0]);
}

#[test]
fn mismatched_matmul_is_a_dimension_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::<f64>::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::<f64>::zeros(vec![2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn softmax_of_equal_inputs_is_uniform_with_zero_gradient_of_sum() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[1, 4], &[2.0; 4]));
    let y = tape.softmax(x, 1).unwrap();
    close(tape.value(y).data(), &[0.25; 4], 1e-15);
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    close(tape.grad(x).unwrap().data(), &[0.0; 4], 1e-15);
}

#[test]
fn softmax_is_stable_for_large_inputs() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 3], &[1000.0, 1000.0, -1000.0]));
    let y = tape.softmax(x, 1).unwrap();
    close(tape.value(y).data(), &[0.5, 0.5, 0.0], 1e-12);
}

#[test]
fn layer_norm_standardises_rows() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
    let g = tape.constant(t(&[4], &[1.0; 4]));
    let b = tape.constant(t(&[4], &[0.0; 4]));
    let y = tape.layer_norm(x, g, b, 0.0).unwrap();
    let s = 1.25f64.sqrt();
    close(tape.value(y).data(), &[-1.5 / s, -0.5 / s, 0.5 / s, 1.5 / s], 1e-12);
}

#[test]
fn relu_and_mean_gradients() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[4], &[-1.0, 2.0, -3.0, 4.0]));
    let y = tape.relu(x).unwrap();
    let m = tape.mean(y).unwrap();
    assert_eq!(tape.value(m).data(), &[1.5]);
    tape.backward(m).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.25, 0.0, 0.25]);
}

#[test]
fn concat_routes_gradients_back_to_each_part() {
    let mut tape = Tape::new();
    let a = tape.param(t(&[2, 1], &[1.0, 2.0]));
    let b = tape.param(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
    let c = tape.concat_last(&[a, b]).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    let w = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let p = tape.mul(c, w).unwrap();
    let s = tape.sum(p).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 4.0]);
    assert_eq!(tape.grad(b).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
}

#[test]
fn leaf_used_twice_accumulates() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[1], &[3.0]));
    let y = tape.mul(x, x).unwrap();
    let z = tape.add(y, x).unwrap();
    tape.backward(z).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[7.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let c = tape.constant(t(&[2], &[3.0, 4.0]));
    let y = tape.mul(x, c).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(x).unwrap().data(), &[3.0, 4.0]);
}

#[test]
fn grad_check_of_square_and_constant_functions() {
    let x = t(&[3], &[0.5, -1.0, 2.0]);
    let err = grad_check(
        |tape, x| {
            let y = tape.mul(x, x)?;
            tape.sum(y)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
    let err = grad_check_many(
        |tape, x| {
            let zero = tape.scale(x[0], 0.0)?;
            tape.sum(zero)
        },
        &[x],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-12, "{err}");
}

#[test]
fn grad_check_rejects_non_scalar_outputs() {
    let x = t(&[2], &[1.0, 2.0]);
    assert!(matches!(grad_check(|tape, x| tape.relu(x), &x, 1e-6), Err(Error::Contract(_))));
}

#[test]
fn every_primitive_passes_finite_differences() {
    for seed in 0..3 {
        for (name, err) in primitive_grad_errors(seed).unwrap() {
            assert!(err < 1e-6, "{name}: {err}");
        }
    }
}

#[test]
fn replay_after_restoring_inputs_is_bit_identical() {
    let mut tape = Tape::new();
    let x0 = t(&[2, 2], &[0.3, -0.7, 1.1, 0.2]);
    let x = tape.param(x0.clone());
    let y = tape.softmax(x, 1).unwrap();
    let z = tape.gelu(y).unwrap();
    let before = tape.value(z).clone();
    tape.set_value(x, t(&[2, 2], &[5.0, 1.0, 2.0, 3.0])).unwrap();
    tape.replay().unwrap();
    assert_ne!(tape.value(z), &before);
    tape.set_value(x, x0).unwrap();
    tape.replay().unwrap();
    assert_eq!(tape.value(z), &before);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(data in prop::collection::vec(-50.0f64..50.0, 12), shift in -100.0f64..100.0) {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3, 4], &data));
        let y = tape.softmax(x, 1).unwrap();
        let shifted: Vec<f64> = data.iter().map(|v| v + shift).collect();
        let xs = tape.constant(t(&[3, 4], &shifted));
        let ys = tape.softmax(xs, 1).unwrap();
        let out = tape.value(y).clone();
        for r in 0..3 {
            let row = out.row(r);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for (a, b) in out.data().iter().zip(tape.value(ys).data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
