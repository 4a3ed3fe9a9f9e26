use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::rng;

fn randn(r: &mut rng::Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

#[test]
fn matmul_identity_and_arithmetic() {
    let mut tape = Tape::new();
    let i2 = tape.leaf(Tensor::identity(2)).unwrap();
    let x = tape
        .leaf(Tensor::matrix(2, 2, vec![0.3, -1.0, 2.5, 4.0]).unwrap())
        .unwrap();
    let ix = tape.matmul(i2, x).unwrap();
    assert_eq!(tape.value(ix), tape.value(x));

    let a = tape
        .leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let b = tape.leaf(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap()).unwrap();
    let ab = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(ab).data(), &[3.0, 7.0]);
    assert_eq!(tape.value(ab).shape(), &[2, 1]);
}

#[test]
fn matmul_shape_mismatch() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3])).unwrap();
    let b = tape.leaf(Tensor::zeros(&[2, 3])).unwrap();
    assert!(matches!(tape.matmul(a, b), Err(crate::Error::Shape { .. })));
    assert!(tape.matmul_nt(a, b).is_ok());
}

#[test]
fn matmul_gradient_matches_differences() {
    let mut r = rng::rng(11);
    let a = randn(&mut r, &[3, 4]);
    let b = randn(&mut r, &[4, 2]);
    let report = grad_check_many(
        |t, v| {
            let c = t.matmul(v[0], v[1])?;
            t.sum_all(c)
        },
        &[a, b],
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape
        .leaf(Tensor::matrix(2, 3, vec![2.0, 2.0, 2.0, 0.0, 3f64.ln(), -1e3]).unwrap())
        .unwrap();
    let y = tape.softmax_rows(x).unwrap();
    let v = tape.value(y);
    for j in 0..3 {
        assert!((v.get(0, j) - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!((v.get(1, 0) - 0.25).abs() < 1e-15);
    assert!((v.get(1, 1) - 0.75).abs() < 1e-15);
    assert_eq!(v.get(1, 2), 0.0);
}

#[test]
fn softmax_handles_large_logits() {
    let mut tape = Tape::new();
    let x = tape
        .leaf(Tensor::matrix(1, 2, vec![1e300, 1e300]).unwrap())
        .unwrap();
    let y = tape.softmax_rows(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift(
        row in proptest::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let n = row.len();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, n, row.clone()).unwrap()).unwrap();
        let xs = tape.leaf(Tensor::matrix(1, n, row.iter().map(|v| v + shift).collect()).unwrap()).unwrap();
        let y = tape.softmax_rows(x).unwrap();
        let ys = tape.softmax_rows(xs).unwrap();
        prop_assert!((tape.value(y).sum() - 1.0).abs() < 1e-12);
        prop_assert!(tape.value(y).max_abs_diff(tape.value(ys)) < 1e-12);
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let x = tape
        .leaf(Tensor::matrix(2, 2, vec![3.0, 3.0, -1.0, 1.0]).unwrap())
        .unwrap();
    let g = tape.leaf(Tensor::filled(&[2], 1.0)).unwrap();
    let b = tape.leaf(Tensor::zeros(&[2])).unwrap();
    let y = tape.layer_norm(x, g, b).unwrap();
    let v = tape.value(y);
    assert_eq!(&v.data()[..2], &[0.0, 0.0]);
    assert!((v.get(1, 0) + 1.0).abs() < 1e-4);
    assert!((v.get(1, 1) - 1.0).abs() < 1e-4);
}

#[test]
fn layer_norm_needs_two_columns() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[3, 1])).unwrap();
    let g = tape.leaf(Tensor::filled(&[1], 1.0)).unwrap();
    let b = tape.leaf(Tensor::zeros(&[1])).unwrap();
    assert!(tape.layer_norm(x, g, b).is_err());
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[3], vec![-3.0, 0.0, 2.0]).unwrap()).unwrap();
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

    let z = tape.leaf(Tensor::zeros(&[3])).unwrap();
    let same = tape.mse(x, x).unwrap();
    assert_eq!(tape.value(same).data(), &[0.0]);
    let off = tape.leaf(Tensor::new(&[3], vec![0.1, 0.0, 0.0]).unwrap()).unwrap();
    let e = tape.mse(z, off).unwrap();
    assert!((tape.value(e).data()[0] - 0.01 / 3.0).abs() < 1e-18);

    let s = tape.scale(x, -2.0).unwrap();
    assert_eq!(tape.value(s).data(), &[6.0, -0.0, -4.0]);
    assert!(tape.add(x, r).is_ok());
    let bad = tape.leaf(Tensor::zeros(&[2])).unwrap();
    assert!(tape.add(x, bad).is_err());
    assert!(tape.mse(x, bad).is_err());
}

#[test]
fn non_finite_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(1e300)).unwrap();
    assert!(matches!(
        tape.scale(x, 1e300),
        Err(crate::Error::NonFinite { op: "scale" })
    ));
    assert!(tape.leaf(Tensor::scalar(f64::NAN)).is_err());
}

#[test]
fn grad_check_wrapper_cases() {
    let sq = grad_check(
        |t, x| {
            let y = t.mse(x, x)?;
            let _ = y;
            // x² as mse(x, 0)
            let z = t.leaf(Tensor::scalar(0.0))?;
            t.mse(x, z)
        },
        &Tensor::scalar(3.0),
    )
    .unwrap();
    assert!(sq < 1e-8);

    let lin = grad_check(
        |t, x| {
            let y = t.scale(x, 2.5)?;
            t.sum_all(y)
        },
        &Tensor::new(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap(),
    )
    .unwrap();
    assert!(lin < 1e-9);
}

#[test]
fn x_squared_gradient_is_six() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
    let z = tape.leaf(Tensor::scalar(0.0)).unwrap();
    let y = tape.mse(x, z).unwrap();
    let g = tape.backward(y).unwrap();
    assert!((g.get(x).unwrap().data()[0] - 6.0).abs() < 1e-12);
    assert!((g.get(z).unwrap().data()[0] + 6.0).abs() < 1e-12);
}

type OpFn = fn(&mut Tape, &[Var]) -> crate::Result<Var>;

/// Each op is wrapped into a scalar through a fixed random projection so that
/// every output coordinate contributes a distinct weight.
fn project(t: &mut Tape, v: Var, seed: u64) -> crate::Result<Var> {
    let shape = t.value(v).shape().to_vec();
    let w = randn(&mut rng::rng(seed), &shape);
    let w = t.leaf(w)?;
    let zero = t.leaf(Tensor::zeros(&shape))?;
    let a = t.add(v, w)?;
    t.mse(a, zero)
}

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, 1)
        }),
        ("matmul_nt", vec![vec![3, 4], vec![5, 4]], |t, v| {
            let y = t.matmul_nt(v[0], v[1])?;
            project(t, y, 2)
        }),
        ("add_sub", vec![vec![2, 3], vec![2, 3]], |t, v| {
            let a = t.add(v[0], v[1])?;
            let s = t.sub(a, v[1])?;
            let y = t.sub(s, v[1])?;
            project(t, y, 3)
        }),
        ("add_row", vec![vec![3, 4], vec![4]], |t, v| {
            let y = t.add_row(v[0], v[1])?;
            project(t, y, 4)
        }),
        ("relu", vec![vec![4, 3]], |t, v| {
            let y = t.relu(v[0])?;
            project(t, y, 5)
        }),
        ("scale", vec![vec![4]], |t, v| {
            let y = t.scale(v[0], -1.7)?;
            project(t, y, 6)
        }),
        ("softmax_rows", vec![vec![3, 5]], |t, v| {
            let y = t.softmax_rows(v[0])?;
            project(t, y, 7)
        }),
        ("layer_norm", vec![vec![3, 5], vec![5], vec![5]], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            project(t, y, 8)
        }),
        ("concat_slice", vec![vec![2, 3], vec![2, 2]], |t, v| {
            let c = t.concat_cols(&[v[0], v[1], v[0]])?;
            let y = t.slice_cols(c, 1, 5)?;
            project(t, y, 9)
        }),
        ("concat_rows_repeat", vec![vec![1, 3], vec![2, 3]], |t, v| {
            let r = t.repeat_rows(v[0], 3)?;
            let y = t.concat_rows(&[r, v[1]])?;
            project(t, y, 10)
        }),
        ("reshape_sum", vec![vec![2, 6]], |t, v| {
            let r = t.reshape(v[0], &[4, 3])?;
            let y = t.relu(r)?;
            let s = t.sum_all(y)?;
            let sq = t.mse(s, s)?;
            t.add(s, sq)
        }),
        ("mse", vec![vec![2, 2], vec![2, 2]], |t, v| t.mse(v[0], v[1])),
    ]
}

#[test]
fn every_op_backward_matches_differences_at_100_points() {
    for (name, shapes, f) in op_cases() {
        let mut worst: f64 = 0.0;
        for k in 0..100 {
            let mut r = rng::child(2024, k);
            let pts: Vec<Tensor> = shapes.iter().map(|s| randn(&mut r, s)).collect();
            let rep = grad_check_many(f, &pts).unwrap();
            worst = worst.max(rep.max_rel_error);
        }
        assert!(worst < 1e-4, "{name}: max relative error {worst}");
    }
}

#[test]
fn flops_follow_cost_conventions() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[3, 4])).unwrap();
    let b = tape.leaf(Tensor::zeros(&[4, 5])).unwrap();
    let c = tape.matmul(a, b).unwrap();
    let _ = tape.relu(c).unwrap();
    let _ = tape.softmax_rows(c).unwrap();
    assert_eq!(tape.flops(), 2 * 3 * 4 * 5 + 15 + 4 * 15);
}
