use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect(),
    )
    .unwrap()
}

/// Checks the tape gradient of `build(x)` against central differences.
fn check_op<F>(x: &Tensor, build: F) -> f64
where
    F: Fn(&mut Graph, Var) -> Var,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let loss = build(&mut g, xv);
    let grads = g.backward(loss).unwrap();
    let analytic = grads.tensor(xv);
    let fd = finite_diff_gradient(
        |t| {
            let mut g = Graph::new();
            let v = g.constant(t.clone());
            let l = build(&mut g, v);
            g.value(l).item().unwrap()
        },
        x,
        1e-5,
    );
    max_relative_error(analytic.data(), fd.data(), 1e-6)
}

/// Scalar read-out that mixes every element with distinct weights.
fn weighted_sum(g: &mut Graph, y: Var) -> Var {
    let n = g.value(y).numel();
    let shape = g.shape(y).to_vec();
    let w = Tensor::new(shape, (0..n).map(|i| ((i as f64) * 0.7).sin() + 0.3).collect()).unwrap();
    let wv = g.constant(w);
    let p = g.mul(y, wv).unwrap();
    g.sum(p)
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut g = Graph::new();
    let eye = g.constant(Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap());
    let b = g.constant(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
    let c = g.matmul(eye, b).unwrap();
    assert_eq!(g.value(c).data(), &[1., 2., 3., 4.]);

    let a = g.constant(Tensor::new(vec![1, 2], vec![1., 2.]).unwrap());
    let b = g.constant(Tensor::new(vec![2, 1], vec![3., 4.]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[11.]);
}

#[test]
fn matmul_shape_error_reports_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[4, 5], 1.0);
    let b = rand_tensor(&mut rng, &[5, 3], 1.0);
    let build_a = |g: &mut Graph, x: Var| {
        let bv = g.constant(b.clone());
        let c = g.matmul(x, bv).unwrap();
        weighted_sum(g, c)
    };
    let build_b = |g: &mut Graph, x: Var| {
        let av = g.constant(a.clone());
        let c = g.matmul(av, x).unwrap();
        weighted_sum(g, c)
    };
    assert!(check_op(&a, build_a) < 1e-6);
    assert!(check_op(&b, build_b) < 1e-6);
}

fn ln(g: &mut Graph, x: Var, d: usize, eps: f64) -> Var {
    let gain = g.constant(Tensor::ones(&[d]));
    let bias = g.constant(Tensor::zeros(&[d]));
    g.layer_norm(x, gain, bias, eps).unwrap()
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![5.0; 4]));
    let y = ln(&mut g, x, 4, 1e-5);
    assert_eq!(g.value(y).data(), &[0.0; 4]);

    let x = g.constant(Tensor::from_vec(vec![1.0, -1.0]));
    let y = ln(&mut g, x, 2, 1e-14);
    for (a, b) in g.value(y).data().iter().zip([1.0, -1.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_row_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let x = g.constant(rand_tensor(&mut rng, &[16, 32], 10.0));
    let y = ln(&mut g, x, 32, 1e-5);
    for row in g.value(y).data().chunks(32) {
        let mean = row.iter().sum::<f64>() / 32.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-12, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-6, "var {var}");
    }
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[3, 6], 2.0);
    let gain = rand_tensor(&mut rng, &[6], 1.0);
    let bias = rand_tensor(&mut rng, &[6], 1.0);
    let build_x = |g: &mut Graph, v: Var| {
        let gn = g.constant(gain.clone());
        let bs = g.constant(bias.clone());
        let y = g.layer_norm(v, gn, bs, 1e-5).unwrap();
        weighted_sum(g, y)
    };
    assert!(check_op(&x, build_x) < 1e-4);
    let build_gain = |g: &mut Graph, v: Var| {
        let xv = g.constant(x.clone());
        let bs = g.constant(bias.clone());
        let y = g.layer_norm(xv, v, bs, 1e-5).unwrap();
        weighted_sum(g, y)
    };
    assert!(check_op(&gain, build_gain) < 1e-4);
    let build_bias = |g: &mut Graph, v: Var| {
        let xv = g.constant(x.clone());
        let gn = g.constant(gain.clone());
        let y = g.layer_norm(xv, gn, v, 1e-5).unwrap();
        weighted_sum(g, y)
    };
    assert!(check_op(&bias, build_bias) < 1e-4);
}

#[test]
fn softmax_and_activation_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![0.0; 3]));
    let s = g.softmax(x, 0).unwrap();
    for v in g.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant(Tensor::from_vec(vec![1000.0, 0.0]));
    let s = g.softmax(x, 0).unwrap();
    let d = g.value(s).data();
    assert!(d.iter().all(|v| v.is_finite()));
    assert!((d[0] - 1.0).abs() < 1e-15 && d[1] < 1e-300);

    let z = g.constant(Tensor::scalar(0.0));
    let s = g.silu(z);
    assert_eq!(g.value(s).item().unwrap(), 0.0);
    let s = g.gelu(z);
    assert_eq!(g.value(s).item().unwrap(), 0.0);
}

#[test]
fn softmax_invalid_axis() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(
        g.softmax(x, 2),
        Err(TensorError::InvalidAxis { axis: 2, rank: 2, .. })
    ));
    assert!(g.sum_axis(x, 5).is_err());
}

#[test]
fn elementwise_and_structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[3, 4], 1.5);
    let other = rand_tensor(&mut rng, &[3, 4], 1.0);
    let row = rand_tensor(&mut rng, &[4], 1.0);

    type Build = Box<dyn Fn(&mut Graph, Var) -> Var>;
    let cases: Vec<(&str, Build)> = vec![
        ("silu", Box::new(|g, v| { let y = g.silu(v); weighted_sum(g, y) })),
        ("gelu", Box::new(|g, v| { let y = g.gelu(v); weighted_sum(g, y) })),
        ("softmax0", Box::new(|g, v| { let y = g.softmax(v, 0).unwrap(); weighted_sum(g, y) })),
        ("softmax1", Box::new(|g, v| { let y = g.softmax(v, 1).unwrap(); weighted_sum(g, y) })),
        ("mul", Box::new({ let o = other.clone(); move |g, v| { let c = g.constant(o.clone()); let y = g.mul(v, c).unwrap(); weighted_sum(g, y) } })),
        ("mul_bcast", Box::new({ let r = row.clone(); move |g, v| { let c = g.constant(r.clone()); let y = g.mul(c, v).unwrap(); weighted_sum(g, y) } })),
        ("sub", Box::new({ let o = other.clone(); move |g, v| { let c = g.constant(o.clone()); let y = g.sub(c, v).unwrap(); let y = g.mul(y, y).unwrap(); g.sum(y) } })),
        ("scale_offset", Box::new(|g, v| { let y = g.scale(v, -2.5); let y = g.offset(y, 1.0); let y = g.mul(y, y).unwrap(); g.mean(y) })),
        ("sqrt", Box::new(|g, v| { let y = g.mul(v, v).unwrap(); let y = g.offset(y, 0.5); let y = g.sqrt(y); weighted_sum(g, y) })),
        ("sum_axis", Box::new(|g, v| { let y = g.sum_axis(v, 0).unwrap(); let y = g.mul(y, y).unwrap(); g.sum(y) })),
        ("mean_axis", Box::new(|g, v| { let y = g.mean_axis(v, 1).unwrap(); let y = g.mul(y, y).unwrap(); g.sum(y) })),
        ("transpose", Box::new(|g, v| { let y = g.transpose(v).unwrap(); weighted_sum(g, y) })),
        ("matmul_nt", Box::new({ let o = other.clone(); move |g, v| {
            let c = g.constant(o.clone());
            let y = g.matmul_nt(v, c).unwrap();
            let z = g.matmul_nt(c, v).unwrap();
            let y = g.mul(y, z).unwrap();
            weighted_sum(g, y)
        } })),
        ("matmul_nt_self", Box::new(|g, v| { let y = g.matmul_nt(v, v).unwrap(); weighted_sum(g, y) })),
        ("reshape", Box::new(|g, v| { let y = g.reshape(v, &[2, 6]).unwrap(); weighted_sum(g, y) })),
        ("slice_concat", Box::new(|g, v| {
            let p = g.split(v, 1, &[1, 3]).unwrap();
            let y = g.concat(&[p[1], p[0], p[1]], 1).unwrap();
            let y = g.silu(y);
            weighted_sum(g, y)
        })),
        ("repeat", Box::new(|g, v| {
            let r = g.slice(v, 0, 1, 1).unwrap();
            let y = g.repeat_rows(r, 5).unwrap();
            let y = g.gelu(y);
            weighted_sum(g, y)
        })),
        ("add_bcast", Box::new({ let o = other.clone(); move |g, v| {
            let c = g.constant(o.clone());
            let r = g.sum_axis(v, 0).unwrap();
            let y = g.add(c, r).unwrap();
            let y = g.mul(y, y).unwrap();
            g.sum(y)
        } })),
    ];
    for (name, build) in cases {
        let err = check_op(&x, |g, v| build(g, v));
        assert!(err < 1e-4, "{name}: rel err {err}");
    }
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, -2.0, 3.0]));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![0.5, -2.0, 3.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    let l = g.scale(s, 0.5);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[0.5, -2.0, 3.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let y = g.silu(x);
    assert!(matches!(g.backward(y), Err(TensorError::NotScalar(_))));
}

#[test]
fn finite_diff_examples() {
    let x = Tensor::from_vec(vec![0.3, -1.2, 4.0]);
    let g = finite_diff_gradient(|t| t.data().iter().sum(), &x, 1e-5);
    for v in g.data() {
        assert!((v - 1.0).abs() < 1e-9);
    }
    let g = finite_diff_gradient(|t| t.data()[0] * t.data()[0], &Tensor::from_vec(vec![3.0]), 1e-5);
    assert!((g.data()[0] - 6.0).abs() < 1e-8);
}

fn mlp_loss(g: &mut Graph, x: Var, w1: Var, w2: Var) -> Var {
    let h = g.matmul(x, w1).unwrap();
    let h = g.silu(h);
    let y = g.matmul(h, w2).unwrap();
    let y = g.mul(y, y).unwrap();
    g.mean(y)
}

#[test]
fn two_layer_mlp_self_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[5, 4], 1.0);
    let w1 = rand_tensor(&mut rng, &[4, 8], 0.8);
    let w2 = rand_tensor(&mut rng, &[8, 3], 0.8);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w1v = g.param(w1.clone());
    let w2v = g.param(w2.clone());
    let l = mlp_loss(&mut g, xv, w1v, w2v);
    let grads = g.backward(l).unwrap();
    let fd1 = finite_diff_gradient(
        |t| {
            let mut g = Graph::new();
            let (a, b, c) = (g.constant(x.clone()), g.constant(t.clone()), g.constant(w2.clone()));
            let l = mlp_loss(&mut g, a, b, c);
            g.value(l).item().unwrap()
        },
        &w1,
        1e-5,
    );
    let fd2 = finite_diff_gradient(
        |t| {
            let mut g = Graph::new();
            let (a, b, c) = (g.constant(x.clone()), g.constant(w1.clone()), g.constant(t.clone()));
            let l = mlp_loss(&mut g, a, b, c);
            g.value(l).item().unwrap()
        },
        &w2,
        1e-5,
    );
    assert!(max_relative_error(grads.get(w1v).unwrap(), fd1.data(), 1e-8) < 1e-5);
    assert!(max_relative_error(grads.get(w2v).unwrap(), fd2.data(), 1e-8) < 1e-5);
}

#[test]
fn backward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[5, 4], 1.0);
    let w1 = rand_tensor(&mut rng, &[4, 8], 0.8);
    let w2 = rand_tensor(&mut rng, &[8, 3], 0.8);
    let run = || {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let a = g.param(w1.clone());
        let b = g.param(w2.clone());
        let l = mlp_loss(&mut g, xv, a, b);
        let grads = g.backward(l).unwrap();
        (grads.tensor(a), grads.tensor(b))
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a1), bits(&a2));
    assert_eq!(bits(&b1), bits(&b2));
}

proptest! {
    #[test]
    fn softmax_rows_are_probability_vectors(
        vals in proptest::collection::vec(-50.0f64..50.0, 12),
        axis in 0usize..2,
    ) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3, 4], vals).unwrap());
        let s = g.softmax(x, axis).unwrap();
        let d = g.value(s).data().to_vec();
        prop_assert!(d.iter().all(|&v| v >= 0.0));
        let sums: Vec<f64> = if axis == 1 {
            d.chunks(4).map(|r| r.iter().sum()).collect()
        } else {
            (0..4).map(|j| (0..3).map(|i| d[i * 4 + j]).sum()).collect()
        };
        for s in sums {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_statistics_hold_for_random_rows(
        vals in proptest::collection::vec(-100.0f64..100.0, 24),
    ) {
        let spread = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - vals.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 20.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 24], vals).unwrap());
        let y = ln(&mut g, x, 24, 1e-5);
        let d = g.value(y).data();
        let mean = d.iter().sum::<f64>() / 24.0;
        prop_assert!(mean.abs() < 1e-10);
    }
}
