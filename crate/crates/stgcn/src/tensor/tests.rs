use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

#[test]
fn matmul_identity_returns_input() {
    let mut tape = Tape::new();
    let eye = tape.leaf(
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        vec![3, 3],
    );
    let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![3, 2]);
    let y = tape.matmul(&eye, &x).unwrap();
    assert_eq!(tape.value(&y), tape.value(&x));
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![0.0; 6], vec![2, 3]);
    let y = tape.sigmoid(&x).unwrap();
    assert!(tape.value(&y).iter().all(|&v| v == 0.5));
}

#[test]
fn conv1d_valid_shrinks_by_kernel_minus_one() {
    let mut r = rng(7);
    let mut tape = Tape::new();
    let u = tape.leaf(rand_vec(&mut r, 512, -1.0, 1.0), vec![1, 512, 1]);
    let k = tape.leaf(rand_vec(&mut r, 5, -1.0, 1.0), vec![5, 1, 1]);
    let y = tape.conv1d_valid(&u, &k).unwrap();
    assert_eq!(y.shape(), &[1, 508, 1]);
}

#[test]
fn conv1d_matches_sliding_dot_product() {
    // Naive per-entry oracle, independent of the vectorized loops.
    let mut r = rng(11);
    let (n, len, c_in, k, c_out) = (3, 8, 2, 5, 2);
    let sig = rand_vec(&mut r, n * len * c_in, -1.0, 1.0);
    let ker = rand_vec(&mut r, k * c_in * c_out, -1.0, 1.0);

    let mut tape = Tape::new();
    let s = tape.leaf(sig.clone(), vec![n, len, c_in]);
    let w = tape.leaf(ker.clone(), vec![k, c_in, c_out]);
    let y = tape.conv1d_valid(&s, &w).unwrap();

    let t_out = len - k + 1;
    for nn in 0..n {
        for t in 0..t_out {
            for o in 0..c_out {
                let mut want = 0.0;
                for kk in 0..k {
                    for i in 0..c_in {
                        want += sig[(nn * len + t + kk) * c_in + i] * ker[(kk * c_in + i) * c_out + o];
                    }
                }
                let got = tape.value(&y)[(nn * t_out + t) * c_out + o];
                assert!((got - want).abs() < 1e-12, "({nn},{t},{o}): {got} vs {want}");
            }
        }
    }
}

#[test]
fn backward_sum_gives_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![4.0, -1.0, 0.5], vec![3]);
    let loss = tape.sum(&x).unwrap();
    tape.backward(&loss).unwrap();
    assert_eq!(tape.grad(&x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_sum_of_squares() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0, 3.0], vec![3]);
    let sq = tape.mul(&x, &x).unwrap();
    let loss = tape.sum(&sq).unwrap();
    tape.backward(&loss).unwrap();
    assert_eq!(tape.grad(&x).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0], vec![2]);
    let err = tape.backward(&x).unwrap_err();
    assert!(matches!(err, TensorError::NonScalarLoss { numel: 2 }));
}

#[test]
fn fanout_accumulates_gradients() {
    // y = x + x consumes x twice; d(sum y)/dx = 2.
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0], vec![2]);
    let y = tape.add(&x, &x).unwrap();
    let loss = tape.sum(&y).unwrap();
    tape.backward(&loss).unwrap();
    assert_eq!(tape.grad(&x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn unreachable_leaf_gets_zero_grad() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0], vec![2]);
    let unused = tape.leaf(vec![5.0], vec![1]);
    let loss = tape.sum(&x).unwrap();
    tape.backward(&loss).unwrap();
    assert_eq!(tape.grad(&unused).unwrap(), &[0.0]);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(vec![0.0; 6], vec![2, 3]);
    let b = tape.leaf(vec![0.0; 6], vec![3, 2]);
    let err = tape.add(&a, &b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("add"), "{msg}");
    assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
}

#[test]
fn matmul_inner_dim_mismatch_errors() {
    let mut tape = Tape::new();
    let a = tape.leaf(vec![0.0; 6], vec![2, 3]);
    let b = tape.leaf(vec![0.0; 8], vec![4, 2]);
    assert!(tape.matmul(&a, &b).is_err());
}

#[test]
fn forward_is_deterministic_bitwise() {
    let run = || {
        let mut r = rng(99);
        let mut tape = Tape::new();
        let a = tape.leaf(rand_vec(&mut r, 12, -3.0, 3.0), vec![3, 4]);
        let b = tape.leaf(rand_vec(&mut r, 20, -3.0, 3.0), vec![4, 5]);
        let y = tape.matmul(&a, &b).unwrap();
        let s = tape.sigmoid(&y).unwrap();
        tape.value(&s).iter().map(|v| v.to_bits()).collect::<Vec<u64>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn grad_check_sum_is_exact() {
    let err = grad_check(
        &|tape: &mut Tape, x: &Tensor| tape.sum(x),
        &[0.3, -1.2, 2.0, 0.0],
        &[4],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-8, "err = {err}");
}

#[test]
fn grad_check_sigmoid_sum() {
    let mut r = rng(3);
    let x = rand_vec(&mut r, 10, -2.0, 2.0);
    let err = grad_check(
        &|tape: &mut Tape, x: &Tensor| {
            let s = tape.sigmoid(x)?;
            tape.sum(&s)
        },
        &x,
        &[10],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "err = {err}");
}

#[test]
fn grad_check_three_layer_composite() {
    // sigmoid(matmul) -> mul -> mean: three chained primitives.
    let mut r = rng(17);
    let w = rand_vec(&mut r, 12, -1.0, 1.0);
    let x = rand_vec(&mut r, 8, -1.0, 1.0);
    let f = move |tape: &mut Tape, x: &Tensor| {
        let w = tape.leaf(w.clone(), vec![4, 3]);
        let h = tape.matmul(x, &w)?;
        let s = tape.sigmoid(&h)?;
        let q = tape.mul(&s, &s)?;
        tape.mean(&q)
    };
    let err = grad_check(&f, &x, &[2, 4], 1e-5).unwrap();
    assert!(err <= 1e-4, "err = {err}");
}

/// Every primitive, gradient-checked against central differences at 100
/// random points, through each differentiable input in turn.
#[test]
fn every_primitive_grad_checks() {
    type Case = (&'static str, Vec<usize>, Box<dyn Fn(&mut Tape, &Tensor) -> Result<Tensor, TensorError>>);

    let mut r = rng(123);
    let aux1 = rand_vec(&mut r, 12, -2.0, 2.0);
    let aux2 = rand_vec(&mut r, 12, -2.0, 2.0);
    let ker = rand_vec(&mut r, 3 * 2 * 2, -1.0, 1.0);
    let sig = rand_vec(&mut r, 2 * 6 * 2, -1.0, 1.0);
    let prop = Arc::new(vec![0.5, 0.5, 0.5, 0.5]);
    let theta = rand_vec(&mut r, 2 * 3, -1.0, 1.0);
    let h_in = rand_vec(&mut r, 2 * 4 * 2, -1.0, 1.0);
    let gain = rand_vec(&mut r, 3, 0.5, 1.5);
    let bias = rand_vec(&mut r, 3, -0.5, 0.5);
    let mask = Arc::new(vec![2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0]);
    let vecb = rand_vec(&mut r, 4, -1.0, 1.0);

    let cases: Vec<Case> = vec![
        ("add", vec![3, 4], {
            let aux = aux1.clone();
            Box::new(move |t, x| {
                let b = t.leaf(aux.clone(), vec![3, 4]);
                let y = t.add(x, &b)?;
                t.sum(&y)
            })
        }),
        ("sub", vec![3, 4], {
            let aux = aux1.clone();
            Box::new(move |t, x| {
                let b = t.leaf(aux.clone(), vec![3, 4]);
                let y = t.sub(&b, x)?;
                t.sum(&y)
            })
        }),
        ("mul", vec![3, 4], {
            let aux = aux2.clone();
            Box::new(move |t, x| {
                let b = t.leaf(aux.clone(), vec![3, 4]);
                let y = t.mul(x, &b)?;
                t.sum(&y)
            })
        }),
        ("scale", vec![3, 4], Box::new(|t, x| {
            let y = t.scale(x, -1.7)?;
            t.sum(&y)
        })),
        ("matmul_lhs", vec![3, 4], {
            let aux = aux1.clone();
            Box::new(move |t, x| {
                let b = t.leaf(aux.clone(), vec![4, 3]);
                let y = t.matmul(x, &b)?;
                t.sum(&y)
            })
        }),
        ("matmul_rhs", vec![4, 3], {
            let aux = aux1.clone();
            Box::new(move |t, x| {
                let a = t.leaf(aux.clone(), vec![3, 4]);
                let y = t.matmul(&a, x)?;
                t.sum(&y)
            })
        }),
        ("sigmoid", vec![3, 4], Box::new(|t, x| {
            let y = t.sigmoid(x)?;
            t.sum(&y)
        })),
        ("relu", vec![3, 4], Box::new(|t, x| {
            let y = t.relu(x)?;
            t.sum(&y)
        })),
        ("sum", vec![12], Box::new(|t, x| t.sum(x))),
        ("mean", vec![12], Box::new(|t, x| t.mean(x))),
        ("conv1d_signal", vec![2, 6, 2], {
            let ker = ker.clone();
            Box::new(move |t, x| {
                let w = t.leaf(ker.clone(), vec![3, 2, 2]);
                let y = t.conv1d_valid(x, &w)?;
                t.sum(&y)
            })
        }),
        ("conv1d_kernel", vec![3, 2, 2], {
            let sig = sig.clone();
            Box::new(move |t, x| {
                let s = t.leaf(sig.clone(), vec![2, 6, 2]);
                let y = t.conv1d_valid(&s, x)?;
                t.sum(&y)
            })
        }),
        ("slice_last", vec![3, 4], Box::new(|t, x| {
            let y = t.slice_last(x, 1, 3)?;
            t.sum(&y)
        })),
        ("spatial_conv_h", vec![2, 4, 2], {
            let (prop, theta) = (prop.clone(), theta.clone());
            Box::new(move |t, x| {
                let th = t.leaf(theta.clone(), vec![2, 3]);
                let y = t.spatial_conv(x, &th, prop.clone())?;
                t.sum(&y)
            })
        }),
        ("spatial_conv_theta", vec![2, 3], {
            let (prop, h_in) = (prop.clone(), h_in.clone());
            Box::new(move |t, x| {
                let h = t.leaf(h_in.clone(), vec![2, 4, 2]);
                let y = t.spatial_conv(&h, x, prop.clone())?;
                t.sum(&y)
            })
        }),
        ("layer_norm_input", vec![4, 3], {
            let (gain, bias) = (gain.clone(), bias.clone());
            Box::new(move |t, x| {
                let g = t.leaf(gain.clone(), vec![3]);
                let b = t.leaf(bias.clone(), vec![3]);
                let y = t.layer_norm(x, &g, &b, 1e-5)?;
                let sq = t.mul(&y, &y)?;
                t.sum(&sq)
            })
        }),
        ("layer_norm_gain", vec![3], {
            let (h_in, bias) = (aux1.clone(), bias.clone());
            Box::new(move |t, x| {
                let h = t.leaf(h_in.clone(), vec![4, 3]);
                let b = t.leaf(bias.clone(), vec![3]);
                let y = t.layer_norm(&h, x, &b, 1e-5)?;
                let sq = t.mul(&y, &y)?;
                t.sum(&sq)
            })
        }),
        ("layer_norm_bias", vec![3], {
            let (h_in, gain) = (aux1.clone(), gain.clone());
            Box::new(move |t, x| {
                let h = t.leaf(h_in.clone(), vec![4, 3]);
                let g = t.leaf(gain.clone(), vec![3]);
                let y = t.layer_norm(&h, &g, x, 1e-5)?;
                let sq = t.mul(&y, &y)?;
                t.sum(&sq)
            })
        }),
        ("mul_mask", vec![3, 4], {
            let mask = mask.clone();
            Box::new(move |t, x| {
                let y = t.mul_mask(x, mask.clone())?;
                t.sum(&y)
            })
        }),
        ("mean_over_time", vec![2, 3, 2], Box::new(|t, x| {
            let y = t.mean_over_time(x)?;
            let sq = t.mul(&y, &y)?;
            t.sum(&sq)
        })),
        ("reshape", vec![3, 4], Box::new(|t, x| {
            let y = t.reshape(x, vec![2, 6])?;
            let sq = t.mul(&y, &y)?;
            t.sum(&sq)
        })),
        ("add_row_broadcast_m", vec![3, 4], {
            let vecb = vecb.clone();
            Box::new(move |t, x| {
                let v = t.leaf(vecb.clone(), vec![4]);
                let y = t.add_row_broadcast(x, &v)?;
                let sq = t.mul(&y, &y)?;
                t.sum(&sq)
            })
        }),
        ("add_row_broadcast_v", vec![4], {
            let m = aux1.clone();
            Box::new(move |t, x| {
                let mt = t.leaf(m.clone(), vec![3, 4]);
                let y = t.add_row_broadcast(&mt, x)?;
                let sq = t.mul(&y, &y)?;
                t.sum(&sq)
            })
        }),
        ("softmax_cross_entropy", vec![5], Box::new(|t, x| t.softmax_cross_entropy(x, 2))),
    ];

    let points_per_case = 100;
    for (name, shape, f) in &cases {
        let numel: usize = shape.iter().product();
        let mut worst: f64 = 0.0;
        for p in 0..points_per_case {
            let mut pr = rng(1000 + p as u64);
            // Keep relu inputs away from the kink at 0.
            let x: Vec<f64> = rand_vec(&mut pr, numel, 0.05, 2.0)
                .iter()
                .enumerate()
                .map(|(i, v)| if i % 2 == 0 { *v } else { -*v })
                .collect();
            let err = grad_check(f, &x, shape, 1e-5).unwrap();
            worst = worst.max(err);
        }
        assert!(worst <= 1e-4, "{name}: max grad_check error {worst}");
    }
}

#[test]
fn softmax_cross_entropy_label_out_of_range() {
    let mut tape = Tape::new();
    let logits = tape.leaf(vec![0.0; 3], vec![3]);
    let err = tape.softmax_cross_entropy(&logits, 3).unwrap_err();
    assert!(matches!(err, TensorError::LabelOutOfRange { label: 3, classes: 3 }));
}

#[test]
fn shared_leaf_does_not_copy() {
    let buf = Arc::new(vec![1.0, 2.0, 3.0]);
    let mut tape = Tape::new();
    let x = tape.leaf_shared(buf.clone(), vec![3]);
    assert_eq!(tape.value(&x), &[1.0, 2.0, 3.0]);
    assert_eq!(Arc::strong_count(&buf), 2);
}
