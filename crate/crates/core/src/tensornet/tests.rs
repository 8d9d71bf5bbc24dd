use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::util::{rng_from_seed, Rng};

fn random_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
    )
    .unwrap()
}

/// Inputs bounded away from zero so ReLU kinks stay out of reach of `h`.
fn kink_free_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor<f64> {
    let mut t = random_tensor(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Loss = sum(output * weights); checks parameter and input gradients
/// against central differences in train mode.
fn grad_check(net: &mut Sequential<f64>, x: &Tensor<f64>, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let y = net.forward(x, Mode::Train).unwrap();
    let w = random_tensor(y.shape().to_vec(), &mut rng);
    let dx = net.backward(&w).unwrap();
    let analytic: Vec<Vec<f64>> = net
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let loss = |net: &mut Sequential<f64>, x: &Tensor<f64>| -> f64 {
        let y = net.forward(x, Mode::Train).unwrap();
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for pi in 0..analytic.len() {
        for j in 0..analytic[pi].len() {
            let orig = net.params()[pi].value.data()[j];
            net.params_mut()[pi].value.data_mut()[j] = orig + h;
            let lp = loss(net, x);
            net.params_mut()[pi].value.data_mut()[j] = orig - h;
            let lm = loss(net, x);
            net.params_mut()[pi].value.data_mut()[j] = orig;
            worst = worst.max(rel_err(analytic[pi][j], (lp - lm) / (2.0 * h)));
        }
    }
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[j] += h;
        let mut xm = x.clone();
        xm.data_mut()[j] -= h;
        let num = (loss(net, &xp) - loss(net, &xm)) / (2.0 * h);
        worst = worst.max(rel_err(dx.data()[j], num));
    }
    worst
}

fn check_layer(input: Vec<usize>, batch: usize, specs: &[LayerSpec], seed: u64) {
    let mut rng = rng_from_seed(seed);
    let mut net = Sequential::<f64>::build(input.clone(), specs, &mut rng).unwrap();
    let mut shape = vec![batch];
    shape.extend(input);
    let x = kink_free_tensor(shape, &mut rng);
    let err = grad_check(&mut net, &x, seed + 1);
    assert!(err < 1e-4, "{specs:?}: max relative error {err}");
}

#[test]
fn dense_gradient_4x3() {
    check_layer(
        vec![4],
        3,
        &[LayerSpec::Dense {
            input: 4,
            output: 3,
        }],
        1,
    );
}

#[test]
fn batch_norm_gradient_batch_8() {
    check_layer(vec![5], 8, &[LayerSpec::BatchNorm { features: 5 }], 2);
    check_layer(vec![3, 2, 2], 4, &[LayerSpec::BatchNorm { features: 3 }], 3);
}

#[test]
fn conv_gradients() {
    check_layer(
        vec![2, 6, 6],
        2,
        &[LayerSpec::Conv2d {
            in_ch: 2,
            out_ch: 3,
            kernel: 3,
            stride: 2,
        }],
        4,
    );
    check_layer(
        vec![2, 5, 5],
        2,
        &[LayerSpec::Conv2d {
            in_ch: 2,
            out_ch: 2,
            kernel: 3,
            stride: 1,
        }],
        5,
    );
    check_layer(
        vec![3, 3, 3],
        2,
        &[LayerSpec::TransposedConv2d {
            in_ch: 3,
            out_ch: 2,
            kernel: 3,
            stride: 2,
        }],
        6,
    );
    check_layer(
        vec![4, 8],
        3,
        &[LayerSpec::Conv1d {
            in_ch: 4,
            out_ch: 3,
            kernel: 3,
            stride: 1,
        }],
        7,
    );
}

#[test]
fn activation_and_shape_gradients() {
    check_layer(vec![6], 3, &[LayerSpec::ReLU], 8);
    check_layer(vec![6], 3, &[LayerSpec::Sigmoid], 9);
    check_layer(vec![6], 3, &[LayerSpec::Softmax], 10);
    check_layer(
        vec![2, 3, 2],
        2,
        &[LayerSpec::Flatten, LayerSpec::Reshape { shape: vec![3, 4] }],
        11,
    );
    check_layer(vec![3, 5], 2, &[LayerSpec::GlobalAvgPool1d], 12);
}

#[test]
fn stacked_network_gradient() {
    let specs = [
        LayerSpec::Conv2d {
            in_ch: 2,
            out_ch: 3,
            kernel: 3,
            stride: 2,
        },
        LayerSpec::BatchNorm { features: 3 },
        LayerSpec::Sigmoid,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            input: 12,
            output: 4,
        },
        LayerSpec::BatchNorm { features: 4 },
        LayerSpec::Dense {
            input: 4,
            output: 3,
        },
    ];
    check_layer(vec![2, 4, 4], 4, &specs, 13);
}

#[test]
fn identity_dense_is_identity() {
    let mut rng = rng_from_seed(0);
    let mut d = Dense::<f64>::new(3, 3, &mut rng).unwrap();
    d.weight_mut()
        .data_mut()
        .copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    d.bias_mut().data_mut().fill(0.0);
    let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -0.25]).unwrap();
    assert_eq!(d.infer(&x).unwrap(), x);
}

#[test]
fn relu_zeroes_negatives() {
    let x = Tensor::<f32>::new(vec![1, 4], vec![-1.0, -0.5, -3.0, -1e-3]).unwrap();
    assert!(Relu::default()
        .infer(&x)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn conv_ones_kernel_sums_neighbourhood() {
    // Same padding: interior outputs see the full 3x3 window, edges fewer.
    let mut rng = rng_from_seed(0);
    let mut conv = Conv2d::<f64>::new(1, 1, (3, 3), (1, 1), &mut rng).unwrap();
    conv.params_mut()[0].value.data_mut().fill(1.0);
    let x = Tensor::new(vec![1, 1, 5, 5], vec![1.0; 25]).unwrap();
    let y = conv.infer(&x).unwrap();
    assert_eq!(y.shape(), &[1, 1, 5, 5]);
    for r in 1..4 {
        for c in 1..4 {
            assert_eq!(y.data()[r * 5 + c], 9.0);
        }
    }
    assert_eq!(y.data()[0], 4.0);
    assert_eq!(y.data()[2], 6.0);
}

#[test]
fn strided_shapes_halve_and_double() {
    let mut rng = rng_from_seed(0);
    let net = Sequential::<f32>::build(
        vec![4, 32, 32],
        &[
            LayerSpec::Conv2d {
                in_ch: 4,
                out_ch: 8,
                kernel: 3,
                stride: 2,
            },
            LayerSpec::Conv2d {
                in_ch: 8,
                out_ch: 8,
                kernel: 3,
                stride: 2,
            },
            LayerSpec::TransposedConv2d {
                in_ch: 8,
                out_ch: 4,
                kernel: 3,
                stride: 2,
            },
        ],
        &mut rng,
    )
    .unwrap();
    assert_eq!(net.output_shape(), &[4, 16, 16]);
    let bad = Sequential::<f32>::build(
        vec![3],
        &[LayerSpec::Dense {
            input: 4,
            output: 2,
        }],
        &mut rng,
    );
    assert!(matches!(bad, Err(NetError::ShapeMismatch(_))));
}

#[test]
fn zero_loss_gradient_gives_zero_parameter_gradients() {
    let mut rng = rng_from_seed(5);
    let mut net = Sequential::<f64>::build(
        vec![3],
        &[
            LayerSpec::Dense {
                input: 3,
                output: 4,
            },
            LayerSpec::BatchNorm { features: 4 },
            LayerSpec::ReLU,
        ],
        &mut rng,
    )
    .unwrap();
    let x = random_tensor(vec![4, 3], &mut rng);
    let y = net.forward(&x, Mode::Train).unwrap();
    net.backward(&Tensor::zeros(y.shape().to_vec())).unwrap();
    assert!(net
        .params()
        .iter()
        .all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
}

#[test]
fn backward_needs_train_forward() {
    let mut rng = rng_from_seed(5);
    let mut net = Sequential::<f64>::build(
        vec![3],
        &[LayerSpec::Dense {
            input: 3,
            output: 2,
        }],
        &mut rng,
    )
    .unwrap();
    let x = random_tensor(vec![2, 3], &mut rng);
    net.forward(&x, Mode::Eval).unwrap();
    assert!(matches!(
        net.backward(&Tensor::zeros(vec![2, 2])),
        Err(NetError::NoCachedForward)
    ));
}

#[test]
fn non_finite_input_is_rejected() {
    let mut rng = rng_from_seed(5);
    let net = Sequential::<f32>::build(vec![2], &[LayerSpec::ReLU], &mut rng).unwrap();
    let x = Tensor::new(vec![1, 2], vec![f32::NAN, 0.0]).unwrap();
    assert!(matches!(net.infer(&x), Err(NetError::NonFiniteValue(_))));
}

#[test]
fn batch_norm_eval_is_affine() {
    let mut rng = rng_from_seed(9);
    let mut net =
        Sequential::<f64>::build(vec![3], &[LayerSpec::BatchNorm { features: 3 }], &mut rng)
            .unwrap();
    for _ in 0..5 {
        net.forward(&random_tensor(vec![6, 3], &mut rng), Mode::Train)
            .unwrap();
    }
    let a = random_tensor(vec![1, 3], &mut rng);
    let b = random_tensor(vec![1, 3], &mut rng);
    let fa = net.infer(&a).unwrap();
    let fb = net.infer(&b).unwrap();
    let mid = Tensor::new(
        vec![1, 3],
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| 0.5 * (x + y))
            .collect(),
    )
    .unwrap();
    let fm = net.infer(&mid).unwrap();
    for i in 0..3 {
        assert!((fm.data()[i] - 0.5 * (fa.data()[i] + fb.data()[i])).abs() < 1e-12);
    }
}

fn train_run(seed: u64) -> Vec<f32> {
    let mut rng = rng_from_seed(seed);
    let mut net = Sequential::<f32>::build(
        vec![4],
        &[
            LayerSpec::Dense {
                input: 4,
                output: 8,
            },
            LayerSpec::BatchNorm { features: 8 },
            LayerSpec::ReLU,
            LayerSpec::Dense {
                input: 8,
                output: 3,
            },
        ],
        &mut rng,
    )
    .unwrap();
    let mut adam = AdamState::default();
    let x = Tensor::<f32>::new(
        vec![6, 4],
        (0..24).map(|i| (i as f32 * 0.37).sin()).collect(),
    )
    .unwrap();
    let labels = [0, 1, 2, 0, 1, 2];
    for _ in 0..100 {
        let y = net.forward(&x, Mode::Train).unwrap();
        let (_, g) = cross_entropy(&y, &labels).unwrap();
        net.backward(&g).unwrap();
        adam.step(&mut net.params_mut()).unwrap();
    }
    net.params()
        .iter()
        .flat_map(|p| p.value.data().to_vec())
        .collect()
}

#[test]
fn training_is_bit_reproducible() {
    let a = train_run(3);
    let b = train_run(3);
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = rng_from_seed(11);
    let mut net = Sequential::<f32>::build(
        vec![2, 4, 4],
        &[
            LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 3,
                kernel: 3,
                stride: 2,
            },
            LayerSpec::BatchNorm { features: 3 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                input: 12,
                output: 2,
            },
        ],
        &mut rng,
    )
    .unwrap();
    let x = random_tensor(vec![3, 2, 4, 4], &mut rng).convert::<f32>();
    net.forward(&x, Mode::Train).unwrap();
    let ckpt = Checkpoint::new("test", "abc", serde_json::json!({"d": 2}), &[("net", &net)]);
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &ckpt, &[&net]).unwrap();
    assert_eq!(&buf[..4], b"NAVW");
    let (back, nets) = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(nets[0].infer(&x).unwrap(), net.infer(&x).unwrap());
    assert!(read_checkpoint(&buf[..buf.len() - 2]).is_err());
    assert!(read_checkpoint(&b"NAVD\x01\0\0\0"[..]).is_err());
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(values in proptest::collection::vec(-15.0f64..15.0, 2..12)) {
        let n = values.len();
        let x = Tensor::new(vec![1, n], values).unwrap();
        let y = Softmax::default().infer(&x).unwrap();
        let sum: f64 = y.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
