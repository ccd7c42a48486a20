//! Central finite-difference checks of every backward pass, in f64.
//!
//! Each layer is probed through the scalar `L = sum(w * layer(x))` for a fixed
//! random `w`, so the analytic gradient is the layer's backward applied to `w`.
//! Error is `|a - n|_2 / max(|a|_2, |n|_2)` over the whole gradient vector.
//! Shared by the core gradient tests and the acceptance suite.

use fftseg::layers::*;
use fftseg::training::dice_loss;
use fftseg::{Grid4d, Rng, UNet64, UNetConfig};

const H: f64 = 1e-6;
const LAYER_TOL: f64 = 1e-4;
const ELEMENTWISE_TOL: f64 = 1e-7;

fn random(shape: (usize, usize, usize, usize), rng: &mut Rng) -> Grid4d {
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    Grid4d::from_vec(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

fn weighted_sum(y: &Grid4d, w: &Grid4d) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Central differences of `f` at every coordinate of `x`.
fn numeric(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + H;
            let up = f(&probe);
            probe[i] = x[i] - H;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    assert_eq!(a.len(), n.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn assert_close(what: &str, a: &[f64], n: &[f64], tol: f64) {
    let e = rel_error(a, n);
    assert!(e <= tol, "{what}: relative error {e:e} > {tol:e}");
    assert!(n.iter().any(|v| v.abs() > 1e-6), "{what}: degenerate probe, gradient is zero");
}

fn with_data(shape: (usize, usize, usize, usize), data: &[f64]) -> Grid4d {
    Grid4d::from_vec(shape, data.to_vec()).unwrap()
}

fn check_conv(shape: (usize, usize, usize, usize), cout: usize, k: usize, padding: Padding, seed: u64) {
    let mut rng = Rng::new(seed);
    let x = random(shape, &mut rng);
    let p = ConvParams::he_normal(cout, shape.1, k, k, &mut rng).unwrap();
    let (y, tape) = conv2d_forward(&x, &p, padding).unwrap();
    let w = random(y.shape(), &mut rng);
    let g = conv2d_backward(&tape, &p, &w).unwrap();
    let label = format!("conv {shape:?} -> {cout}, k{k}, {padding:?}");

    let n = numeric(x.data(), |d| weighted_sum(&conv2d_forward(&with_data(x.shape(), d), &p, padding).unwrap().0, &w));
    assert_close(&format!("{label} dx"), g.grad_x.data(), &n, LAYER_TOL);

    let wshape = p.weights.shape();
    let n = numeric(p.weights.data(), |d| {
        let q = ConvParams { weights: with_data(wshape, d), bias: p.bias.clone() };
        weighted_sum(&conv2d_forward(&x, &q, padding).unwrap().0, &w)
    });
    assert_close(&format!("{label} dW"), g.grad_w.data(), &n, LAYER_TOL);

    let n = numeric(&p.bias, |d| {
        let q = ConvParams { weights: p.weights.clone(), bias: d.to_vec() };
        weighted_sum(&conv2d_forward(&x, &q, padding).unwrap().0, &w)
    });
    assert_close(&format!("{label} db"), &g.grad_b, &n, LAYER_TOL);
}

pub fn conv_same_and_valid() {
    check_conv((2, 3, 6, 5), 4, 3, Padding::Same, 1);
    check_conv((2, 2, 6, 6), 3, 2, Padding::Same, 2);
    check_conv((1, 3, 5, 5), 2, 1, Padding::Same, 3);
    check_conv((2, 2, 6, 7), 3, 3, Padding::Valid, 4);
    check_conv((1, 2, 5, 5), 2, 2, Padding::Valid, 5);
}

pub fn conv_wide_batch_uses_grouped_gemm() {
    // 40 images of 2x2 pixels span several GEMM groups.
    check_conv((40, 2, 2, 2), 3, 3, Padding::Same, 6);
}

pub fn upconv() {
    let mut rng = Rng::new(7);
    let x = random((2, 3, 3, 4), &mut rng);
    let p = ConvParams::he_normal(2, 3, 2, 2, &mut rng).unwrap();
    let (y, tape) = upconv2x2(&x, &p).unwrap();
    assert_eq!(y.shape(), (2, 2, 6, 8));
    let w = random(y.shape(), &mut rng);
    let g = upconv2x2_backward(&tape, &p, &w).unwrap();

    let n = numeric(x.data(), |d| weighted_sum(&upconv2x2(&with_data(x.shape(), d), &p).unwrap().0, &w));
    assert_close("upconv dx", g.grad_x.data(), &n, LAYER_TOL);
    let n = numeric(p.weights.data(), |d| {
        let q = ConvParams { weights: with_data(p.weights.shape(), d), bias: p.bias.clone() };
        weighted_sum(&upconv2x2(&x, &q).unwrap().0, &w)
    });
    assert_close("upconv dW", g.grad_w.data(), &n, LAYER_TOL);
    let n = numeric(&p.bias, |d| {
        let q = ConvParams { weights: p.weights.clone(), bias: d.to_vec() };
        weighted_sum(&upconv2x2(&x, &q).unwrap().0, &w)
    });
    assert_close("upconv db", &g.grad_b, &n, LAYER_TOL);
}

pub fn maxpool() {
    let mut rng = Rng::new(8);
    let x = random((2, 3, 6, 4), &mut rng);
    let (y, tape) = maxpool2x2(&x).unwrap();
    let w = random(y.shape(), &mut rng);
    let a = maxpool2x2_backward(&tape, &w).unwrap();
    let n = numeric(x.data(), |d| weighted_sum(&maxpool2x2(&with_data(x.shape(), d)).unwrap().0, &w));
    assert_close("maxpool", a.data(), &n, LAYER_TOL);
}

fn check_fft_block(activation: SpectralActivation, seed: u64) {
    let mut rng = Rng::new(seed);
    let x = random((2, 1, 8, 4), &mut rng);
    let p = ConvParams::he_normal(2, 2, 3, 3, &mut rng).unwrap();
    let (y, tape) = fft_input_block_with(&x, &p, activation).unwrap();
    let w = random(y.shape(), &mut rng);
    let g = fft_input_block_backward(&tape, &p, &w).unwrap();
    let run = |x: &Grid4d, p: &ConvParams<f64>| weighted_sum(&fft_input_block_with(x, p, activation).unwrap().0, &w);

    let n = numeric(x.data(), |d| run(&with_data(x.shape(), d), &p));
    assert_close(&format!("fft block {activation:?} dx"), g.grad_x.data(), &n, LAYER_TOL);
    let n = numeric(p.weights.data(), |d| {
        run(&x, &ConvParams { weights: with_data(p.weights.shape(), d), bias: p.bias.clone() })
    });
    assert_close(&format!("fft block {activation:?} dW"), g.grad_w.data(), &n, LAYER_TOL);
    let n = numeric(&p.bias, |d| run(&x, &ConvParams { weights: p.weights.clone(), bias: d.to_vec() }));
    assert_close(&format!("fft block {activation:?} db"), &g.grad_b, &n, LAYER_TOL);
}

pub fn fft_input_block_gradients() {
    check_fft_block(SpectralActivation::Elu, 9);
    check_fft_block(SpectralActivation::Identity, 10);
}

pub fn elementwise_ops() {
    let mut rng = Rng::new(11);
    let x = random((2, 2, 3, 3), &mut rng);
    let w = random(x.shape(), &mut rng);

    let a = elu_backward(&x, &w).unwrap();
    let n = numeric(x.data(), |d| weighted_sum(&elu(&with_data(x.shape(), d)), &w));
    assert_close("elu", a.data(), &n, ELEMENTWISE_TOL);

    let y = sigmoid(&x);
    let a = sigmoid_backward(&y, &w).unwrap();
    let n = numeric(x.data(), |d| weighted_sum(&sigmoid(&with_data(x.shape(), d)), &w));
    assert_close("sigmoid", a.data(), &n, ELEMENTWISE_TOL);

    let seeded = Rng::new(12);
    let (_, tape) = dropout(&x, 0.3, &mut seeded.clone(), true).unwrap();
    let a = dropout_backward(&tape, &w).unwrap();
    let n = numeric(x.data(), |d| weighted_sum(&dropout(&with_data(x.shape(), d), 0.3, &mut seeded.clone(), true).unwrap().0, &w));
    assert_close("dropout", a.data(), &n, ELEMENTWISE_TOL);

    let b = random((2, 3, 3, 3), &mut rng);
    let wc = random((2, 5, 3, 3), &mut rng);
    let (ga, gb) = split_channels(&wc, 2).unwrap();
    let n = numeric(x.data(), |d| weighted_sum(&concat_channels(&with_data(x.shape(), d), &b).unwrap(), &wc));
    assert_close("concat a", ga.data(), &n, ELEMENTWISE_TOL);
    let n = numeric(b.data(), |d| weighted_sum(&concat_channels(&x, &with_data(b.shape(), d)).unwrap(), &wc));
    assert_close("concat b", gb.data(), &n, ELEMENTWISE_TOL);
}

pub fn dice_loss_gradient_4x4() {
    let mut rng = Rng::new(13);
    let p = Grid4d::from_vec((1, 1, 4, 4), (0..16).map(|_| rng.uniform_range(0.05, 0.95)).collect()).unwrap();
    let g = Grid4d::from_vec((1, 1, 4, 4), (0..16).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect()).unwrap();
    let (_, a) = dice_loss(&p, &g).unwrap();
    let n = numeric(p.data(), |d| dice_loss(&with_data(p.shape(), d), &g).unwrap().0);
    for (x, y) in a.data().iter().zip(&n) {
        assert!((x - y).abs() <= ELEMENTWISE_TOL, "dice grad {x} vs {y}");
    }
}

fn check_model(use_fft_input: bool) {
    let cfg = UNetConfig::new(16, 2, 2, use_fft_input, 21);
    let mut model = UNet64::new(cfg).unwrap();
    let mut rng = Rng::new(22);
    let x = Grid4d::from_vec((2, 1, 16, 16), (0..512).map(|_| rng.next_f64()).collect()).unwrap();
    let w = random((2, 1, 16, 16), &mut rng);
    let dropout_rng = Rng::new(23);

    let _ = model.forward(&x, true, &mut dropout_rng.clone()).unwrap();
    let grads = model.backward(&w).unwrap();
    let analytic: Vec<f64> = grads.tensors.concat();
    assert_eq!(analytic.len(), model.parameter_count());

    let flat: Vec<f64> = model.params().concat();
    let lengths: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut probe = model.clone();
    let n = numeric(&flat, |d| {
        let mut rest = d;
        for (dst, &len) in probe.params_mut().into_iter().zip(&lengths) {
            dst.copy_from_slice(&rest[..len]);
            rest = &rest[len..];
        }
        weighted_sum(&probe.forward(&x, true, &mut dropout_rng.clone()).unwrap(), &w)
    });
    assert_close(&format!("model fft={use_fft_input}"), &analytic, &n, LAYER_TOL);

    // Per tensor as well, so a small tensor cannot hide inside the global norm.
    let mut offset = 0;
    for (info, len) in model.manifest().iter().zip(&lengths) {
        let e = rel_error(&analytic[offset..offset + len], &n[offset..offset + len]);
        assert!(e <= LAYER_TOL, "{}: relative error {e:e}", info.name);
        offset += len;
    }
}

pub fn full_model_with_fft_block() {
    check_model(true);
}

pub fn full_model_plain() {
    check_model(false);
}

/// Every check above; panics on the first failure.
pub fn all() {
    conv_same_and_valid();
    conv_wide_batch_uses_grouped_gemm();
    upconv();
    maxpool();
    fft_input_block_gradients();
    elementwise_ops();
    dice_loss_gradient_4x4();
    full_model_with_fft_block();
    full_model_plain();
}
