//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls into the code path it checks: the elastic oracle
//! integrates Hankel transforms numerically, the metric oracles are plain
//! loops over nested `Vec`s, and the gradient oracle uses finite differences.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Bessel function of the first kind via the periodic integral
/// `J_n(x) = 1/(2 pi) * int_0^{2 pi} cos(n t - x sin t) dt`, evaluated with
/// the trapezoidal rule (spectrally accurate for periodic integrands).
pub fn bessel_j(order: u32, x: f64) -> f64 {
    let nodes = 64 + 2 * x.abs().ceil() as usize;
    let h = 2.0 * PI / nodes as f64;
    let sum: f64 = (0..nodes)
        .map(|k| {
            let t = k as f64 * h;
            (order as f64 * t - x * t.sin()).cos()
        })
        .sum();
    sum / nodes as f64
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Radial and vertical displacement of the elastic half-space under a unit-free
/// point load `force_n` at the origin, from the Hankel-transform representation
///
/// `u_z = C int_0^inf (2(1-nu) + k z) e^{-kz} J0(kr) dk`
/// `u_r = C int_0^inf (k z - (1-2nu)) e^{-kz} J1(kr) dk`
///
/// with `C = F (1+nu) / (2 pi E)`.
pub fn half_space_quadrature(r: f64, z: f64, force_n: f64, e_kpa: f64, nu: f64) -> (f64, f64) {
    let e = e_kpa * 1e-3;
    let c = force_n * (1.0 + nu) / (2.0 * PI * e);
    let k_max = 45.0 / z;
    let intervals = 40_000;
    let uz = simpson(
        |k| (2.0 * (1.0 - nu) + k * z) * (-k * z).exp() * bessel_j(0, k * r),
        0.0,
        k_max,
        intervals,
    );
    let ur = simpson(
        |k| (k * z - (1.0 - 2.0 * nu)) * (-k * z).exp() * bessel_j(1, k * r),
        0.0,
        k_max,
        intervals,
    );
    (c * ur, c * uz)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

// ---- metric oracles on nested vectors ----

fn argmax_abs(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

pub fn brute_armse(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> f64 {
    let n = truth[0].len();
    let samples = truth.len() as f64;
    let mut total = 0.0;
    for i in 0..n {
        let mut sq = 0.0;
        for l in 0..truth.len() {
            sq += (truth[l][i] - pred[l][i]).powi(2);
        }
        total += (sq / samples).sqrt();
    }
    total / n as f64
}

pub fn brute_bin_center(k: usize, n: usize, side: f64) -> (f64, f64) {
    let g = (n as f64).sqrt().round() as usize;
    let pitch = side / g as f64;
    let row = k / g;
    let col = k % g;
    ((col as f64 + 0.5) * pitch, (row as f64 + 0.5) * pitch)
}

pub fn brute_d_loc(truth: &[Vec<f64>], pred: &[Vec<f64>], n: usize, side: f64) -> f64 {
    let mut total = 0.0;
    for (t, p) in truth.iter().zip(pred) {
        let a = brute_bin_center(argmax_abs(t), n, side);
        let b = brute_bin_center(argmax_abs(p), n, side);
        total += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    }
    total / truth.len() as f64
}

pub fn brute_rmse_mc(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> f64 {
    let mut sq = 0.0;
    for (t, p) in truth.iter().zip(pred) {
        sq += (t[argmax_abs(t)] - p[argmax_abs(p)]).powi(2);
    }
    (sq / truth.len() as f64).sqrt()
}

pub fn brute_srmse(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> f64 {
    let mut sq = 0.0;
    let mut count = 0usize;
    for (t, p) in truth.iter().zip(pred) {
        for i in 0..t.len() {
            if t[i] != 0.0 {
                sq += (t[i] - p[i]).powi(2);
                count += 1;
            }
        }
    }
    (sq / count as f64).sqrt()
}

// ---- finite-difference gradient oracle ----

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactsim::nn::{Activation, MlpModel};

/// The 8 -> 5 -> 4 -> 3 toy network with 1e-2-scale weights and biases, a
/// 6-sample batch and O(1) targets.
pub fn gradient_toy(activation: Activation, seed: u64) -> (MlpModel<f64>, Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel::<f64>::new(8, &[5, 4], 3, activation, seed).unwrap();
    for layer in &mut model.layers {
        layer.weights.mapv_inplace(|_| rng.gen_range(-0.02..0.02));
        layer.bias.mapv_inplace(|_| rng.gen_range(-0.02..0.02));
    }
    let x = Array2::from_shape_simple_fn((6, 8), || rng.gen_range(-1.0..1.0));
    let y = Array2::from_shape_simple_fn((6, 3), || rng.gen_range(-1.0..1.0));
    (model, x, y)
}

/// Largest relative disagreement between backprop and central differences
/// (step `h`) over `probes` random parameters. Magnitudes below `floor` are
/// compared absolutely.
pub fn gradient_check(
    model: &MlpModel<f64>,
    x: &Array2<f64>,
    y: &Array2<f64>,
    probes: usize,
    h: f64,
    floor: f64,
    seed: u64,
) -> f64 {
    let grads = model.gradients(x.view(), y.view()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let k = rng.gen_range(0..model.layers.len());
        let (rows, cols) = model.layers[k].weights.dim();
        let pick = rng.gen_range(0..rows * cols + cols);
        let mut plus = model.clone();
        let mut minus = model.clone();
        let analytic = if pick < rows * cols {
            let (i, j) = (pick / cols, pick % cols);
            plus.layers[k].weights[[i, j]] += h;
            minus.layers[k].weights[[i, j]] -= h;
            grads.weights[k].as_ref().unwrap()[[i, j]]
        } else {
            let j = pick - rows * cols;
            plus.layers[k].bias[j] += h;
            minus.layers[k].bias[j] -= h;
            grads.bias[k].as_ref().unwrap()[j]
        };
        let numeric =
            (plus.loss(x.view(), y.view()).unwrap() - minus.loss(x.view(), y.view()).unwrap()) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}
