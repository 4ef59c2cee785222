//! Independent reference implementations and model builders shared by the
//! integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use axdse_core::dse::{Direction, Objective};
use axdse_core::model::{ConvGeometry, Padding, PoolGeometry};
use axdse_core::quant::{calibrate, quantize_dataset, quantize_model, FloatLayer, FloatParams};
use axdse_core::{Activation, Dataset, FloatDataset, FloatModel, Layer, NetworkModel};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/digits")
}

// ---------------------------------------------------------------------------
// Naive reference inference. Every layer is evaluated straight from the
// definitions with i64 accumulation and no shared code with the engine.

fn requant(acc: i64, s_in: f64, s_w: f64, s_out: f64, zp_out: i32) -> i8 {
    let r = s_in * s_w / s_out;
    let v = (acc as f64 * r).round_ties_even() + zp_out as f64;
    v.clamp(-128.0, 127.0) as i8
}

fn same_pad(input: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(input);
    (out, total / 2)
}

/// Reference outputs of every layer. `mul` is the product used for each
/// (activation, weight) pair; padded positions feed the input zero point.
pub fn reference_trace(
    model: &NetworkModel,
    input: &[i8],
    mul: &dyn Fn(i8, i8) -> i64,
) -> Vec<Vec<i8>> {
    let mut outs: Vec<Vec<i8>> = Vec::new();
    let mut shape = model.input_shape().to_vec();
    let mut qin = model.input_qparams();
    for layer in model.layers() {
        let x: &[i8] = outs.last().map(|v| v.as_slice()).unwrap_or(input);
        let zx = qin.zero_point as i64;
        let (y, next_shape, next_q) = match layer {
            Layer::Dense {
                in_features,
                out_features,
                params,
            } => {
                let w = params.weights.data();
                let q = params.output_qparams;
                let mut y = Vec::new();
                for o in 0..*out_features {
                    let mut acc = params.bias[o] as i64;
                    for k in 0..*in_features {
                        let wv = w[o * in_features + k];
                        acc += mul(x[k], wv) - zx * wv as i64;
                    }
                    let mut v = requant(
                        acc,
                        qin.scale,
                        params.weights.qparams().scale,
                        q.scale,
                        q.zero_point,
                    );
                    if params.activation == Activation::Relu {
                        v = v.max(q.zero_point as i8);
                    }
                    y.push(v);
                }
                (y, vec![*out_features], q)
            }
            Layer::Conv2D {
                geometry: g,
                params,
            } => {
                let (h, wd, c) = (shape[0], shape[1], shape[2]);
                let (oh, ow, pt, pl) = match g.padding {
                    Padding::Valid => (
                        (h - g.kernel_h) / g.stride + 1,
                        (wd - g.kernel_w) / g.stride + 1,
                        0,
                        0,
                    ),
                    Padding::Same => {
                        let (oh, pt) = same_pad(h, g.kernel_h, g.stride);
                        let (ow, pl) = same_pad(wd, g.kernel_w, g.stride);
                        (oh, ow, pt, pl)
                    }
                };
                let w = params.weights.data();
                let q = params.output_qparams;
                let mut y = Vec::new();
                for oy in 0..oh {
                    for ox in 0..ow {
                        for oc in 0..g.out_channels {
                            let mut acc = params.bias[oc] as i64;
                            for ky in 0..g.kernel_h {
                                for kx in 0..g.kernel_w {
                                    let iy = (oy * g.stride + ky) as i64 - pt as i64;
                                    let ix = (ox * g.stride + kx) as i64 - pl as i64;
                                    let inside = iy >= 0
                                        && ix >= 0
                                        && (iy as usize) < h
                                        && (ix as usize) < wd;
                                    for ic in 0..c {
                                        let xv = if inside {
                                            x[((iy as usize) * wd + ix as usize) * c + ic]
                                        } else {
                                            zx as i8
                                        };
                                        let wv =
                                            w[((oc * g.kernel_h + ky) * g.kernel_w + kx) * c + ic];
                                        acc += mul(xv, wv) - zx * wv as i64;
                                    }
                                }
                            }
                            let mut v = requant(
                                acc,
                                qin.scale,
                                params.weights.qparams().scale,
                                q.scale,
                                q.zero_point,
                            );
                            if params.activation == Activation::Relu {
                                v = v.max(q.zero_point as i8);
                            }
                            y.push(v);
                        }
                    }
                }
                (y, vec![oh, ow, g.out_channels], q)
            }
            Layer::MaxPool2D(p) => {
                let (h, wd, c) = (shape[0], shape[1], shape[2]);
                let oh = (h - p.pool_h) / p.stride + 1;
                let ow = (wd - p.pool_w) / p.stride + 1;
                let mut y = Vec::new();
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut m = i8::MIN;
                            for py in 0..p.pool_h {
                                for px in 0..p.pool_w {
                                    m = m.max(
                                        x[((oy * p.stride + py) * wd + ox * p.stride + px) * c
                                            + ch],
                                    );
                                }
                            }
                            y.push(m);
                        }
                    }
                }
                (y, vec![oh, ow, c], qin)
            }
            Layer::Flatten => (x.to_vec(), vec![x.len()], qin),
            Layer::ReLU => (
                x.iter().map(|&v| v.max(zx as i8)).collect(),
                shape.clone(),
                qin,
            ),
        };
        outs.push(y);
        shape = next_shape;
        qin = next_q;
    }
    outs
}

pub fn exact_mul(a: i8, b: i8) -> i64 {
    a as i64 * b as i64
}

pub fn reference_predict(model: &NetworkModel, input: &[i8], mul: &dyn Fn(i8, i8) -> i64) -> usize {
    let t = reference_trace(model, input, mul);
    let logits = t.last().unwrap();
    let mut best = 0;
    for i in 1..logits.len() {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Brute-force multiplier metrics.

#[derive(Debug, Clone, Copy)]
pub struct OracleMetrics {
    pub mae_pct: f64,
    pub wce_pct: f64,
    pub mre_pct: f64,
    pub ep_pct: f64,
}

pub fn oracle_metrics(mul: impl Fn(i64, i64) -> i64) -> OracleMetrics {
    let mut abs_sum: i128 = 0;
    let mut worst: i64 = 0;
    let mut errors = 0u64;
    let mut rel = 0.0f64;
    let mut rel_n = 0u64;
    for a in -128i64..128 {
        for b in -128i64..128 {
            let exact = a * b;
            let err = (mul(a, b) - exact).abs();
            abs_sum += err as i128;
            worst = worst.max(err);
            errors += (err != 0) as u64;
            if exact != 0 {
                rel += err as f64 / exact.abs() as f64;
                rel_n += 1;
            }
        }
    }
    OracleMetrics {
        mae_pct: abs_sum as f64 / 65536.0 / 16384.0 * 100.0,
        wce_pct: worst as f64 / 16384.0 * 100.0,
        mre_pct: rel / rel_n as f64 * 100.0,
        ep_pct: errors as f64 / 65536.0 * 100.0,
    }
}

/// Operand truncation written arithmetically: floor to a multiple of 2^k.
pub fn trunc_oracle(k: u32) -> impl Fn(i64, i64) -> i64 {
    move |a, b| a.div_euclid(1 << k) * (1 << k) * (b.div_euclid(1 << k) * (1 << k))
}

pub fn rel_close(got: f64, want: f64, tol: f64) -> bool {
    if want == 0.0 {
        got == 0.0
    } else {
        ((got - want) / want).abs() <= tol
    }
}

// ---------------------------------------------------------------------------
// Pareto oracle.

/// Indices of non-dominated points by pairwise comparison.
pub fn pareto_oracle(points: &[Vec<f64>], objectives: &[Objective]) -> Vec<usize> {
    let oriented = |p: &Vec<f64>| -> Vec<f64> {
        objectives
            .iter()
            .enumerate()
            .map(|(i, o)| match o.direction {
                Direction::Minimize => p[i],
                Direction::Maximize => -p[i],
            })
            .collect()
    };
    let v: Vec<Vec<f64>> = points.iter().map(oriented).collect();
    (0..v.len())
        .filter(|&i| {
            !(0..v.len()).any(|j| {
                j != i
                    && v[j].iter().zip(&v[i]).all(|(a, b)| a <= b)
                    && v[j].iter().zip(&v[i]).any(|(a, b)| a < b)
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Model builders. Random float networks are quantized through the regular
// calibration path so their scales are realistic.

fn uniform_params(
    rng: &mut ChaCha8Rng,
    shape: Vec<usize>,
    fan_in: usize,
    channels: usize,
    act: Activation,
) -> FloatParams {
    let a = (6.0 / fan_in as f64).sqrt() as f32;
    let n: usize = shape.iter().product();
    FloatParams {
        activation: act,
        weight_shape: shape,
        weights: (0..n).map(|_| rng.random_range(-a..a)).collect(),
        bias: (0..channels)
            .map(|_| rng.random_range(-0.1f32..0.1))
            .collect(),
    }
}

fn dense(rng: &mut ChaCha8Rng, inp: usize, out: usize, act: Activation) -> FloatLayer {
    Layer::Dense {
        in_features: inp,
        out_features: out,
        params: uniform_params(rng, vec![out, inp], inp, out, act),
    }
}

fn conv(
    rng: &mut ChaCha8Rng,
    k: usize,
    cin: usize,
    cout: usize,
    padding: Padding,
    act: Activation,
) -> FloatLayer {
    Layer::Conv2D {
        geometry: ConvGeometry {
            kernel_h: k,
            kernel_w: k,
            in_channels: cin,
            out_channels: cout,
            stride: 1,
            padding,
        },
        params: uniform_params(rng, vec![cout, k, k, cin], k * k * cin, cout, act),
    }
}

fn pool() -> FloatLayer {
    Layer::MaxPool2D(PoolGeometry {
        pool_h: 2,
        pool_w: 2,
        stride: 2,
    })
}

/// Conv-Pool-Conv-Pool-Flatten-Dense-Dense-Dense on 28x28x1.
pub fn float_lenet(seed: u64) -> FloatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        conv(&mut rng, 5, 1, 6, Padding::Same, Activation::Relu),
        pool(),
        conv(&mut rng, 5, 6, 16, Padding::Valid, Activation::Relu),
        pool(),
        Layer::Flatten,
        dense(&mut rng, 400, 120, Activation::Relu),
        dense(&mut rng, 120, 84, Activation::Relu),
        dense(&mut rng, 84, 10, Activation::None),
    ];
    FloatModel::new("lenet5", vec![28, 28, 1], layers, 10).unwrap()
}

/// Dense 784-64-32-10.
pub fn float_mlp(seed: u64) -> FloatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        dense(&mut rng, 784, 64, Activation::Relu),
        dense(&mut rng, 64, 32, Activation::Relu),
        dense(&mut rng, 32, 10, Activation::None),
    ];
    FloatModel::new("mlp", vec![784], layers, 10).unwrap()
}

pub fn random_float_data(shape: &[usize], n: usize, seed: u64) -> FloatDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per: usize = shape.iter().product();
    let images = (0..n)
        .map(|_| (0..per).map(|_| rng.random_range(0.0f32..1.0)).collect())
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..10)).collect();
    FloatDataset::new(shape.to_vec(), images, labels).unwrap()
}

pub fn quantized(fm: &FloatModel, calib_seed: u64) -> NetworkModel {
    let calib = random_float_data(fm.input_shape(), 64, calib_seed);
    let stats = calibrate(fm, &calib).unwrap();
    quantize_model(fm, &stats).unwrap()
}

pub fn lenet(seed: u64) -> NetworkModel {
    quantized(&float_lenet(seed), seed ^ 0xa5a5)
}

pub fn mlp(seed: u64) -> NetworkModel {
    quantized(&float_mlp(seed), seed ^ 0x5a5a)
}

/// Uniformly random i8 images in the model's input format.
pub fn random_dataset(model: &NetworkModel, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per: usize = model.input_shape().iter().product();
    let data: Vec<i8> = (0..n * per).map(|_| rng.random::<i8>()).collect();
    let labels = (0..n)
        .map(|_| rng.random_range(0..model.num_classes()))
        .collect();
    Dataset::from_flat(
        model.input_shape().to_vec(),
        model.input_qparams(),
        &data,
        labels,
    )
    .unwrap()
}

/// The digits fixture quantized with its calibration split, plus the
/// quantized test split and the float model.
pub fn digits() -> (FloatModel, FloatDataset, NetworkModel, Dataset) {
    let f = fixtures();
    let fm = axdse_core::load_float_model(&f.join("mlp_f32")).unwrap();
    let calib = axdse_core::load_float_dataset(&f.join("calib_f32")).unwrap();
    let test = axdse_core::load_float_dataset(&f.join("test_f32")).unwrap();
    let stats = calibrate(&fm, &calib).unwrap();
    let model = quantize_model(&fm, &stats).unwrap();
    let data = quantize_dataset(&test, model.input_qparams()).unwrap();
    (fm, test, model, data)
}
