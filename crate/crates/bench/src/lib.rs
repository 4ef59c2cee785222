//! Benchmark fixtures: small random networks quantized through the normal
//! calibration path, and random objective vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use axdse_core::dse::{ObjectiveField, ObjectiveValues};
use axdse_core::model::{ConvGeometry, Padding, PoolGeometry};
use axdse_core::quant::{calibrate, quantize_dataset, quantize_model, FloatLayer, FloatParams};
use axdse_core::{Activation, Dataset, FloatDataset, FloatModel, Layer, NetworkModel};

fn params(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, act: Activation) -> FloatParams {
    let a = (6.0 / fan_in as f32).sqrt();
    let n = shape.iter().product();
    let channels = shape[0];
    FloatParams {
        activation: act,
        weight_shape: shape,
        weights: (0..n).map(|_| rng.random_range(-a..a)).collect(),
        bias: (0..channels).map(|_| rng.random_range(-0.1..0.1)).collect(),
    }
}

fn dense(rng: &mut ChaCha8Rng, i: usize, o: usize, act: Activation) -> FloatLayer {
    Layer::Dense {
        in_features: i,
        out_features: o,
        params: params(rng, vec![o, i], i, act),
    }
}

fn conv(rng: &mut ChaCha8Rng, cin: usize, cout: usize, padding: Padding) -> FloatLayer {
    Layer::Conv2D {
        geometry: ConvGeometry {
            kernel_h: 5,
            kernel_w: 5,
            in_channels: cin,
            out_channels: cout,
            stride: 1,
            padding,
        },
        params: params(rng, vec![cout, 5, 5, cin], 25 * cin, Activation::Relu),
    }
}

fn pool() -> FloatLayer {
    Layer::MaxPool2D(PoolGeometry {
        pool_h: 2,
        pool_w: 2,
        stride: 2,
    })
}

fn finish(fm: FloatModel, images: usize, seed: u64) -> (NetworkModel, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per: usize = fm.input_shape().iter().product();
    let imgs: Vec<Vec<f32>> = (0..images)
        .map(|_| (0..per).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let labels = (0..images).map(|_| rng.random_range(0..10)).collect();
    let fd = FloatDataset::new(fm.input_shape().to_vec(), imgs, labels).expect("valid dataset");
    let model =
        quantize_model(&fm, &calibrate(&fm, &fd).expect("calibration")).expect("quantization");
    let data = quantize_dataset(&fd, model.input_qparams()).expect("dataset");
    (model, data)
}

/// 784-64-32-10 MLP with `images` random inputs.
pub fn mlp(images: usize, seed: u64) -> (NetworkModel, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        dense(&mut rng, 784, 64, Activation::Relu),
        dense(&mut rng, 64, 32, Activation::Relu),
        dense(&mut rng, 32, 10, Activation::None),
    ];
    let fm = FloatModel::new("bench-mlp", vec![784], layers, 10).expect("valid model");
    finish(fm, images, seed + 1)
}

/// LeNet-5 shaped network on 28x28x1.
pub fn lenet(images: usize, seed: u64) -> (NetworkModel, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        conv(&mut rng, 1, 6, Padding::Same),
        pool(),
        conv(&mut rng, 6, 16, Padding::Valid),
        pool(),
        Layer::Flatten,
        dense(&mut rng, 400, 120, Activation::Relu),
        dense(&mut rng, 120, 84, Activation::Relu),
        dense(&mut rng, 84, 10, Activation::None),
    ];
    let fm = FloatModel::new("bench-lenet", vec![28, 28, 1], layers, 10).expect("valid model");
    finish(fm, images, seed + 1)
}

#[derive(Debug, Clone)]
pub struct Point(pub [f64; 2]);

impl ObjectiveValues for Point {
    fn objective_value(&self, field: ObjectiveField) -> f64 {
        match field {
            ObjectiveField::AreaProxy => self.0[0],
            _ => self.0[1],
        }
    }
}

pub fn random_points(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Point([rng.random(), rng.random()]))
        .collect()
}
