//! Post-training 8-bit quantization.
//!
//! Weights are quantized per tensor and symmetrically (zero point 0),
//! activations asymmetrically from min/max ranges observed on a calibration
//! set, biases to `i32` at `input_scale * weight_scale`. Rounding is
//! round-half-to-even throughout, matching the engine's requantization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate_structure, Activation, ConvGeometry, Dataset, Layer, LayerOp, NetworkModel,
    PoolGeometry, QuantParams, QuantizedParams, Tensor,
};

/// Width added on each side of a degenerate (zero-span) range.
pub const RANGE_EPSILON: f64 = 1e-6;

/// `clamp(round_half_even(x / scale) + zero_point, -128, 127)`.
pub fn quantize_value(x: f64, q: QuantParams) -> i8 {
    let v = (x / q.scale).round_ties_even() + f64::from(q.zero_point);
    v.clamp(-128.0, 127.0) as i8
}

pub fn dequantize(v: i8, q: QuantParams) -> f64 {
    q.scale * f64::from(i32::from(v) - q.zero_point)
}

/// Real-valued parameters of a Dense or Conv2D layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatParams {
    pub activation: Activation,
    pub weight_shape: Vec<usize>,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

pub type FloatLayer = Layer<FloatParams>;

/// A float network with the same structure as [`NetworkModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct FloatModel {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<FloatLayer>,
    num_classes: usize,
    shapes: Vec<Vec<usize>>,
}

impl FloatModel {
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        layers: Vec<FloatLayer>,
        num_classes: usize,
    ) -> Result<Self> {
        let ops: Vec<LayerOp> = layers.iter().map(Layer::op).collect();
        let shapes = validate_structure(&input_shape, &ops, num_classes)?;
        for (i, l) in layers.iter().enumerate() {
            let Some(p) = l.params() else { continue };
            let op = l.op();
            let expected = op.weight_shape().expect("computational");
            if p.weight_shape != expected || p.weights.len() != expected.iter().product::<usize>() {
                return Err(Error::layer(
                    i,
                    format!(
                        "weights: shape {:?} with {} values, expected shape {expected:?}",
                        p.weight_shape,
                        p.weights.len()
                    ),
                ));
            }
            let channels = op.output_channels().expect("computational");
            if p.bias.len() != channels {
                return Err(Error::layer(
                    i,
                    format!("bias has {} entries, expected {channels}", p.bias.len()),
                ));
            }
            if p.weights.iter().chain(&p.bias).any(|v| !v.is_finite()) {
                return Err(Error::layer(i, "non-finite parameter"));
            }
        }
        Ok(FloatModel {
            name: name.into(),
            input_shape,
            layers,
            num_classes,
            shapes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[FloatLayer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    fn layer_input_shape(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.shapes[i - 1]
        }
    }

    /// Every layer's output for `input`.
    pub fn forward_trace(&self, input: &[f32]) -> Vec<Vec<f32>> {
        let mut outs: Vec<Vec<f32>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x: &[f32] = if i == 0 { input } else { &outs[i - 1] };
            let in_shape = self.layer_input_shape(i);
            let y = match layer {
                Layer::Dense {
                    in_features,
                    out_features,
                    params,
                } => {
                    let mut y = Vec::with_capacity(*out_features);
                    for o in 0..*out_features {
                        let row = &params.weights[o * in_features..(o + 1) * in_features];
                        let acc: f64 = row
                            .iter()
                            .zip(x)
                            .map(|(&w, &v)| f64::from(w) * f64::from(v))
                            .sum::<f64>()
                            + f64::from(params.bias[o]);
                        y.push(activate(acc, params.activation) as f32);
                    }
                    y
                }
                Layer::Conv2D { geometry, params } => float_conv(geometry, params, x, in_shape),
                Layer::MaxPool2D(p) => float_pool(p, x, in_shape),
                Layer::Flatten => x.to_vec(),
                Layer::ReLU => x.iter().map(|&v| v.max(0.0)).collect(),
            };
            outs.push(y);
        }
        outs
    }

    /// Index of the largest logit (first on ties).
    pub fn predict(&self, input: &[f32]) -> usize {
        let trace = self.forward_trace(input);
        argmax(trace.last().expect("non-empty model"))
    }
}

fn activate(v: f64, act: Activation) -> f64 {
    match act {
        Activation::None => v,
        Activation::Relu => v.max(0.0),
    }
}

fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn float_conv(g: &ConvGeometry, p: &FloatParams, x: &[f32], in_shape: &[usize]) -> Vec<f32> {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = g.output_hw(h, w).expect("validated");
    let (pt, pl) = g.pad_before(h, w);
    let mut y = Vec::with_capacity(oh * ow * g.out_channels);
    for oy in 0..oh {
        for ox in 0..ow {
            for oc in 0..g.out_channels {
                let mut acc = f64::from(p.bias[oc]);
                for ky in 0..g.kernel_h {
                    let iy = (oy * g.stride + ky) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel_w {
                        let ix = (ox * g.stride + kx) as isize - pl as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let xbase = (iy as usize * w + ix as usize) * c;
                        let wbase = ((oc * g.kernel_h + ky) * g.kernel_w + kx) * c;
                        for ic in 0..c {
                            acc += f64::from(p.weights[wbase + ic]) * f64::from(x[xbase + ic]);
                        }
                    }
                }
                y.push(activate(acc, p.activation) as f32);
            }
        }
    }
    y
}

fn float_pool(p: &PoolGeometry, x: &[f32], in_shape: &[usize]) -> Vec<f32> {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = p.output_hw(h, w).expect("validated");
    let mut y = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut m = f32::NEG_INFINITY;
                for py in 0..p.pool_h {
                    for px in 0..p.pool_w {
                        let iy = oy * p.stride + py;
                        let ix = ox * p.stride + px;
                        m = m.max(x[(iy * w + ix) * c + ch]);
                    }
                }
                y.push(m);
            }
        }
    }
    y
}

/// Labelled float samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatDataset {
    shape: Vec<usize>,
    images: Vec<Vec<f32>>,
    labels: Vec<usize>,
}

impl FloatDataset {
    pub fn new(shape: Vec<usize>, images: Vec<Vec<f32>>, labels: Vec<usize>) -> Result<Self> {
        let per: usize = shape.iter().product();
        if images.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(i) = images.iter().position(|img| img.len() != per) {
            return Err(Error::Validation(format!(
                "image {i} does not match shape {shape:?}"
            )));
        }
        Ok(FloatDataset {
            shape,
            images,
            labels,
        })
    }

    pub fn from_flat(shape: Vec<usize>, data: &[f32], labels: Vec<usize>) -> Result<Self> {
        let per: usize = shape.iter().product();
        if per == 0 || data.len() != per * labels.len() {
            return Err(Error::Validation(format!(
                "image buffer of {} values does not hold {} images of shape {shape:?}",
                data.len(),
                labels.len()
            )));
        }
        let images = data.chunks(per).map(<[f32]>::to_vec).collect();
        FloatDataset::new(shape, images, labels)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn images(&self) -> &[Vec<f32>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Observed extremes of one tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorRange {
    pub min: f64,
    pub max: f64,
}

impl TensorRange {
    fn of(values: &[f32]) -> Self {
        values.iter().fold(
            TensorRange {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |r, &v| TensorRange {
                min: r.min.min(f64::from(v)),
                max: r.max.max(f64::from(v)),
            },
        )
    }

    fn merge(self, other: Self) -> Self {
        TensorRange {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    /// The quantization range: extended to include 0, and widened by
    /// [`RANGE_EPSILON`] on each side when its span is zero.
    pub fn widened(&self) -> (f64, f64) {
        let lo = self.min.min(0.0);
        let hi = self.max.max(0.0);
        if hi - lo > 0.0 {
            (lo, hi)
        } else {
            (lo - RANGE_EPSILON, hi + RANGE_EPSILON)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min <= v && v <= self.max
    }
}

/// Per-tensor ranges: the network input and every layer output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub input: TensorRange,
    pub layers: Vec<TensorRange>,
}

impl CalibrationStats {
    fn merge(self, other: Self) -> Self {
        CalibrationStats {
            input: self.input.merge(other.input),
            layers: self
                .layers
                .into_iter()
                .zip(other.layers)
                .map(|(a, b)| a.merge(b))
                .collect(),
        }
    }
}

/// Runs every sample through the float model and records per-tensor extremes.
pub fn calibrate(fm: &FloatModel, samples: &FloatDataset) -> Result<CalibrationStats> {
    if samples.is_empty() {
        return Err(Error::Usage("calibration set is empty".into()));
    }
    if samples.shape() != fm.input_shape() {
        return Err(Error::Usage(format!(
            "calibration samples have shape {:?}, model expects {:?}",
            samples.shape(),
            fm.input_shape()
        )));
    }
    let stats = samples
        .images()
        .par_iter()
        .map(|img| CalibrationStats {
            input: TensorRange::of(img),
            layers: fm
                .forward_trace(img)
                .iter()
                .map(|t| TensorRange::of(t))
                .collect(),
        })
        .reduce_with(CalibrationStats::merge)
        .expect("non-empty");
    Ok(stats)
}

/// Asymmetric 8-bit parameters covering `range` (after widening).
pub fn asymmetric_params(range: &TensorRange) -> Result<QuantParams> {
    let (lo, hi) = range.widened();
    let scale = (hi - lo) / 255.0;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Calibration(format!(
            "degenerate range [{}, {}]",
            range.min, range.max
        )));
    }
    let zp = (-128.0 - lo / scale).round_ties_even().clamp(-128.0, 127.0) as i32;
    QuantParams::new(scale, zp).map_err(|e| Error::Calibration(e.to_string()))
}

/// Symmetric per-tensor weight parameters: `scale = max|w| / 127`, zero point 0.
pub fn symmetric_params(weights: &[f32]) -> Result<QuantParams> {
    let max = weights
        .iter()
        .fold(0.0f64, |m, &w| m.max(f64::from(w).abs()));
    let max = if max > 0.0 { max } else { RANGE_EPSILON };
    QuantParams::new(max / 127.0, 0).map_err(|e| Error::Calibration(e.to_string()))
}

/// Bias to `i32` at scale `input_scale * weight_scale`, saturating.
pub fn quantize_bias(b: f32, input_scale: f64, weight_scale: f64) -> i32 {
    let v = (f64::from(b) / (input_scale * weight_scale)).round_ties_even();
    v.clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i32
}

/// Quantizes `fm` using `stats` for the activation ranges.
pub fn quantize_model(fm: &FloatModel, stats: &CalibrationStats) -> Result<NetworkModel> {
    if stats.layers.len() != fm.layers().len() {
        return Err(Error::Calibration(format!(
            "stats cover {} layers, model has {}",
            stats.layers.len(),
            fm.layers().len()
        )));
    }
    let input_q = asymmetric_params(&stats.input)?;
    let mut current = input_q;
    let mut layers = Vec::with_capacity(fm.layers().len());
    for (i, layer) in fm.layers().iter().enumerate() {
        let in_q = current;
        let q = layer.map_params(|p| -> Result<QuantizedParams> {
            let wq = symmetric_params(&p.weights)?;
            let weights: Vec<i8> = p
                .weights
                .iter()
                .map(|&w| quantize_value(f64::from(w), wq))
                .collect();
            let output_qparams =
                asymmetric_params(&stats.layers[i]).map_err(|e| Error::layer(i, e.to_string()))?;
            Ok(QuantizedParams {
                activation: p.activation,
                weights: Tensor::new(p.weight_shape.clone(), weights, wq)?,
                bias: p
                    .bias
                    .iter()
                    .map(|&b| quantize_bias(b, in_q.scale, wq.scale))
                    .collect(),
                output_qparams,
            })
        })?;
        if let Some(p) = q.params() {
            current = p.output_qparams;
        }
        layers.push(q);
    }
    NetworkModel::new(
        fm.name(),
        fm.input_shape().to_vec(),
        input_q,
        layers,
        fm.num_classes(),
    )
}

/// Quantizes float samples with the model's input parameters.
pub fn quantize_dataset(data: &FloatDataset, qparams: QuantParams) -> Result<Dataset> {
    let flat: Vec<i8> = data
        .images()
        .iter()
        .flat_map(|img| {
            img.iter()
                .map(move |&v| quantize_value(f64::from(v), qparams))
        })
        .collect();
    Dataset::from_flat(
        data.shape().to_vec(),
        qparams,
        &flat,
        data.labels().to_vec(),
    )
}

/// Fraction of samples the float model classifies correctly.
pub fn float_accuracy(fm: &FloatModel, data: &FloatDataset) -> f64 {
    let correct = data
        .images()
        .par_iter()
        .zip(data.labels())
        .filter(|(img, &l)| fm.predict(img) == l)
        .count();
    correct as f64 / data.len() as f64
}
