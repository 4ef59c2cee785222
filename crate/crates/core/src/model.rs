//! Network data model: quantization parameters, tensors, layers and the
//! validated [`NetworkModel`], plus the structural quantities derived from
//! it (multiplication counts and the activation fault-site space).

use serde::{Deserialize, Serialize};

use crate::engine::FaultSite;
use crate::error::{Error, Result};

/// Bits per activation element; every element contributes this many fault sites.
pub const ACTIVATION_BITS: u64 = 8;

/// Affine quantization parameters: `real = scale * (q - zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i32) -> Result<Self> {
        let q = QuantParams { scale, zero_point };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Validation(format!(
                "scale must be positive and finite, got {}",
                self.scale
            )));
        }
        if !(-128..=127).contains(&self.zero_point) {
            return Err(Error::Validation(format!(
                "zero_point {} outside [-128, 127]",
                self.zero_point
            )));
        }
        Ok(())
    }

    /// The zero point as a stored activation value.
    pub fn zero_i8(&self) -> i8 {
        self.zero_point as i8
    }
}

/// A row-major tensor of signed 8-bit values with its quantization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<i8>,
    qparams: QuantParams,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<i8>, qparams: QuantParams) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Validation(format!(
                "tensor shape {shape:?} must be non-empty with positive dimensions"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Validation(format!(
                "tensor shape {shape:?} holds {expected} elements but data has {}",
                data.len()
            )));
        }
        qparams.validate()?;
        Ok(Tensor {
            shape,
            data,
            qparams,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn qparams(&self) -> QuantParams {
        self.qparams
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

/// Activation fused onto the output of a computational layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    /// Output height and width for an `h x w` input, or `None` if the kernel
    /// does not fit.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if self.stride == 0 {
            return None;
        }
        match self.padding {
            Padding::Valid => {
                if h < self.kernel_h || w < self.kernel_w {
                    return None;
                }
                Some((
                    (h - self.kernel_h) / self.stride + 1,
                    (w - self.kernel_w) / self.stride + 1,
                ))
            }
            Padding::Same => Some((h.div_ceil(self.stride), w.div_ceil(self.stride))),
        }
    }

    /// Leading (top, left) padding. Odd totals put the extra row/column at
    /// the bottom/right.
    pub fn pad_before(&self, h: usize, w: usize) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let (oh, ow) = self.output_hw(h, w).unwrap_or((0, 0));
                let total_h =
                    ((oh.saturating_sub(1)) * self.stride + self.kernel_h).saturating_sub(h);
                let total_w =
                    ((ow.saturating_sub(1)) * self.stride + self.kernel_w).saturating_sub(w);
                (total_h / 2, total_w / 2)
            }
        }
    }

    /// Elements per output-channel kernel.
    pub fn kernel_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeometry {
    pub pool_h: usize,
    pub pool_w: usize,
    pub stride: usize,
}

impl PoolGeometry {
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if self.stride == 0
            || self.pool_h == 0
            || self.pool_w == 0
            || h < self.pool_h
            || w < self.pool_w
        {
            return None;
        }
        Some((
            (h - self.pool_h) / self.stride + 1,
            (w - self.pool_w) / self.stride + 1,
        ))
    }
}

/// Parameter-free description of what a layer computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerOp {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2D(ConvGeometry),
    MaxPool2D(PoolGeometry),
    Flatten,
    ReLU,
}

impl LayerOp {
    /// Dense and Conv2D layers carry multipliers and can be approximated.
    pub fn is_computational(&self) -> bool {
        matches!(self, LayerOp::Dense { .. } | LayerOp::Conv2D(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerOp::Dense { .. } => "Dense",
            LayerOp::Conv2D(_) => "Conv2D",
            LayerOp::MaxPool2D(_) => "MaxPool2D",
            LayerOp::Flatten => "Flatten",
            LayerOp::ReLU => "ReLU",
        }
    }

    /// Whether the layer's output is a distinct activation tensor. Flatten
    /// only reinterprets its input, so it contributes no fault sites.
    pub fn produces_activation(&self) -> bool {
        !matches!(self, LayerOp::Flatten)
    }

    /// Shape produced from `input`, or a message describing the mismatch.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerOp::Dense {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(format!(
                        "Dense expects input shape [{in_features}], got {input:?}"
                    ));
                }
                Ok(vec![out_features])
            }
            LayerOp::Conv2D(g) => {
                let [h, w, c] = *input else {
                    return Err(format!("Conv2D expects an [h, w, c] input, got {input:?}"));
                };
                if c != g.in_channels {
                    return Err(format!(
                        "Conv2D expects {} input channels, got {c}",
                        g.in_channels
                    ));
                }
                let (oh, ow) = g.output_hw(h, w).ok_or_else(|| {
                    format!(
                        "Conv2D kernel {}x{} does not fit input {input:?}",
                        g.kernel_h, g.kernel_w
                    )
                })?;
                Ok(vec![oh, ow, g.out_channels])
            }
            LayerOp::MaxPool2D(p) => {
                let [h, w, c] = *input else {
                    return Err(format!(
                        "MaxPool2D expects an [h, w, c] input, got {input:?}"
                    ));
                };
                let (oh, ow) = p.output_hw(h, w).ok_or_else(|| {
                    format!(
                        "MaxPool2D window {}x{} does not fit input {input:?}",
                        p.pool_h, p.pool_w
                    )
                })?;
                Ok(vec![oh, ow, c])
            }
            LayerOp::Flatten => Ok(vec![input.iter().product()]),
            LayerOp::ReLU => Ok(input.to_vec()),
        }
    }

    /// Expected weight tensor shape for computational layers.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerOp::Dense {
                in_features,
                out_features,
            } => Some(vec![out_features, in_features]),
            LayerOp::Conv2D(g) => Some(vec![g.out_channels, g.kernel_h, g.kernel_w, g.in_channels]),
            _ => None,
        }
    }

    pub fn output_channels(&self) -> Option<usize> {
        match *self {
            LayerOp::Dense { out_features, .. } => Some(out_features),
            LayerOp::Conv2D(g) => Some(g.out_channels),
            _ => None,
        }
    }
}

/// A layer whose computational variants carry parameters of type `P`.
///
/// The quantized network uses [`QuantizedParams`]; the float model used for
/// calibration shares the same structure with real-valued parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<P> {
    Dense {
        in_features: usize,
        out_features: usize,
        params: P,
    },
    Conv2D {
        geometry: ConvGeometry,
        params: P,
    },
    MaxPool2D(PoolGeometry),
    Flatten,
    ReLU,
}

impl<P> Layer<P> {
    pub fn op(&self) -> LayerOp {
        match self {
            Layer::Dense {
                in_features,
                out_features,
                ..
            } => LayerOp::Dense {
                in_features: *in_features,
                out_features: *out_features,
            },
            Layer::Conv2D { geometry, .. } => LayerOp::Conv2D(*geometry),
            Layer::MaxPool2D(p) => LayerOp::MaxPool2D(*p),
            Layer::Flatten => LayerOp::Flatten,
            Layer::ReLU => LayerOp::ReLU,
        }
    }

    pub fn params(&self) -> Option<&P> {
        match self {
            Layer::Dense { params, .. } | Layer::Conv2D { params, .. } => Some(params),
            _ => None,
        }
    }

    pub fn is_computational(&self) -> bool {
        self.op().is_computational()
    }

    /// Same structure with the parameters mapped through `f`.
    pub fn map_params<Q, E>(
        &self,
        f: impl FnOnce(&P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<Layer<Q>, E> {
        Ok(match self {
            Layer::Dense {
                in_features,
                out_features,
                params,
            } => Layer::Dense {
                in_features: *in_features,
                out_features: *out_features,
                params: f(params)?,
            },
            Layer::Conv2D { geometry, params } => Layer::Conv2D {
                geometry: *geometry,
                params: f(params)?,
            },
            Layer::MaxPool2D(p) => Layer::MaxPool2D(*p),
            Layer::Flatten => Layer::Flatten,
            Layer::ReLU => Layer::ReLU,
        })
    }
}

/// Quantized parameters of a Dense or Conv2D layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedParams {
    pub activation: Activation,
    /// Dense: `[out, in]`; Conv2D: `[out_c, k_h, k_w, in_c]`. Symmetric (zero point 0).
    pub weights: Tensor,
    /// Scale is `input_scale * weight_scale`, zero point 0.
    pub bias: Vec<i32>,
    pub output_qparams: QuantParams,
}

pub type LayerSpec = Layer<QuantizedParams>;

/// Walks `ops` from `input_shape`, returning every layer's output shape.
pub(crate) fn infer_shapes(input_shape: &[usize], ops: &[LayerOp]) -> Result<Vec<Vec<usize>>> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::Validation(format!(
            "input shape {input_shape:?} must be non-empty with positive dimensions"
        )));
    }
    let mut shapes = Vec::with_capacity(ops.len());
    let mut current = input_shape.to_vec();
    for (i, op) in ops.iter().enumerate() {
        current = op.output_shape(&current).map_err(|m| Error::layer(i, m))?;
        shapes.push(current.clone());
    }
    Ok(shapes)
}

/// Structural checks shared by the quantized and float models.
pub(crate) fn validate_structure(
    input_shape: &[usize],
    ops: &[LayerOp],
    num_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    if !ops.iter().any(LayerOp::is_computational) {
        return Err(Error::Validation(
            "model must contain at least one computational (Dense or Conv2D) layer".into(),
        ));
    }
    if num_classes == 0 {
        return Err(Error::Validation("num_classes must be positive".into()));
    }
    let shapes = infer_shapes(input_shape, ops)?;
    let last: usize = shapes.last().map(|s| s.iter().product()).unwrap_or(0);
    if last != num_classes {
        return Err(Error::layer(
            ops.len() - 1,
            format!("final output has {last} elements but num_classes is {num_classes}"),
        ));
    }
    Ok(shapes)
}

/// A validated, immutable quantized network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    name: String,
    input_shape: Vec<usize>,
    input_qparams: QuantParams,
    layers: Vec<LayerSpec>,
    num_classes: usize,
    shapes: Vec<Vec<usize>>,
    out_qparams: Vec<QuantParams>,
    weight_sums: Vec<Vec<i32>>,
}

impl NetworkModel {
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        input_qparams: QuantParams,
        layers: Vec<LayerSpec>,
        num_classes: usize,
    ) -> Result<Self> {
        input_qparams.validate()?;
        let ops: Vec<LayerOp> = layers.iter().map(Layer::op).collect();
        let shapes = validate_structure(&input_shape, &ops, num_classes)?;

        let mut out_qparams = Vec::with_capacity(layers.len());
        let mut weight_sums = Vec::with_capacity(layers.len());
        let mut current = input_qparams;
        for (i, layer) in layers.iter().enumerate() {
            match layer.params() {
                Some(p) => {
                    validate_params(i, &layer.op(), p)?;
                    current = p.output_qparams;
                    let per_channel = p.weights.len() / p.bias.len();
                    weight_sums.push(
                        p.weights
                            .data()
                            .chunks(per_channel)
                            .map(|row| row.iter().map(|&w| w as i32).sum())
                            .collect(),
                    );
                }
                None => weight_sums.push(Vec::new()),
            }
            out_qparams.push(current);
        }

        Ok(NetworkModel {
            name: name.into(),
            input_shape,
            input_qparams,
            layers,
            num_classes,
            shapes,
            out_qparams,
            weight_sums,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_qparams(&self) -> QuantParams {
        self.input_qparams
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Output shape of layer `i`.
    pub fn output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Input shape of layer `i`.
    pub fn layer_input_shape(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.shapes[i - 1]
        }
    }

    /// Quantization parameters of layer `i`'s output tensor. Non-computational
    /// layers pass their input parameters through.
    pub fn output_qparams(&self, i: usize) -> QuantParams {
        self.out_qparams[i]
    }

    pub fn layer_input_qparams(&self, i: usize) -> QuantParams {
        if i == 0 {
            self.input_qparams
        } else {
            self.out_qparams[i - 1]
        }
    }

    /// Per-output-channel sums of the weights of layer `i` (empty for
    /// non-computational layers).
    pub(crate) fn weight_sums(&self, i: usize) -> &[i32] {
        &self.weight_sums[i]
    }

    /// Indices of the Dense/Conv2D layers, in order.
    pub fn computational_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_computational())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn computational_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_computational()).count()
    }

    /// `true` at every computational position; the layout of a layer mask.
    pub fn mask_layout(&self) -> Vec<bool> {
        self.layers.iter().map(Layer::is_computational).collect()
    }

    /// Multiplication count of every computational layer, by layer index.
    pub fn layer_mult_counts(&self) -> Vec<(usize, u64)> {
        self.computational_layers()
            .into_iter()
            .map(|i| {
                let n = mult_count(&self.layers[i], self.layer_input_shape(i))
                    .expect("computational layer");
                (i, n)
            })
            .collect()
    }

    pub fn site_space(&self) -> SiteSpace {
        SiteSpace::new(self)
    }
}

fn validate_params(index: usize, op: &LayerOp, p: &QuantizedParams) -> Result<()> {
    let expected = op.weight_shape().expect("computational layer");
    if p.weights.shape() != expected.as_slice() {
        return Err(Error::layer(
            index,
            format!(
                "weight shape {:?} does not match expected {expected:?}",
                p.weights.shape()
            ),
        ));
    }
    let channels = op.output_channels().expect("computational layer");
    if p.bias.len() != channels {
        return Err(Error::layer(
            index,
            format!("bias has {} entries, expected {channels}", p.bias.len()),
        ));
    }
    if p.weights.qparams().zero_point != 0 {
        return Err(Error::layer(
            index,
            format!(
                "weights must be symmetric (zero_point 0), got {}",
                p.weights.qparams().zero_point
            ),
        ));
    }
    p.output_qparams
        .validate()
        .map_err(|e| Error::layer(index, format!("output qparams: {e}")))?;
    Ok(())
}

/// Number of multiplications a computational layer performs on `input_shape`.
pub fn mult_count<P>(layer: &Layer<P>, input_shape: &[usize]) -> Result<u64> {
    let op = layer.op();
    match op {
        LayerOp::Dense {
            in_features,
            out_features,
        } => Ok(in_features as u64 * out_features as u64),
        LayerOp::Conv2D(g) => {
            let out = op.output_shape(input_shape).map_err(Error::Validation)?;
            Ok(out[0] as u64 * out[1] as u64 * g.out_channels as u64 * g.kernel_len() as u64)
        }
        other => Err(Error::Domain(format!(
            "{} is not a computational layer",
            other.name()
        ))),
    }
}

/// Size of the single-bit activation fault space of `model`.
pub fn fault_site_count(model: &NetworkModel) -> u64 {
    model.site_space().site_count()
}

/// The flat space of activation fault sites.
///
/// Sites are ordered by layer, then element, then bit; flat index
/// `offset(layer) + element * 8 + bit`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSpace {
    groups: Vec<SiteGroup>,
    total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SiteGroup {
    layer_index: usize,
    elements: u64,
    offset: u64,
}

impl SiteSpace {
    fn new(model: &NetworkModel) -> Self {
        let mut groups = Vec::new();
        let mut offset = 0u64;
        for (i, layer) in model.layers().iter().enumerate() {
            if !layer.op().produces_activation() {
                continue;
            }
            let elements = model.output_shape(i).iter().product::<usize>() as u64;
            groups.push(SiteGroup {
                layer_index: i,
                elements,
                offset,
            });
            offset += elements * ACTIVATION_BITS;
        }
        SiteSpace {
            groups,
            total: offset,
        }
    }

    pub fn site_count(&self) -> u64 {
        self.total
    }

    /// Layer indices whose outputs are fault targets.
    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().map(|g| g.layer_index)
    }

    /// Site at flat index `flat`, or `None` past the end.
    pub fn site_at(&self, flat: u64) -> Option<FaultSite> {
        if flat >= self.total {
            return None;
        }
        let pos = self.groups.partition_point(|g| g.offset <= flat) - 1;
        let g = self.groups[pos];
        let local = flat - g.offset;
        Some(FaultSite {
            layer_index: g.layer_index,
            element_index: (local / ACTIVATION_BITS) as usize,
            bit: (local % ACTIVATION_BITS) as u8,
        })
    }

    pub fn flat_index(&self, site: &FaultSite) -> Option<u64> {
        let g = self
            .groups
            .iter()
            .find(|g| g.layer_index == site.layer_index)?;
        if site.element_index as u64 >= g.elements || u64::from(site.bit) >= ACTIVATION_BITS {
            return None;
        }
        Some(g.offset + site.element_index as u64 * ACTIVATION_BITS + u64::from(site.bit))
    }

    pub fn contains(&self, site: &FaultSite) -> bool {
        self.flat_index(site).is_some()
    }

    /// Every site in flat order.
    pub fn iter(&self) -> impl Iterator<Item = FaultSite> + '_ {
        (0..self.total).map(|i| self.site_at(i).expect("in range"))
    }
}

/// A labelled set of quantized input images.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: Vec<usize>,
    qparams: QuantParams,
    images: Vec<Tensor>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        shape: Vec<usize>,
        qparams: QuantParams,
        images: Vec<Tensor>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Validation("dataset is empty".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::Validation(format!(
                "dataset has {} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        qparams.validate()?;
        for (i, img) in images.iter().enumerate() {
            if img.shape() != shape.as_slice() || img.qparams() != qparams {
                return Err(Error::Validation(format!(
                    "image {i} does not share the dataset shape/qparams"
                )));
            }
        }
        Ok(Dataset {
            shape,
            qparams,
            images,
            labels,
        })
    }

    /// Builds a dataset from a flat row-major image buffer.
    pub fn from_flat(
        shape: Vec<usize>,
        qparams: QuantParams,
        data: &[i8],
        labels: Vec<usize>,
    ) -> Result<Self> {
        let per: usize = shape.iter().product();
        if per == 0 || data.len() != per * labels.len() {
            return Err(Error::Validation(format!(
                "image buffer of {} bytes does not hold {} images of shape {shape:?}",
                data.len(),
                labels.len()
            )));
        }
        let images = data
            .chunks(per)
            .map(|c| Tensor::new(shape.clone(), c.to_vec(), qparams))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(shape, qparams, images, labels)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn qparams(&self) -> QuantParams {
        self.qparams
    }

    pub fn images(&self) -> &[Tensor] {
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

    /// First `n` samples (all of them if `n` exceeds the size).
    pub fn subset(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        Dataset::new(
            self.shape.clone(),
            self.qparams,
            self.images[..n].to_vec(),
            self.labels[..n].to_vec(),
        )
    }

    /// Checks the dataset can be fed to `model`.
    pub fn check_compatible(&self, model: &NetworkModel) -> Result<()> {
        if self.shape != model.input_shape() {
            return Err(Error::Usage(format!(
                "dataset shape {:?} does not match model input {:?}",
                self.shape,
                model.input_shape()
            )));
        }
        if self.qparams != model.input_qparams() {
            return Err(Error::Usage(
                "dataset quantization parameters differ from the model input".into(),
            ));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= model.num_classes()) {
            return Err(Error::Validation(format!(
                "label {bad} outside [0, {})",
                model.num_classes()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(scale: f64, zp: i32) -> QuantParams {
        QuantParams::new(scale, zp).unwrap()
    }

    fn dense(i: usize, o: usize, act: Activation) -> LayerSpec {
        Layer::Dense {
            in_features: i,
            out_features: o,
            params: QuantizedParams {
                activation: act,
                weights: Tensor::new(vec![o, i], vec![1; i * o], q(0.01, 0)).unwrap(),
                bias: vec![0; o],
                output_qparams: q(0.1, -3),
            },
        }
    }

    fn conv(kh: usize, cin: usize, cout: usize, padding: Padding) -> LayerSpec {
        Layer::Conv2D {
            geometry: ConvGeometry {
                kernel_h: kh,
                kernel_w: kh,
                in_channels: cin,
                out_channels: cout,
                stride: 1,
                padding,
            },
            params: QuantizedParams {
                activation: Activation::Relu,
                weights: Tensor::new(
                    vec![cout, kh, kh, cin],
                    vec![0; cout * kh * kh * cin],
                    q(0.01, 0),
                )
                .unwrap(),
                bias: vec![0; cout],
                output_qparams: q(0.05, 0),
            },
        }
    }

    #[test]
    fn mlp_structure() {
        let m = NetworkModel::new(
            "mlp",
            vec![784],
            q(1.0 / 255.0, -128),
            vec![
                dense(784, 128, Activation::None),
                Layer::ReLU,
                dense(128, 10, Activation::None),
            ],
            10,
        )
        .unwrap();
        assert_eq!(m.layers().len(), 3);
        assert_eq!(m.computational_count(), 2);
        assert_eq!(fault_site_count(&m), (128 + 128 + 10) * 8);
        assert_eq!(m.output_qparams(1), m.output_qparams(0));
    }

    #[test]
    fn single_dense_sites() {
        let m = NetworkModel::new(
            "t",
            vec![4],
            q(0.1, 0),
            vec![dense(4, 2, Activation::None)],
            2,
        )
        .unwrap();
        assert_eq!(fault_site_count(&m), 16);
    }

    #[test]
    fn empty_model_rejected() {
        let err = NetworkModel::new("e", vec![4], q(0.1, 0), vec![], 4).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = NetworkModel::new("e", vec![4], q(0.1, 0), vec![Layer::ReLU], 4).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let err = NetworkModel::new(
            "bad",
            vec![784],
            q(0.1, 0),
            vec![
                dense(784, 128, Activation::Relu),
                dense(64, 10, Activation::None),
            ],
            10,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Layer { layer: 1, .. }), "{err}");
    }

    #[test]
    fn wrong_weight_count_rejected() {
        let err = Tensor::new(vec![128, 784], vec![0; 783 * 128], q(0.1, 0)).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn asymmetric_weights_rejected() {
        let mut l = dense(4, 2, Activation::None);
        if let Layer::Dense { params, .. } = &mut l {
            params.weights = Tensor::new(vec![2, 4], vec![0; 8], q(0.1, 3)).unwrap();
        }
        let err = NetworkModel::new("t", vec![4], q(0.1, 0), vec![l], 2).unwrap_err();
        assert!(matches!(err, Error::Layer { layer: 0, .. }));
    }

    #[test]
    fn mult_counts() {
        let d = dense(784, 128, Activation::None);
        assert_eq!(mult_count(&d, &[784]).unwrap(), 100_352);
        let c = conv(5, 1, 6, Padding::Valid);
        assert_eq!(mult_count(&c, &[28, 28, 1]).unwrap(), 24 * 24 * 6 * 25);
        assert_eq!(mult_count(&c, &[28, 28, 1]).unwrap(), 86_400);
        let same = conv(5, 1, 6, Padding::Same);
        assert_eq!(mult_count(&same, &[28, 28, 1]).unwrap(), 28 * 28 * 6 * 25);
        let pool: LayerSpec = Layer::MaxPool2D(PoolGeometry {
            pool_h: 2,
            pool_w: 2,
            stride: 2,
        });
        assert!(matches!(
            mult_count(&pool, &[24, 24, 6]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn same_padding_offsets() {
        let g = ConvGeometry {
            kernel_h: 3,
            kernel_w: 3,
            in_channels: 1,
            out_channels: 1,
            stride: 2,
            padding: Padding::Same,
        };
        assert_eq!(g.output_hw(5, 6), Some((3, 3)));
        // h: (3-1)*2+3-5 = 2 -> 1 before; w: (3-1)*2+3-6 = 1 -> 0 before
        assert_eq!(g.pad_before(5, 6), (1, 0));
    }

    #[test]
    fn site_space_round_trip() {
        let m = NetworkModel::new(
            "mlp",
            vec![6],
            q(0.1, 0),
            vec![
                dense(6, 5, Activation::None),
                Layer::ReLU,
                dense(5, 3, Activation::None),
            ],
            3,
        )
        .unwrap();
        let space = m.site_space();
        let all: Vec<_> = space.iter().collect();
        assert_eq!(all.len() as u64, space.site_count());
        for (i, s) in all.iter().enumerate() {
            assert_eq!(space.flat_index(s), Some(i as u64));
        }
        assert!(space.site_at(space.site_count()).is_none());
        assert!(!space.contains(&FaultSite {
            layer_index: 2,
            element_index: 3,
            bit: 0
        }));
    }

    #[test]
    fn flatten_has_no_sites() {
        let pool: LayerSpec = Layer::MaxPool2D(PoolGeometry {
            pool_h: 2,
            pool_w: 2,
            stride: 2,
        });
        let m = NetworkModel::new(
            "cnn",
            vec![6, 6, 1],
            q(0.1, 0),
            vec![
                conv(3, 1, 2, Padding::Valid),
                pool,
                Layer::Flatten,
                dense(8, 4, Activation::None),
            ],
            4,
        )
        .unwrap();
        assert_eq!(fault_site_count(&m), (4 * 4 * 2 + 2 * 2 * 2 + 4) * 8);
        assert_eq!(m.site_space().layers().collect::<Vec<_>>(), vec![0, 1, 3]);
    }

    #[test]
    fn dataset_invariants() {
        let qp = q(0.1, 0);
        assert!(Dataset::from_flat(vec![2], qp, &[], vec![]).is_err());
        assert!(Dataset::from_flat(vec![2], qp, &[1, 2, 3], vec![0, 1]).is_err());
        let d = Dataset::from_flat(vec![2], qp, &[1, 2, 3, 4], vec![0, 1]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.images()[1].data(), &[3, 4]);
    }
}
