//! Bit-exact integer inference with per-layer multiplier substitution and
//! single-bit activation fault injection.
//!
//! Every product in a Dense or Conv2D layer goes through the multiplier the
//! [`ApproxConfig`] assigns to that layer. Accumulation is `i32`:
//!
//! ```text
//! acc = bias + sum(mul(x, w)) - zp_in * sum(w)
//! y   = clamp(round_half_even(acc * s_in * s_w / s_out) + zp_out, -128, 127)
//! ```
//!
//! The `zp_in * sum(w)` term is a per-channel constant, so the multiplier
//! only ever sees raw `i8` operands. Same-padding feeds `zp_in` for
//! out-of-bounds inputs.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axmult::{lut_index, truncate_operand, Multiplier, MultiplierKind};
use crate::error::{Error, Result};
use crate::model::{
    Activation, ConvGeometry, Dataset, Layer, NetworkModel, PoolGeometry, QuantizedParams,
    SiteSpace, Tensor,
};

/// One activation bit: bit `bit` of element `element_index` of the output
/// tensor of layer `layer_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaultSite {
    pub layer_index: usize,
    pub element_index: usize,
    pub bit: u8,
}

impl fmt::Display for FaultSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.layer_index, self.element_index, self.bit
        )
    }
}

#[inline]
pub fn flip_bit(v: i8, bit: u8) -> i8 {
    v ^ (1u8 << bit) as i8
}

/// Multiplier assignment for every computational layer of one model.
#[derive(Debug, Clone)]
pub struct ApproxConfig {
    layout: Vec<bool>,
    assignments: Vec<Arc<Multiplier>>,
}

impl PartialEq for ApproxConfig {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout
            && self.assignments.len() == other.assignments.len()
            && self
                .assignments
                .iter()
                .zip(&other.assignments)
                .all(|(a, b)| a.id() == b.id())
    }
}

impl ApproxConfig {
    /// One multiplier per computational layer, in layer order.
    pub fn new(model: &NetworkModel, assignments: Vec<Arc<Multiplier>>) -> Result<Self> {
        let n = model.computational_count();
        if assignments.len() != n {
            return Err(Error::Usage(format!(
                "{} multiplier assignments for {n} computational layers",
                assignments.len()
            )));
        }
        Ok(ApproxConfig {
            layout: model.mask_layout(),
            assignments,
        })
    }

    pub fn exact(model: &NetworkModel) -> Self {
        Self::uniform(model, Arc::new(Multiplier::exact()))
    }

    /// `m` on every computational layer.
    pub fn uniform(model: &NetworkModel, m: Arc<Multiplier>) -> Self {
        ApproxConfig {
            layout: model.mask_layout(),
            assignments: vec![m; model.computational_count()],
        }
    }

    /// `m` where `approximated` is set, exact elsewhere.
    pub fn from_bits(
        model: &NetworkModel,
        approximated: &[bool],
        m: Arc<Multiplier>,
    ) -> Result<Self> {
        let exact = Arc::new(Multiplier::exact());
        let assignments = approximated
            .iter()
            .map(|&on| if on { m.clone() } else { exact.clone() })
            .collect();
        Self::new(model, assignments)
    }

    /// Parses a layer mask. Accepts either one character per layer (`'1'`
    /// approximated, `'0'` exact, `'-'` exactly at the non-computational
    /// positions), or one digit per computational layer.
    pub fn from_mask(model: &NetworkModel, mask: &str, m: Arc<Multiplier>) -> Result<Self> {
        let layout = model.mask_layout();
        let chars: Vec<char> = mask.chars().collect();
        let digits: Vec<char> = if chars.len() == layout.len() {
            for (i, (&c, &comp)) in chars.iter().zip(&layout).enumerate() {
                let ok = if comp { c == '0' || c == '1' } else { c == '-' };
                if !ok {
                    return Err(Error::Usage(format!(
                        "mask `{mask}`: position {i} must be {}",
                        if comp { "'0' or '1'" } else { "'-'" }
                    )));
                }
            }
            chars.into_iter().filter(|&c| c != '-').collect()
        } else if chars.len() == model.computational_count() {
            chars
        } else {
            return Err(Error::Usage(format!(
                "mask `{mask}` has length {}, expected {} (all layers) or {} (computational layers)",
                mask.chars().count(),
                layout.len(),
                model.computational_count()
            )));
        };
        let bits = digits
            .iter()
            .map(|&c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Usage(format!(
                    "mask `{mask}`: unexpected character `{other}`"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(model, &bits, m)
    }

    pub fn assignments(&self) -> &[Arc<Multiplier>] {
        &self.assignments
    }

    /// Mask string over all layers: `'1'` approximated, `'0'` exact, `'-'`
    /// non-computational.
    pub fn mask(&self) -> String {
        let mut it = self.assignments.iter();
        self.layout
            .iter()
            .map(|&comp| {
                if !comp {
                    '-'
                } else if it.next().is_some_and(|m| !m.is_exact()) {
                    '1'
                } else {
                    '0'
                }
            })
            .collect()
    }

    pub fn is_all_exact(&self) -> bool {
        self.assignments.iter().all(|m| m.is_exact())
    }

    /// Id of the approximate multiplier in use: `exact` when none, the
    /// joined ids when several differ.
    pub fn multiplier_label(&self) -> String {
        let mut ids: Vec<&str> = Vec::new();
        for m in self.assignments.iter().filter(|m| !m.is_exact()) {
            if !ids.contains(&m.id()) {
                ids.push(m.id());
            }
        }
        if ids.is_empty() {
            "exact".into()
        } else {
            ids.join("+")
        }
    }

    /// Multiplier per layer index (`None` for non-computational layers).
    fn per_layer(&self) -> Vec<Option<&Multiplier>> {
        let mut it = self.assignments.iter();
        self.layout
            .iter()
            .map(|&comp| {
                if comp {
                    it.next().map(|m| m.as_ref())
                } else {
                    None
                }
            })
            .collect()
    }

    fn check(&self, model: &NetworkModel) -> Result<()> {
        if self.layout != model.mask_layout() {
            return Err(Error::Usage(
                "configuration was built for a different model".into(),
            ));
        }
        Ok(())
    }
}

/// `clamp(round_half_even(acc * rescale) + zero_point, -128, 127)`.
#[inline]
pub fn requantize(acc: i32, rescale: f64, zero_point: i32) -> i8 {
    let v = (f64::from(acc) * rescale).round_ties_even() + f64::from(zero_point);
    v.clamp(-128.0, 127.0) as i8
}

/// Dispatches `$body` with `$f` bound to a monomorphic `Fn(i8, i8) -> i32`.
macro_rules! with_multiplier {
    ($m:expr, |$f:ident| $body:expr) => {
        match $m.kind() {
            MultiplierKind::Exact => {
                let $f = |a: i8, b: i8| i32::from(a) * i32::from(b);
                $body
            }
            MultiplierKind::Trunc(k) => {
                let k = *k;
                let $f = move |a: i8, b: i8| {
                    i32::from(truncate_operand(a, k)) * i32::from(truncate_operand(b, k))
                };
                $body
            }
            MultiplierKind::Lut(t) => {
                let t: &[i16] = t;
                let $f = |a: i8, b: i8| i32::from(t[lut_index(a, b)]);
                $body
            }
        }
    };
}

struct Requant {
    rescale: f64,
    zero_point: i32,
    floor: Option<i8>,
}

impl Requant {
    fn new(model: &NetworkModel, i: usize, p: &QuantizedParams) -> Self {
        let s_in = model.layer_input_qparams(i).scale;
        let s_w = p.weights.qparams().scale;
        let out = p.output_qparams;
        Requant {
            rescale: s_in * s_w / out.scale,
            zero_point: out.zero_point,
            floor: match p.activation {
                Activation::Relu => Some(out.zero_i8()),
                Activation::None => None,
            },
        }
    }

    #[inline]
    fn apply(&self, acc: i32) -> i8 {
        let y = requantize(acc, self.rescale, self.zero_point);
        match self.floor {
            Some(f) => y.max(f),
            None => y,
        }
    }
}

fn dense_kernel<F: Fn(i8, i8) -> i32>(
    mul: F,
    x: &[i8],
    p: &QuantizedParams,
    wsum: &[i32],
    zx: i32,
    rq: &Requant,
    out: &mut Vec<i8>,
) {
    let n = x.len();
    for (o, row) in p.weights.data().chunks_exact(n).enumerate() {
        let mut acc = p.bias[o].wrapping_sub(zx.wrapping_mul(wsum[o]));
        for (&a, &w) in x.iter().zip(row) {
            acc = acc.wrapping_add(mul(a, w));
        }
        out.push(rq.apply(acc));
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_kernel<F: Fn(i8, i8) -> i32>(
    mul: F,
    g: &ConvGeometry,
    in_shape: &[usize],
    x: &[i8],
    p: &QuantizedParams,
    wsum: &[i32],
    zx: i32,
    rq: &Requant,
    out: &mut Vec<i8>,
) {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = g.output_hw(h, w).expect("validated shape");
    let (pt, pl) = g.pad_before(h, w);
    let pad = zx as i8;
    let klen = g.kernel_len();
    let weights = p.weights.data();
    for oy in 0..oh {
        for ox in 0..ow {
            for oc in 0..g.out_channels {
                let kernel = &weights[oc * klen..(oc + 1) * klen];
                let mut acc = p.bias[oc].wrapping_sub(zx.wrapping_mul(wsum[oc]));
                for ky in 0..g.kernel_h {
                    let iy = (oy * g.stride + ky) as isize - pt as isize;
                    let row_in = iy >= 0 && (iy as usize) < h;
                    for kx in 0..g.kernel_w {
                        let ix = (ox * g.stride + kx) as isize - pl as isize;
                        let kw =
                            &kernel[(ky * g.kernel_w + kx) * c..(ky * g.kernel_w + kx + 1) * c];
                        if row_in && ix >= 0 && (ix as usize) < w {
                            let base = (iy as usize * w + ix as usize) * c;
                            for (&a, &wt) in x[base..base + c].iter().zip(kw) {
                                acc = acc.wrapping_add(mul(a, wt));
                            }
                        } else {
                            for &wt in kw {
                                acc = acc.wrapping_add(mul(pad, wt));
                            }
                        }
                    }
                }
                out.push(rq.apply(acc));
            }
        }
    }
}

fn max_pool(p: &PoolGeometry, in_shape: &[usize], x: &[i8], out: &mut Vec<i8>) {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = p.output_hw(h, w).expect("validated shape");
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut m = i8::MIN;
                for py in 0..p.pool_h {
                    let row = (oy * p.stride + py) * w;
                    for px in 0..p.pool_w {
                        m = m.max(x[(row + ox * p.stride + px) * c + ch]);
                    }
                }
                out.push(m);
            }
        }
    }
}

fn argmax(v: &[i8]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A model bound to a configuration.
struct Executor<'a> {
    model: &'a NetworkModel,
    mults: Vec<Option<&'a Multiplier>>,
    requant: Vec<Option<Requant>>,
}

impl<'a> Executor<'a> {
    fn new(model: &'a NetworkModel, cfg: &'a ApproxConfig) -> Result<Self> {
        cfg.check(model)?;
        let requant = model
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| l.params().map(|p| Requant::new(model, i, p)))
            .collect();
        Ok(Executor {
            model,
            mults: cfg.per_layer(),
            requant,
        })
    }

    fn run_layer(&self, i: usize, x: &[i8], out: &mut Vec<i8>) {
        out.clear();
        let model = self.model;
        let in_shape = model.layer_input_shape(i);
        match &model.layers()[i] {
            Layer::Dense { params, .. } => {
                let m = self.mults[i].expect("computational layer");
                let rq = self.requant[i].as_ref().expect("computational layer");
                let zx = model.layer_input_qparams(i).zero_point;
                with_multiplier!(m, |mul| dense_kernel(
                    mul,
                    x,
                    params,
                    model.weight_sums(i),
                    zx,
                    rq,
                    out
                ));
            }
            Layer::Conv2D { geometry, params } => {
                let m = self.mults[i].expect("computational layer");
                let rq = self.requant[i].as_ref().expect("computational layer");
                let zx = model.layer_input_qparams(i).zero_point;
                with_multiplier!(m, |mul| conv_kernel(
                    mul,
                    geometry,
                    in_shape,
                    x,
                    params,
                    model.weight_sums(i),
                    zx,
                    rq,
                    out
                ));
            }
            Layer::MaxPool2D(p) => max_pool(p, in_shape, x, out),
            Layer::Flatten => out.extend_from_slice(x),
            Layer::ReLU => {
                let z = model.layer_input_qparams(i).zero_i8();
                out.extend(x.iter().map(|&v| v.max(z)));
            }
        }
    }

    /// All layer outputs, flipping every site in `faults` as soon as its
    /// layer has produced its output.
    fn trace(&self, input: &[i8], faults: &[FaultSite]) -> Vec<Vec<i8>> {
        let n = self.model.layers().len();
        let mut outs: Vec<Vec<i8>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut y = Vec::new();
            let x: &[i8] = if i == 0 { input } else { &outs[i - 1] };
            self.run_layer(i, x, &mut y);
            for f in faults.iter().filter(|f| f.layer_index == i) {
                y[f.element_index] = flip_bit(y[f.element_index], f.bit);
            }
            outs.push(y);
        }
        outs
    }
}

fn check_input(model: &NetworkModel, input: &Tensor) -> Result<()> {
    if input.shape() != model.input_shape() {
        return Err(Error::Usage(format!(
            "input shape {:?} does not match model input {:?}",
            input.shape(),
            model.input_shape()
        )));
    }
    if input.qparams() != model.input_qparams() {
        return Err(Error::Usage(
            "input quantization parameters differ from the model input".into(),
        ));
    }
    Ok(())
}

fn check_sites(space: &SiteSpace, faults: &[FaultSite]) -> Result<()> {
    if let Some(f) = faults.iter().find(|f| !space.contains(f)) {
        return Err(Error::Usage(format!(
            "fault site {f} is outside the activation site space"
        )));
    }
    Ok(())
}

/// Every layer's output tensor with all `faults` applied.
pub fn forward_trace_with_faults(
    model: &NetworkModel,
    input: &Tensor,
    cfg: &ApproxConfig,
    faults: &[FaultSite],
) -> Result<Vec<Vec<i8>>> {
    check_input(model, input)?;
    check_sites(&model.site_space(), faults)?;
    Ok(Executor::new(model, cfg)?.trace(input.data(), faults))
}

pub fn forward_trace(
    model: &NetworkModel,
    input: &Tensor,
    cfg: &ApproxConfig,
    fault: Option<FaultSite>,
) -> Result<Vec<Vec<i8>>> {
    forward_trace_with_faults(model, input, cfg, fault.as_slice())
}

/// Predicted class: argmax over the final quantized logits (first on ties).
pub fn forward(
    model: &NetworkModel,
    input: &Tensor,
    cfg: &ApproxConfig,
    fault: Option<FaultSite>,
) -> Result<usize> {
    let trace = forward_trace(model, input, cfg, fault)?;
    Ok(argmax(trace.last().expect("non-empty model")))
}

/// Fraction of `dataset` classified correctly, with `fault` (if any)
/// applied identically to every image.
pub fn evaluate_accuracy(
    model: &NetworkModel,
    dataset: &Dataset,
    cfg: &ApproxConfig,
    fault: Option<FaultSite>,
) -> Result<f64> {
    dataset.check_compatible(model)?;
    check_sites(&model.site_space(), fault.as_slice())?;
    let exec = Executor::new(model, cfg)?;
    let faults = fault.as_slice();
    let correct = dataset
        .images()
        .par_iter()
        .zip(dataset.labels())
        .filter(|(img, &label)| {
            let t = exec.trace(img.data(), faults);
            argmax(t.last().expect("non-empty")) == label
        })
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Fault-free activations of every image under one configuration, kept so
/// that faulty runs only recompute the layers downstream of the fault.
pub struct Evaluation<'a> {
    exec: Executor<'a>,
    dataset: &'a Dataset,
    space: SiteSpace,
    traces: Vec<Vec<Vec<i8>>>,
    predictions: Vec<usize>,
    correct: usize,
}

impl<'a> Evaluation<'a> {
    pub fn new(
        model: &'a NetworkModel,
        dataset: &'a Dataset,
        cfg: &'a ApproxConfig,
    ) -> Result<Self> {
        dataset.check_compatible(model)?;
        let exec = Executor::new(model, cfg)?;
        let traces: Vec<Vec<Vec<i8>>> = dataset
            .images()
            .par_iter()
            .map(|img| exec.trace(img.data(), &[]))
            .collect();
        let predictions: Vec<usize> = traces
            .iter()
            .map(|t| argmax(t.last().expect("non-empty")))
            .collect();
        let correct = predictions
            .iter()
            .zip(dataset.labels())
            .filter(|(p, l)| p == l)
            .count();
        Ok(Evaluation {
            exec,
            dataset,
            space: model.site_space(),
            traces,
            predictions,
            correct,
        })
    }

    pub fn images(&self) -> usize {
        self.dataset.len()
    }

    /// Correctly classified images without faults.
    pub fn correct(&self) -> usize {
        self.correct
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.images() as f64
    }

    pub fn predictions(&self) -> &[usize] {
        &self.predictions
    }

    pub fn site_space(&self) -> &SiteSpace {
        &self.space
    }

    fn faulty_prediction(&self, image: usize, site: &FaultSite) -> usize {
        let cached = &self.traces[image];
        let mut current = cached[site.layer_index].clone();
        current[site.element_index] = flip_bit(current[site.element_index], site.bit);
        let mut next = Vec::new();
        for (i, clean) in cached.iter().enumerate().skip(site.layer_index + 1) {
            self.exec.run_layer(i, &current, &mut next);
            if next == *clean {
                return self.predictions[image];
            }
            std::mem::swap(&mut current, &mut next);
        }
        argmax(&current)
    }

    /// Correctly classified images with `site` flipped for every image.
    pub fn faulty_correct(&self, site: &FaultSite) -> Result<usize> {
        check_sites(&self.space, std::slice::from_ref(site))?;
        Ok((0..self.images())
            .into_par_iter()
            .filter(|&i| self.faulty_prediction(i, site) == self.dataset.labels()[i])
            .count())
    }

    pub fn faulty_accuracy(&self, site: &FaultSite) -> Result<f64> {
        Ok(self.faulty_correct(site)? as f64 / self.images() as f64)
    }
}
