//! On-disk model and dataset format.
//!
//! A model is one JSON document (`model.json`) plus little-endian raw blobs:
//! `i8` weights and `i32` biases for quantized models, `f32` for both in
//! float models (`"dtype": "f32"`). A dataset is `data.json` plus an image
//! blob (`i8` or `f32`) and a `u16` label blob. Blob paths are relative to
//! the JSON document. All layouts are row-major; Conv2D weights are
//! `[out_c][k_h][k_w][in_c]` and activations `[h][w][c]`.
//!
//! [`save_model`] always writes the canonical form (pretty JSON, blobs named
//! `layer{i}_weights.bin` / `layer{i}_bias.bin`), so loading and re-saving a
//! canonical manifest reproduces it byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Activation, ConvGeometry, Dataset, Layer, NetworkModel, Padding, PoolGeometry, QuantParams,
    QuantizedParams, Tensor,
};
use crate::quant::{FloatDataset, FloatLayer, FloatModel, FloatParams};

pub const MODEL_FORMAT: &str = "axdse-model";
pub const DATASET_FORMAT: &str = "axdse-dataset";
pub const FORMAT_VERSION: u32 = 1;
/// Recorded in quantized manifests: every non-Flatten layer output is a fault target.
pub const SITE_SPACE: &str = "layer-outputs";

pub const MODEL_FILE: &str = "model.json";
pub const DATASET_FILE: &str = "data.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    I8,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    dtype: DType,
    name: String,
    input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_qparams: Option<QuantParams>,
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fault_sites: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<serde_json::Value>,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobRef {
    blob: String,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qparams: Option<QuantParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerDoc {
    Dense {
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        activation: Activation,
        weights: BlobRef,
        bias: BlobRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output_qparams: Option<QuantParams>,
    },
    #[serde(rename = "conv2d")]
    Conv2D {
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: Padding,
        #[serde(default)]
        activation: Activation,
        weights: BlobRef,
        bias: BlobRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output_qparams: Option<QuantParams>,
    },
    #[serde(rename = "max_pool2d")]
    MaxPool2D {
        pool_h: usize,
        pool_w: usize,
        stride: usize,
    },
    Flatten,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    format: String,
    version: u32,
    dtype: DType,
    shape: Vec<usize>,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qparams: Option<QuantParams>,
    images: String,
    labels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<serde_json::Value>,
}

/// Resolves a manifest argument that may name either the JSON file or its directory.
pub fn resolve(path: &Path, default_file: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_file)
    } else {
        path.to_path_buf()
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_doc<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_bytes(path)?;
    serde_json::from_slice(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })
}

fn to_pretty_json<T: Serialize>(doc: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(doc).expect("manifest serializes");
    out.push(b'\n');
    out
}

fn check_header(path: &Path, format: &str, expected: &str, version: u32) -> Result<()> {
    if format != expected {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: format!("field `format`: expected \"{expected}\", got \"{format}\""),
        });
    }
    if version != FORMAT_VERSION {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: format!("field `version`: unsupported version {version}"),
        });
    }
    Ok(())
}

fn decode_i8(bytes: &[u8]) -> Vec<i8> {
    bytes.iter().map(|&b| b as i8).collect()
}

fn decode_i32(path: &Path, bytes: &[u8]) -> Result<Vec<i32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn decode_f32(path: &Path, bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn decode_u16(path: &Path, bytes: &[u8]) -> Result<Vec<u16>> {
    if bytes.len() % 2 != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a multiple of 2",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

fn check_len(layer: usize, what: &str, shape: &[usize], got: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != got {
        return Err(Error::layer(
            layer,
            format!("{what} blob holds {got} entries but shape {shape:?} needs {expected}"),
        ));
    }
    Ok(())
}

fn require_qparams(layer: usize, what: &str, q: Option<QuantParams>) -> Result<QuantParams> {
    let q = q.ok_or_else(|| Error::layer(layer, format!("missing field `{what}`")))?;
    q.validate()
        .map_err(|e| Error::layer(layer, format!("{what}: {e}")))?;
    Ok(q)
}

/// Loads and validates a quantized model manifest.
pub fn load_model(path: &Path) -> Result<NetworkModel> {
    let path = resolve(path, MODEL_FILE);
    let doc: ModelDoc = parse_doc(&path)?;
    check_header(&path, &doc.format, MODEL_FORMAT, doc.version)?;
    if doc.dtype != DType::I8 {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: "field `dtype`: expected \"i8\" for a quantized model".into(),
        });
    }
    let input_qparams = doc.input_qparams.ok_or_else(|| Error::Parse {
        context: path.display().to_string(),
        message: "missing field `input_qparams`".into(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.iter().enumerate() {
        let quantized = |activation: Activation,
                         weights: &BlobRef,
                         bias: &BlobRef,
                         out_q: Option<QuantParams>|
         -> Result<QuantizedParams> {
            let wq = require_qparams(i, "weights.qparams", weights.qparams)?;
            let wpath = base.join(&weights.blob);
            let wdata = decode_i8(&read_bytes(&wpath)?);
            check_len(i, "weight", &weights.shape, wdata.len())?;
            let bpath = base.join(&bias.blob);
            let bdata = decode_i32(&bpath, &read_bytes(&bpath)?)?;
            check_len(i, "bias", &bias.shape, bdata.len())?;
            Ok(QuantizedParams {
                activation,
                weights: Tensor::new(weights.shape.clone(), wdata, wq)
                    .map_err(|e| Error::layer(i, e.to_string()))?,
                bias: bdata,
                output_qparams: require_qparams(i, "output_qparams", out_q)?,
            })
        };
        layers.push(match l {
            LayerDoc::Dense {
                in_features,
                out_features,
                activation,
                weights,
                bias,
                output_qparams,
            } => Layer::Dense {
                in_features: *in_features,
                out_features: *out_features,
                params: quantized(*activation, weights, bias, *output_qparams)?,
            },
            LayerDoc::Conv2D {
                kernel_h,
                kernel_w,
                in_channels,
                out_channels,
                stride,
                padding,
                activation,
                weights,
                bias,
                output_qparams,
            } => Layer::Conv2D {
                geometry: ConvGeometry {
                    kernel_h: *kernel_h,
                    kernel_w: *kernel_w,
                    in_channels: *in_channels,
                    out_channels: *out_channels,
                    stride: *stride,
                    padding: *padding,
                },
                params: quantized(*activation, weights, bias, *output_qparams)?,
            },
            LayerDoc::MaxPool2D {
                pool_h,
                pool_w,
                stride,
            } => Layer::MaxPool2D(PoolGeometry {
                pool_h: *pool_h,
                pool_w: *pool_w,
                stride: *stride,
            }),
            LayerDoc::Flatten => Layer::Flatten,
            LayerDoc::Relu => Layer::ReLU,
        });
    }

    NetworkModel::new(
        doc.name,
        doc.input_shape,
        input_qparams,
        layers,
        doc.num_classes,
    )
}

fn layer_docs<P>(
    layers: &[Layer<P>],
    mut computational: impl FnMut(usize, &P) -> (Activation, BlobRef, BlobRef, Option<QuantParams>),
) -> Vec<LayerDoc> {
    layers
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            Layer::Dense {
                in_features,
                out_features,
                params,
            } => {
                let (activation, weights, bias, output_qparams) = computational(i, params);
                LayerDoc::Dense {
                    in_features: *in_features,
                    out_features: *out_features,
                    activation,
                    weights,
                    bias,
                    output_qparams,
                }
            }
            Layer::Conv2D {
                geometry: g,
                params,
            } => {
                let (activation, weights, bias, output_qparams) = computational(i, params);
                LayerDoc::Conv2D {
                    kernel_h: g.kernel_h,
                    kernel_w: g.kernel_w,
                    in_channels: g.in_channels,
                    out_channels: g.out_channels,
                    stride: g.stride,
                    padding: g.padding,
                    activation,
                    weights,
                    bias,
                    output_qparams,
                }
            }
            Layer::MaxPool2D(p) => LayerDoc::MaxPool2D {
                pool_h: p.pool_h,
                pool_w: p.pool_w,
                stride: p.stride,
            },
            Layer::Flatten => LayerDoc::Flatten,
            Layer::ReLU => LayerDoc::Relu,
        })
        .collect()
}

fn weight_blob(i: usize) -> String {
    format!("layer{i}_weights.bin")
}

fn bias_blob(i: usize) -> String {
    format!("layer{i}_bias.bin")
}

/// Writes `model` in canonical form into `dir`, returning the manifest path.
pub fn save_model(model: &NetworkModel, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blobs: Vec<(String, Vec<u8>)> = Vec::new();
    let layers = layer_docs(model.layers(), |i, p| {
        let w: Vec<u8> = p.weights.data().iter().map(|&v| v as u8).collect();
        let b: Vec<u8> = p.bias.iter().flat_map(|v| v.to_le_bytes()).collect();
        blobs.push((weight_blob(i), w));
        blobs.push((bias_blob(i), b));
        (
            p.activation,
            BlobRef {
                blob: weight_blob(i),
                shape: p.weights.shape().to_vec(),
                qparams: Some(p.weights.qparams()),
            },
            BlobRef {
                blob: bias_blob(i),
                shape: vec![p.bias.len()],
                qparams: None,
            },
            Some(p.output_qparams),
        )
    });
    let doc = ModelDoc {
        format: MODEL_FORMAT.into(),
        version: FORMAT_VERSION,
        dtype: DType::I8,
        name: model.name().to_string(),
        input_shape: model.input_shape().to_vec(),
        input_qparams: Some(model.input_qparams()),
        num_classes: model.num_classes(),
        fault_sites: Some(SITE_SPACE.into()),
        normalization: None,
        layers,
    };
    for (name, bytes) in &blobs {
        write_bytes(&dir.join(name), bytes)?;
    }
    let path = dir.join(MODEL_FILE);
    write_bytes(&path, &to_pretty_json(&doc))?;
    Ok(path)
}

/// Loads a float (`"dtype": "f32"`) model manifest.
pub fn load_float_model(path: &Path) -> Result<FloatModel> {
    let path = resolve(path, MODEL_FILE);
    let doc: ModelDoc = parse_doc(&path)?;
    check_header(&path, &doc.format, MODEL_FORMAT, doc.version)?;
    if doc.dtype != DType::F32 {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: "field `dtype`: expected \"f32\" for a float model".into(),
        });
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let float_params =
        |i: usize, activation: Activation, w: &BlobRef, b: &BlobRef| -> Result<FloatParams> {
            let wpath = base.join(&w.blob);
            let weights = decode_f32(&wpath, &read_bytes(&wpath)?)?;
            check_len(i, "weight", &w.shape, weights.len())?;
            let bpath = base.join(&b.blob);
            let bias = decode_f32(&bpath, &read_bytes(&bpath)?)?;
            check_len(i, "bias", &b.shape, bias.len())?;
            Ok(FloatParams {
                activation,
                weight_shape: w.shape.clone(),
                weights,
                bias,
            })
        };
    let mut layers: Vec<FloatLayer> = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.iter().enumerate() {
        layers.push(match l {
            LayerDoc::Dense {
                in_features,
                out_features,
                activation,
                weights,
                bias,
                ..
            } => Layer::Dense {
                in_features: *in_features,
                out_features: *out_features,
                params: float_params(i, *activation, weights, bias)?,
            },
            LayerDoc::Conv2D {
                kernel_h,
                kernel_w,
                in_channels,
                out_channels,
                stride,
                padding,
                activation,
                weights,
                bias,
                ..
            } => Layer::Conv2D {
                geometry: ConvGeometry {
                    kernel_h: *kernel_h,
                    kernel_w: *kernel_w,
                    in_channels: *in_channels,
                    out_channels: *out_channels,
                    stride: *stride,
                    padding: *padding,
                },
                params: float_params(i, *activation, weights, bias)?,
            },
            LayerDoc::MaxPool2D {
                pool_h,
                pool_w,
                stride,
            } => Layer::MaxPool2D(PoolGeometry {
                pool_h: *pool_h,
                pool_w: *pool_w,
                stride: *stride,
            }),
            LayerDoc::Flatten => Layer::Flatten,
            LayerDoc::Relu => Layer::ReLU,
        });
    }
    FloatModel::new(doc.name, doc.input_shape, layers, doc.num_classes)
}

/// Writes a float model in canonical form into `dir`.
pub fn save_float_model(model: &FloatModel, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blobs: Vec<(String, Vec<u8>)> = Vec::new();
    let layers = layer_docs(model.layers(), |i, p| {
        blobs.push((
            weight_blob(i),
            p.weights.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ));
        blobs.push((
            bias_blob(i),
            p.bias.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ));
        (
            p.activation,
            BlobRef {
                blob: weight_blob(i),
                shape: p.weight_shape.clone(),
                qparams: None,
            },
            BlobRef {
                blob: bias_blob(i),
                shape: vec![p.bias.len()],
                qparams: None,
            },
            None,
        )
    });
    let doc = ModelDoc {
        format: MODEL_FORMAT.into(),
        version: FORMAT_VERSION,
        dtype: DType::F32,
        name: model.name().to_string(),
        input_shape: model.input_shape().to_vec(),
        input_qparams: None,
        num_classes: model.num_classes(),
        fault_sites: None,
        normalization: None,
        layers,
    };
    for (name, bytes) in &blobs {
        write_bytes(&dir.join(name), bytes)?;
    }
    let path = dir.join(MODEL_FILE);
    write_bytes(&path, &to_pretty_json(&doc))?;
    Ok(path)
}

fn load_dataset_doc(path: &Path) -> Result<(PathBuf, DatasetDoc, Vec<usize>)> {
    let path = resolve(path, DATASET_FILE);
    let doc: DatasetDoc = parse_doc(&path)?;
    check_header(&path, &doc.format, DATASET_FORMAT, doc.version)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let lpath = base.join(&doc.labels);
    let labels: Vec<usize> = decode_u16(&lpath, &read_bytes(&lpath)?)?
        .into_iter()
        .map(usize::from)
        .collect();
    if labels.len() != doc.count {
        return Err(Error::Validation(format!(
            "{}: {} labels but count is {}",
            lpath.display(),
            labels.len(),
            doc.count
        )));
    }
    Ok((base, doc, labels))
}

/// Loads a quantized (`i8`) dataset.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (base, doc, labels) = load_dataset_doc(path)?;
    if doc.dtype != DType::I8 {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: "field `dtype`: expected \"i8\" for a quantized dataset".into(),
        });
    }
    let qparams = doc.qparams.ok_or_else(|| Error::Parse {
        context: path.display().to_string(),
        message: "missing field `qparams`".into(),
    })?;
    let images = decode_i8(&read_bytes(&base.join(&doc.images))?);
    Dataset::from_flat(doc.shape, qparams, &images, labels)
}

/// Writes a quantized dataset into `dir` (`data.json`, `images.bin`, `labels.bin`).
pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let images: Vec<u8> = data
        .images()
        .iter()
        .flat_map(|t| t.data().iter().map(|&v| v as u8))
        .collect();
    write_bytes(&dir.join("images.bin"), &images)?;
    write_bytes(&dir.join("labels.bin"), &encode_labels(data.labels())?)?;
    let doc = DatasetDoc {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        dtype: DType::I8,
        shape: data.shape().to_vec(),
        count: data.len(),
        qparams: Some(data.qparams()),
        images: "images.bin".into(),
        labels: "labels.bin".into(),
        normalization: None,
    };
    let path = dir.join(DATASET_FILE);
    write_bytes(&path, &to_pretty_json(&doc))?;
    Ok(path)
}

fn encode_labels(labels: &[usize]) -> Result<Vec<u8>> {
    labels
        .iter()
        .map(|&l| {
            u16::try_from(l)
                .map(u16::to_le_bytes)
                .map_err(|_| Error::Validation(format!("label {l} does not fit in u16")))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.concat())
}

/// Loads a float (`f32`) dataset.
pub fn load_float_dataset(path: &Path) -> Result<FloatDataset> {
    let (base, doc, labels) = load_dataset_doc(path)?;
    if doc.dtype != DType::F32 {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: "field `dtype`: expected \"f32\" for a float dataset".into(),
        });
    }
    let ipath = base.join(&doc.images);
    let images = decode_f32(&ipath, &read_bytes(&ipath)?)?;
    FloatDataset::from_flat(doc.shape, &images, labels)
}

/// Writes a float dataset into `dir`.
pub fn save_float_dataset(data: &FloatDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let images: Vec<u8> = data
        .images()
        .iter()
        .flat_map(|img| img.iter().flat_map(|v| v.to_le_bytes()))
        .collect();
    write_bytes(&dir.join("images.bin"), &images)?;
    write_bytes(&dir.join("labels.bin"), &encode_labels(data.labels())?)?;
    let doc = DatasetDoc {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        dtype: DType::F32,
        shape: data.shape().to_vec(),
        count: data.len(),
        qparams: None,
        images: "images.bin".into(),
        labels: "labels.bin".into(),
        normalization: None,
    };
    let path = dir.join(DATASET_FILE);
    write_bytes(&path, &to_pretty_json(&doc))?;
    Ok(path)
}
