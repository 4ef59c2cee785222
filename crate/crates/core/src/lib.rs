//! Design-space exploration for 8-bit quantized networks whose layers may
//! run on approximate multipliers.
//!
//! The pipeline: load (or quantize) a [`NetworkModel`], pick per-layer
//! multipliers with an [`ApproxConfig`], measure accuracy with the
//! bit-exact [`engine`], measure fault vulnerability with statistical
//! single-bit activation fault injection ([`faultsim`]), and rank
//! configurations by accuracy, vulnerability and cost ([`dse`]).

pub mod axmult;
pub mod dse;
pub mod engine;
pub mod error;
pub mod faultsim;
pub mod manifest;
pub mod model;
pub mod quant;
pub mod report;

pub use axmult::{
    characterize, CostCoefficients, ErrorMetrics, Multiplier, MultiplierKind, MultiplierProfile,
};
pub use dse::{
    cost_proxies, enumerate_configs, evaluate_point, pareto_frontier, CostProxies, DesignPoint,
    Direction, Explorer, Objective, ObjectiveField,
};
pub use engine::{evaluate_accuracy, forward, ApproxConfig, Evaluation, FaultSite};
pub use error::{Error, Result};
pub use faultsim::{
    calibrate_repetitions, run_campaign, sample_sites, statistical_sample_size, CampaignPlan,
    CampaignResult,
};
pub use manifest::{
    load_dataset, load_float_dataset, load_float_model, load_model, save_dataset, save_model,
};
pub use model::{
    fault_site_count, mult_count, Activation, Dataset, Layer, LayerSpec, NetworkModel, QuantParams,
    Tensor,
};
pub use quant::{
    calibrate, quantize_model, quantize_value, CalibrationStats, FloatDataset, FloatModel,
};
