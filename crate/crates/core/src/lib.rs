//! Discrete-event simulator for multimodal LLM serving clusters that split
//! image encoding, prefill and decode across typed instances.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod cost;
pub mod engine;
pub mod metrics;
pub mod migration;
pub mod profiler;
pub mod scalar;
pub mod workload;

pub use scalar::Scalar;

/// Cost-model types at simulator precision.
pub type Model = cost::ModelProfile<f64>;
pub type Hardware = cost::HardwareProfile<f64>;
pub type Work = cost::WorkVector<f64>;
