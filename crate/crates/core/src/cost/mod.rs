//! Analytical cost model: per-operation FLOP/byte counts, batch aggregation
//! and a roofline latency closure with dual-stream (vision + language)
//! execution.

pub mod formulas;
pub mod profile;

use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use formulas::{op_flops, op_mem_elems, OpKind, StageKind};
pub use profile::{
    blocks_for, image_cache_bytes, kv_cache_bytes, HardwareProfile, ModelProfile, IMAGE_BLOCK_TOKENS, KV_BLOCK_TOKENS,
    MODEL_PRESETS,
};

use crate::scalar::Scalar;
use formulas::{decode_kv_read_elems, weight_elems};

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("arithmetic intensity is undefined for zero bytes of memory traffic")]
    UndefinedIntensity,
    #[error("invalid model profile: {0}")]
    InvalidModel(String),
    #[error("invalid hardware profile: {0}")]
    InvalidHardware(String),
}

/// FLOPs and memory traffic of some amount of work.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkVector<T> {
    pub flops: T,
    pub bytes: T,
}

impl<T: Scalar> WorkVector<T> {
    pub fn new(flops: T, bytes: T) -> Self {
        Self { flops, bytes }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.flops == T::zero() && self.bytes == T::zero()
    }
}

impl<T: Scalar> Add for WorkVector<T> {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self::new(self.flops + rhs.flops, self.bytes + rhs.bytes)
    }
}

impl<T: Scalar> AddAssign for WorkVector<T> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Scalar> Sum for WorkVector<T> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), Add::add)
    }
}

/// Work of one batch on the vision tower and on the language model.
///
/// * `encode_images` holds the visual-token count of every image encoded.
/// * `prefill_chunks` holds the token count of every prefill chunk.
/// * `decode_contexts` holds the current KV length of every decode entry.
///
/// Each entry is evaluated as a batch of one; weight reads are charged once
/// per layer per tower, and only if the tower has any work in the batch.
/// KV reads of decode attention are scaled by the model's `kv_head_ratio`.
pub fn batch_work<T: Scalar>(
    encode_images: &[u64],
    prefill_chunks: &[u64],
    decode_contexts: &[u64],
    model: &ModelProfile<T>,
) -> (WorkVector<T>, WorkVector<T>) {
    let dtype = T::of_u64(model.dtype_bytes);

    let mut vision = WorkVector::zero();
    if !encode_images.is_empty() {
        let (h, m) = (model.vision_hidden, model.vision_heads);
        let mut flops = 0u128;
        let mut elems = 0u128;
        for &t in encode_images {
            for op in OpKind::ALL {
                flops += op_flops(op, StageKind::Encode, 1, t, h);
                elems += op_mem_elems(op, StageKind::Encode, 1, t, h, m) - weight_elems(op, h);
            }
        }
        elems += weights_per_layer(h);
        let layers = model.vision_layers as u128;
        vision = WorkVector::new(T::of_u128(flops * layers), T::of_u128(elems * layers) * dtype);
    }

    let mut language = WorkVector::zero();
    if !prefill_chunks.is_empty() || !decode_contexts.is_empty() {
        let (h, m) = (model.lang_hidden, model.lang_heads);
        let mut flops = 0u128;
        let mut elems = 0u128;
        let mut kv_elems = 0u128;
        for &s in prefill_chunks {
            for op in OpKind::ALL {
                flops += op_flops(op, StageKind::Prefill, 1, s, h);
                elems += op_mem_elems(op, StageKind::Prefill, 1, s, h, m) - weight_elems(op, h);
            }
        }
        for &s in decode_contexts {
            for op in OpKind::ALL {
                flops += op_flops(op, StageKind::Decode, 1, s, h);
                elems += op_mem_elems(op, StageKind::Decode, 1, s, h, m) - weight_elems(op, h);
            }
            let kv = decode_kv_read_elems(1, s, h);
            elems -= kv;
            kv_elems += kv;
        }
        elems += weights_per_layer(h);
        let layers = model.lang_layers as u128;
        let bytes = (T::of_u128(elems * layers) + T::of_u128(kv_elems * layers) * model.kv_head_ratio) * dtype;
        language = WorkVector::new(T::of_u128(flops * layers), bytes);
    }

    (vision, language)
}

fn weights_per_layer(hidden: u64) -> u128 {
    OpKind::ALL.iter().map(|&op| weight_elems(op, hidden)).sum()
}

/// FLOPs per byte of memory traffic.
pub fn arithmetic_intensity<T: Scalar>(w: &WorkVector<T>) -> Result<T, CostError> {
    if w.bytes <= T::zero() {
        return Err(CostError::UndefinedIntensity);
    }
    Ok(w.flops / w.bytes)
}

/// Seconds to execute `w`: the binding roofline bound plus the fixed
/// per-batch overhead.
pub fn roofline_latency<T: Scalar>(w: &WorkVector<T>, hw: &HardwareProfile<T>) -> T {
    let compute = w.flops / hw.peak_flops;
    let memory = w.bytes / hw.mem_bandwidth;
    compute.max(memory) + hw.batch_fixed_overhead
}

/// Seconds to execute vision and language work concurrently on one device.
/// Both streams draw on the same compute and bandwidth, so their demands pool.
pub fn dual_stream_latency<T: Scalar>(vision: &WorkVector<T>, language: &WorkVector<T>, hw: &HardwareProfile<T>) -> T {
    roofline_latency(&(*vision + *language), hw)
}

/// Seconds to execute the two streams one after the other.
pub fn sequential_latency<T: Scalar>(vision: &WorkVector<T>, language: &WorkVector<T>, hw: &HardwareProfile<T>) -> T {
    roofline_latency(vision, hw) + roofline_latency(language, hw)
}
