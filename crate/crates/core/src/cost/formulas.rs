//! Per-layer FLOP and memory-access counts of the three dominant transformer
//! operations, for each inference stage.
//!
//! `tokens` means the per-image token count `T` for encode and the sequence
//! length `S` for prefill and decode. Decode projections and FFN ignore it,
//! since every decode request contributes exactly one new token.
//!
//! Memory access is returned in elements; multiply by the element width to
//! get bytes. Softmax and layer norms are fused into the matmul kernels and
//! are not counted.
//!
//! The decode QKVO FLOP count is `8BH^2`. The published table prints `8BH`,
//! which breaks the `2 * tokens * H * H` pattern every other projection row
//! follows (the decode FFN row is `16BH^2`); the squared form is used here.

use serde::{Deserialize, Serialize};

/// Inference stage a piece of work belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageKind {
    Encode,
    Prefill,
    Decode,
}

impl StageKind {
    pub const ALL: [StageKind; 3] = [StageKind::Encode, StageKind::Prefill, StageKind::Decode];
}

/// Operation row of the cost table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    QkvoProj,
    Ffn,
    Attention,
}

impl OpKind {
    pub const ALL: [OpKind; 3] = [OpKind::QkvoProj, OpKind::Ffn, OpKind::Attention];
}

/// FLOPs of one layer's `op` for a batch of `batch` sequences.
pub fn op_flops(op: OpKind, stage: StageKind, batch: u64, tokens: u64, hidden: u64) -> u128 {
    let (b, t, h) = (batch as u128, tokens as u128, hidden as u128);
    match (op, stage) {
        (OpKind::QkvoProj, StageKind::Decode) => 8 * b * h * h,
        (OpKind::QkvoProj, _) => 8 * b * t * h * h,
        (OpKind::Ffn, StageKind::Decode) => 16 * b * h * h,
        (OpKind::Ffn, _) => 16 * b * t * h * h,
        (OpKind::Attention, StageKind::Decode) => 4 * b * t * h,
        (OpKind::Attention, _) => 4 * b * t * t * h,
    }
}

/// Memory-access element count of one layer's `op`. `heads` only enters the
/// attention rows.
pub fn op_mem_elems(op: OpKind, stage: StageKind, batch: u64, tokens: u64, hidden: u64, heads: u64) -> u128 {
    let (b, t, h, m) = (batch as u128, tokens as u128, hidden as u128, heads as u128);
    match (op, stage) {
        (OpKind::QkvoProj, StageKind::Decode) => 8 * b * h + 4 * h * h,
        (OpKind::QkvoProj, _) => 8 * b * t * h + 4 * h * h,
        (OpKind::Ffn, StageKind::Decode) => 10 * b * h + 8 * h * h,
        (OpKind::Ffn, _) => 10 * b * t * h + 8 * h * h,
        (OpKind::Attention, StageKind::Decode) => 4 * b * t * m + 2 * b * h * (t + 1),
        (OpKind::Attention, _) => 4 * b * t * h + 2 * b * t * t * m,
    }
}

/// Weight-read part of [`op_mem_elems`]; independent of batch composition.
pub fn weight_elems(op: OpKind, hidden: u64) -> u128 {
    let h = hidden as u128;
    match op {
        OpKind::QkvoProj => 4 * h * h,
        OpKind::Ffn => 8 * h * h,
        OpKind::Attention => 0,
    }
}

/// KV-cache read part of the decode attention row, `2BH(S+1)`.
pub fn decode_kv_read_elems(batch: u64, context: u64, hidden: u64) -> u128 {
    2 * batch as u128 * hidden as u128 * (context as u128 + 1)
}
