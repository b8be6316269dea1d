use serde::{Deserialize, Serialize};

use super::CostError;
use crate::scalar::Scalar;

/// Tokens per paged KV-cache block.
pub const KV_BLOCK_TOKENS: u64 = 16;
/// Visual tokens per image-cache block.
pub const IMAGE_BLOCK_TOKENS: u64 = 576;

/// Architecture constants of a vision-language model.
///
/// The FFN intermediate size is fixed at four times the hidden size by the
/// cost formulas, so it is not a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Deserialize<'de> + num_traits::One"))]
pub struct ModelProfile<T> {
    pub lang_hidden: u64,
    pub lang_heads: u64,
    pub lang_layers: u64,
    pub vision_hidden: u64,
    pub vision_heads: u64,
    pub vision_layers: u64,
    /// Fraction of attention heads that store K/V (1 for MHA, <1 for GQA).
    #[serde(default = "one")]
    pub kv_head_ratio: T,
    #[serde(default = "two")]
    pub dtype_bytes: u64,
}

fn one<T: num_traits::One>() -> T {
    T::one()
}

fn two() -> u64 {
    2
}

/// Names of the built-in model presets.
pub const MODEL_PRESETS: [&str; 3] = ["llava-1.5-7b", "llava-next-7b", "qwen2-vl-7b"];

impl<T: Scalar> ModelProfile<T> {
    /// 7B language model with a 24-layer ViT-L vision tower.
    pub fn llava_7b() -> Self {
        Self {
            lang_hidden: 4096,
            lang_heads: 32,
            lang_layers: 32,
            vision_hidden: 1024,
            vision_heads: 16,
            vision_layers: 24,
            kv_head_ratio: T::one(),
            dtype_bytes: 2,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        // All three presets share the same tower shapes; they differ in how
        // many visual tokens an image produces, which traces carry directly.
        MODEL_PRESETS.contains(&name).then(Self::llava_7b)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let counts = [
            ("lang_hidden", self.lang_hidden),
            ("lang_heads", self.lang_heads),
            ("lang_layers", self.lang_layers),
            ("vision_hidden", self.vision_hidden),
            ("vision_heads", self.vision_heads),
            ("vision_layers", self.vision_layers),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CostError::InvalidModel(format!("{name} must be at least 1")));
            }
        }
        if !self.lang_hidden.is_multiple_of(self.lang_heads) {
            return Err(CostError::InvalidModel(
                "lang_hidden must be divisible by lang_heads".into(),
            ));
        }
        if !self.vision_hidden.is_multiple_of(self.vision_heads) {
            return Err(CostError::InvalidModel(
                "vision_hidden must be divisible by vision_heads".into(),
            ));
        }
        if !(self.kv_head_ratio > T::zero() && self.kv_head_ratio <= T::one()) {
            return Err(CostError::InvalidModel("kv_head_ratio must be in (0, 1]".into()));
        }
        if ![1, 2, 4].contains(&self.dtype_bytes) {
            return Err(CostError::InvalidModel("dtype_bytes must be 1, 2 or 4".into()));
        }
        Ok(())
    }

    /// Bytes of K and V stored per token across all language layers.
    pub fn kv_bytes_per_token(&self) -> T {
        T::of_u64(2 * self.lang_hidden * self.lang_layers * self.dtype_bytes) * self.kv_head_ratio
    }

    /// Bytes of one projected visual token held in the image cache.
    pub fn image_bytes_per_token(&self) -> T {
        T::of_u64(self.lang_hidden * self.dtype_bytes)
    }
}

/// Machine constants for one serving instance (one GPU).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile<T> {
    /// FLOP/s.
    pub peak_flops: T,
    /// Bytes/s.
    pub mem_bandwidth: T,
    pub gpu_memory_bytes: T,
    pub model_weight_bytes: T,
    /// Bytes/s between instances.
    pub interconnect_bandwidth: T,
    /// Seconds of fixed control latency per migration.
    pub migration_fixed_overhead: T,
    /// Seconds of fixed launch/scheduling cost per batch.
    pub batch_fixed_overhead: T,
}

impl<T: Scalar> Default for HardwareProfile<T> {
    /// A 141 GB H20-class device. Compute and bandwidth are nominal figures.
    fn default() -> Self {
        Self {
            peak_flops: T::of_f64(148e12),
            mem_bandwidth: T::of_f64(4.8e12),
            gpu_memory_bytes: T::of_f64(141e9),
            model_weight_bytes: T::of_f64(15e9),
            interconnect_bandwidth: T::of_f64(200e9),
            migration_fixed_overhead: T::of_f64(0.5e-3),
            batch_fixed_overhead: T::of_f64(1e-3),
        }
    }
}

impl<T: Scalar> HardwareProfile<T> {
    pub fn validate(&self) -> Result<(), CostError> {
        let positive = [
            ("peak_flops", self.peak_flops),
            ("mem_bandwidth", self.mem_bandwidth),
            ("gpu_memory_bytes", self.gpu_memory_bytes),
            ("model_weight_bytes", self.model_weight_bytes),
            ("interconnect_bandwidth", self.interconnect_bandwidth),
        ];
        for (name, v) in positive {
            if !(v > T::zero() && v.is_finite()) {
                return Err(CostError::InvalidHardware(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("migration_fixed_overhead", self.migration_fixed_overhead),
            ("batch_fixed_overhead", self.batch_fixed_overhead),
        ] {
            if !(v >= T::zero() && v.is_finite()) {
                return Err(CostError::InvalidHardware(format!("{name} must be >= 0")));
            }
        }
        if self.gpu_memory_bytes <= self.model_weight_bytes {
            return Err(CostError::InvalidHardware(
                "gpu_memory_bytes must exceed model_weight_bytes".into(),
            ));
        }
        Ok(())
    }

    /// Device memory left over after loading weights.
    pub fn cache_memory_bytes(&self) -> T {
        self.gpu_memory_bytes - self.model_weight_bytes
    }
}

/// Number of `block_tokens`-sized blocks needed to hold `tokens`.
pub fn blocks_for(tokens: u64, block_tokens: u64) -> u64 {
    tokens.div_ceil(block_tokens)
}

/// Bytes of KV cache for `tokens` tokens of context.
pub fn kv_cache_bytes<T: Scalar>(tokens: u64, model: &ModelProfile<T>) -> T {
    T::of_u64(tokens) * model.kv_bytes_per_token()
}

/// Bytes of image cache for `visual_tokens` projected embeddings.
pub fn image_cache_bytes<T: Scalar>(visual_tokens: u64, model: &ModelProfile<T>) -> T {
    T::of_u64(visual_tokens) * model.image_bytes_per_token()
}
