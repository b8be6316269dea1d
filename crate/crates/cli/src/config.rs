//! TOML run configuration.
//!
//! ```toml
//! config_version = 1
//! seed = 0
//!
//! [model]
//! preset = "llava-1.5-7b"
//!
//! [hardware]
//! interconnect_bandwidth = 200e9
//!
//! [cluster]
//! method = "1E3P4D"          # or "auto"
//! instances = 8              # used with method = "auto"
//! target_policy = "round_robin"
//!
//! [slo]
//! ttft_s = 4.0
//! tbt_s = 0.08
//!
//! [scheduler]
//! policy = "stage_level"
//!
//! [output]
//! dir = "out"
//! csv = true
//! ```
//!
//! Every section is optional and every key has a default. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use epd_sim::cluster::{DisaggregationMethod, SimConfig};
use epd_sim::cost::{HardwareProfile, ModelProfile, MODEL_PRESETS};
use epd_sim::engine::{AlphaBeta, Ceilings, SchedulerPolicy};
use epd_sim::migration::TargetPolicy;
use epd_sim::workload::SloSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub hardware: HardwareSection,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub slo: SloSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Check simulator invariants after every event; set from the command line.
    #[serde(skip)]
    pub check_invariants: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            seed: 0,
            model: ModelSection::default(),
            hardware: HardwareSection::default(),
            cluster: ClusterSection::default(),
            slo: SloSection::default(),
            scheduler: SchedulerSection::default(),
            output: OutputSection::default(),
            check_invariants: false,
        }
    }
}

/// A preset name, optionally with individual fields overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_preset")]
    pub preset: String,
    pub lang_hidden: Option<u64>,
    pub lang_heads: Option<u64>,
    pub lang_layers: Option<u64>,
    pub vision_hidden: Option<u64>,
    pub vision_heads: Option<u64>,
    pub vision_layers: Option<u64>,
    pub kv_head_ratio: Option<f64>,
    pub dtype_bytes: Option<u64>,
}

fn default_preset() -> String {
    "llava-1.5-7b".into()
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            lang_hidden: None,
            lang_heads: None,
            lang_layers: None,
            vision_hidden: None,
            vision_heads: None,
            vision_layers: None,
            kv_head_ratio: None,
            dtype_bytes: None,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelProfile<f64>, CliError> {
        let mut m = ModelProfile::preset(&self.preset).ok_or_else(|| {
            CliError::Config(format!(
                "unknown model preset {:?}; expected one of {}",
                self.preset,
                MODEL_PRESETS.join(", ")
            ))
        })?;
        let set = |dst: &mut u64, v: Option<u64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut m.lang_hidden, self.lang_hidden);
        set(&mut m.lang_heads, self.lang_heads);
        set(&mut m.lang_layers, self.lang_layers);
        set(&mut m.vision_hidden, self.vision_hidden);
        set(&mut m.vision_heads, self.vision_heads);
        set(&mut m.vision_layers, self.vision_layers);
        set(&mut m.dtype_bytes, self.dtype_bytes);
        if let Some(r) = self.kv_head_ratio {
            m.kv_head_ratio = r;
        }
        m.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(m)
    }
}

/// Overrides of the default device.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSection {
    pub peak_flops: Option<f64>,
    pub mem_bandwidth: Option<f64>,
    pub gpu_memory_bytes: Option<f64>,
    pub model_weight_bytes: Option<f64>,
    pub interconnect_bandwidth: Option<f64>,
    pub migration_fixed_overhead: Option<f64>,
    pub batch_fixed_overhead: Option<f64>,
}

impl HardwareSection {
    pub fn resolve(&self) -> Result<HardwareProfile<f64>, CliError> {
        let mut h = HardwareProfile::default();
        let fields = [
            (&mut h.peak_flops, self.peak_flops),
            (&mut h.mem_bandwidth, self.mem_bandwidth),
            (&mut h.gpu_memory_bytes, self.gpu_memory_bytes),
            (&mut h.model_weight_bytes, self.model_weight_bytes),
            (&mut h.interconnect_bandwidth, self.interconnect_bandwidth),
            (&mut h.migration_fixed_overhead, self.migration_fixed_overhead),
            (&mut h.batch_fixed_overhead, self.batch_fixed_overhead),
        ];
        for (dst, v) in fields {
            if let Some(v) = v {
                *dst = v;
            }
        }
        h.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    /// A method such as `1E3P4D`, or `auto` to run the profiler first.
    #[serde(default = "default_method")]
    pub method: String,
    /// Cluster size for `auto`.
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub target_policy: TargetPolicy,
}

fn default_method() -> String {
    "8EPD".into()
}

fn default_instances() -> usize {
    8
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self {
            method: default_method(),
            instances: default_instances(),
            target_policy: TargetPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SloSection {
    #[serde(default = "default_ttft")]
    pub ttft_s: f64,
    #[serde(default = "default_tbt")]
    pub tbt_s: f64,
}

fn default_ttft() -> f64 {
    4.0
}

fn default_tbt() -> f64 {
    0.08
}

impl Default for SloSection {
    fn default() -> Self {
        Self {
            ttft_s: default_ttft(),
            tbt_s: default_tbt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    #[serde(default)]
    pub policy: SchedulerPolicy,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha")]
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_token_ceiling")]
    pub token_ceiling: u64,
    #[serde(default = "default_image_ceiling")]
    pub image_ceiling: u64,
    #[serde(default = "default_image_fraction")]
    pub image_cache_fraction: f64,
    #[serde(default)]
    pub preprocess_delay_s: f64,
}

fn default_alpha() -> f64 {
    0.5
}

fn default_gamma() -> f64 {
    0.9
}

fn default_token_ceiling() -> u64 {
    Ceilings::default().tokens
}

fn default_image_ceiling() -> u64 {
    Ceilings::default().images
}

fn default_image_fraction() -> f64 {
    0.1
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self {
            policy: SchedulerPolicy::default(),
            alpha: default_alpha(),
            beta: default_alpha(),
            gamma: default_gamma(),
            token_ceiling: default_token_ceiling(),
            image_ceiling: default_image_ceiling(),
            image_cache_fraction: default_image_fraction(),
            preprocess_delay_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Also write per-request metrics as CSV.
    #[serde(default = "default_true")]
    pub csv: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            csv: true,
        }
    }
}

/// Where the cluster shape comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodChoice {
    Fixed(DisaggregationMethod),
    Auto { instances: usize },
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.config_version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                cfg.config_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn method(&self) -> Result<MethodChoice, CliError> {
        if self.cluster.method.eq_ignore_ascii_case("auto") {
            if self.cluster.instances < 3 {
                return Err(CliError::Config("method = \"auto\" needs at least 3 instances".into()));
            }
            return Ok(MethodChoice::Auto {
                instances: self.cluster.instances,
            });
        }
        self.cluster
            .method
            .parse()
            .map(MethodChoice::Fixed)
            .map_err(|e| CliError::Config(format!("cluster.method: {e}")))
    }

    /// Simulator configuration with `method` in place of the configured one.
    pub fn sim_config(&self, method: DisaggregationMethod) -> Result<SimConfig, CliError> {
        let s = &self.scheduler;
        let cfg = SimConfig {
            model: self.model.resolve()?,
            hardware: self.hardware.resolve()?,
            method,
            policy: s.policy,
            target_policy: self.cluster.target_policy,
            slo: SloSpec::new(self.slo.ttft_s, self.slo.tbt_s),
            params: AlphaBeta {
                alpha: s.alpha,
                beta: s.beta,
                gamma: s.gamma,
            },
            ceilings: Ceilings {
                tokens: s.token_ceiling,
                images: s.image_ceiling,
            },
            probe: None,
            image_cache_fraction: s.image_cache_fraction,
            preprocess_delay_s: s.preprocess_delay_s,
            seed: self.seed,
            check_invariants: self.check_invariants,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks everything that does not need a trace.
    pub fn validate(&self) -> Result<(), CliError> {
        let method = match self.method()? {
            MethodChoice::Fixed(m) => m,
            MethodChoice::Auto { .. } => DisaggregationMethod::colocated(1).expect("valid"),
        };
        self.sim_config(method).map(|_| ())
    }
}
