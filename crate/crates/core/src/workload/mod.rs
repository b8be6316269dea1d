//! Requests, SLOs and traces, plus the per-stage decomposition of a request.

mod synth;
mod trace_io;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synth::{dataset_preset, synth_trace, Dist, SynthSpec, DATASETS};
pub use trace_io::{convert_csv, load_trace, parse_trace, save_trace, write_trace};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: duplicate request id {id}")]
    DuplicateId { line: usize, id: RequestId },
    #[error("trace needs at least two requests with distinct arrival times to define a rate")]
    DegenerateSpan,
    #[error("request rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("invalid distribution: {0}")]
    InvalidDist(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Latency objectives of one request, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SloSpec {
    pub ttft_s: f64,
    pub tbt_s: f64,
}

impl SloSpec {
    pub fn new(ttft_s: f64, tbt_s: f64) -> Self {
        Self { ttft_s, tbt_s }
    }

    pub fn is_valid(&self) -> bool {
        self.ttft_s > 0.0 && self.tbt_s > 0.0 && self.ttft_s.is_finite() && self.tbt_s.is_finite()
    }

    /// Same objectives with TTFT divided by `factor`.
    pub fn tighten_ttft(self, factor: f64) -> Self {
        Self::new(self.ttft_s / factor, self.tbt_s)
    }
}

/// Default SLOs per (model, dataset) pair.
const SLO_TABLE: [(&str, &str, f64, f64); 15] = [
    ("llava-1.5-7b", "vizwiz", 4.0, 0.08),
    ("llava-1.5-7b", "textvqa", 4.0, 0.08),
    ("llava-1.5-7b", "mme", 4.0, 0.08),
    ("llava-1.5-7b", "pope", 4.0, 0.08),
    ("llava-1.5-7b", "textcaps", 4.0, 0.08),
    ("llava-next-7b", "vizwiz", 8.0, 0.60),
    ("llava-next-7b", "textvqa", 8.0, 0.60),
    ("llava-next-7b", "mme", 8.0, 0.60),
    ("llava-next-7b", "pope", 8.0, 0.30),
    ("llava-next-7b", "textcaps", 8.0, 0.30),
    ("qwen2-vl-7b", "vizwiz", 8.0, 0.60),
    ("qwen2-vl-7b", "textvqa", 8.0, 0.60),
    ("qwen2-vl-7b", "mme", 8.0, 0.60),
    ("qwen2-vl-7b", "pope", 8.0, 0.10),
    ("qwen2-vl-7b", "textcaps", 8.0, 0.10),
];

/// Looks up the default SLO for a model preset and dataset name.
pub fn default_slo(model: &str, dataset: &str) -> Option<SloSpec> {
    let dataset = dataset.to_ascii_lowercase();
    SLO_TABLE
        .iter()
        .find(|(m, d, _, _)| *m == model && *d == dataset)
        .map(|&(_, _, ttft, tbt)| SloSpec::new(ttft, tbt))
}

/// Request identifier as it appears in the trace (integer or string).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RequestId {
    Int(u64),
    Str(String),
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequestId::Int(v) => write!(f, "{v}"),
            RequestId::Str(s) => f.write_str(s),
        }
    }
}

/// One inference request. The field names double as the trace format keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSpec {
    pub id: RequestId,
    pub arrival_s: f64,
    #[serde(default)]
    pub image_tokens: Vec<u64>,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttft_slo_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tbt_slo_s: Option<f64>,
}

impl RequestSpec {
    pub fn visual_tokens(&self) -> u64 {
        self.image_tokens.iter().sum()
    }

    pub fn prefill_tokens(&self) -> u64 {
        self.visual_tokens() + self.prompt_tokens
    }

    pub fn has_images(&self) -> bool {
        !self.image_tokens.is_empty()
    }

    /// Per-request SLO with any missing field taken from `defaults`.
    pub fn slo(&self, defaults: SloSpec) -> SloSpec {
        SloSpec::new(
            self.ttft_slo_s.unwrap_or(defaults.ttft_s),
            self.tbt_slo_s.unwrap_or(defaults.tbt_s),
        )
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if !(self.arrival_s >= 0.0 && self.arrival_s.is_finite()) {
            return Err(format!("arrival_s must be a finite value >= 0, got {}", self.arrival_s));
        }
        if self.output_tokens < 1 {
            return Err("output_tokens must be at least 1".into());
        }
        if self.prefill_tokens() == 0 {
            return Err("request has neither images nor prompt tokens".into());
        }
        for (name, v) in [("ttft_slo_s", self.ttft_slo_s), ("tbt_slo_s", self.tbt_slo_s)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(format!("{name} must be positive, got {v}"));
                }
            }
        }
        Ok(())
    }
}

/// Ordered request list with provenance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub name: String,
    pub source: String,
    pub requests: Vec<RequestSpec>,
}

impl Trace {
    pub fn new(name: impl Into<String>, source: impl Into<String>, requests: Vec<RequestSpec>) -> Self {
        Self {
            name: name.into(),
            source: source.into(),
            requests,
        }
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Requests per second over the arrival span, `N / (last - first)`.
    pub fn rate(&self) -> Option<f64> {
        let first = self.requests.first()?.arrival_s;
        let last = self.requests.last()?.arrival_s;
        let span = last - first;
        (span > 0.0).then(|| self.requests.len() as f64 / span)
    }

    /// Requests arriving within the last `seconds` of the trace.
    pub fn tail_window(&self, seconds: f64) -> Trace {
        let Some(last) = self.requests.last().map(|r| r.arrival_s) else {
            return self.clone();
        };
        let requests = self
            .requests
            .iter()
            .filter(|r| r.arrival_s >= last - seconds)
            .cloned()
            .collect();
        Trace::new(
            self.name.clone(),
            format!("{} (last {seconds}s)", self.source),
            requests,
        )
    }
}

/// Rescales inter-arrival gaps so the trace's rate becomes `target_rate`.
/// The first arrival stays put.
pub fn scale_to_rate(trace: &Trace, target_rate: f64) -> Result<Trace, WorkloadError> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(WorkloadError::InvalidRate(target_rate));
    }
    let current = trace.rate().ok_or(WorkloadError::DegenerateSpan)?;
    let scale = current / target_rate;
    let first = trace.requests[0].arrival_s;
    let requests = trace
        .requests
        .iter()
        .map(|r| RequestSpec {
            arrival_s: first + (r.arrival_s - first) * scale,
            ..r.clone()
        })
        .collect();
    Ok(Trace::new(trace.name.clone(), trace.source.clone(), requests))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EncodeTask {
    pub images: u64,
    pub visual_tokens: u64,
}

/// Stage decomposition of one request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StagePlan {
    pub encode: Option<EncodeTask>,
    pub prefill_total_tokens: u64,
    /// Prefill emits the first token, so decode runs `output_tokens - 1` steps.
    pub decode_steps: u64,
    pub preprocess_delay_s: f64,
}

pub fn plan_stages(r: &RequestSpec, preprocess_delay_s: f64) -> StagePlan {
    let encode = r.has_images().then(|| EncodeTask {
        images: r.image_tokens.len() as u64,
        visual_tokens: r.visual_tokens(),
    });
    StagePlan {
        encode,
        prefill_total_tokens: r.prefill_tokens(),
        decode_steps: r.output_tokens.saturating_sub(1),
        preprocess_delay_s,
    }
}
