//! One simulated serving instance: capability set, queues, paged cache pools,
//! budget-bounded batch formation and batch execution.

mod batch;
mod budget;
mod instance;
mod pool;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::Batch;
pub use budget::{search_budgets, BatchLatency, BudgetPair, BudgetProbe, Ceilings, RooflineProbe};
pub use instance::{batch_latency, Cursor, InstanceState, Next, Outcome, Resident, Started};
pub use pool::{CachePool, PoolError};

use crate::cost::StageKind;
use crate::workload::SloSpec;

/// Capability set of an instance, a nonempty subset of {E, P, D}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstanceType {
    E,
    P,
    D,
    EP,
    ED,
    PD,
    EPD,
}

impl InstanceType {
    pub const ALL: [InstanceType; 7] = [
        InstanceType::E,
        InstanceType::P,
        InstanceType::D,
        InstanceType::EP,
        InstanceType::ED,
        InstanceType::PD,
        InstanceType::EPD,
    ];

    pub fn has(self, stage: StageKind) -> bool {
        use InstanceType::*;
        match stage {
            StageKind::Encode => matches!(self, E | EP | ED | EPD),
            StageKind::Prefill => matches!(self, P | EP | PD | EPD),
            StageKind::Decode => matches!(self, D | ED | PD | EPD),
        }
    }

    /// True when the instance runs the language model.
    pub fn has_language(self) -> bool {
        self.has(StageKind::Prefill) || self.has(StageKind::Decode)
    }

    pub fn from_stages(encode: bool, prefill: bool, decode: bool) -> Option<Self> {
        use InstanceType::*;
        Some(match (encode, prefill, decode) {
            (true, false, false) => E,
            (false, true, false) => P,
            (false, false, true) => D,
            (true, true, false) => EP,
            (true, false, true) => ED,
            (false, true, true) => PD,
            (true, true, true) => EPD,
            (false, false, false) => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        use InstanceType::*;
        match self {
            E => "E",
            P => "P",
            D => "D",
            EP => "EP",
            ED => "ED",
            PD => "PD",
            EPD => "EPD",
        }
    }
}

impl fmt::Display for InstanceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InstanceType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut flags = [false; 3];
        for c in s.chars() {
            let i = match c.to_ascii_uppercase() {
                'E' => 0,
                'P' => 1,
                'D' => 2,
                _ => return Err(format!("unknown stage letter {c:?} in instance type {s:?}")),
            };
            if flags[i] {
                return Err(format!("repeated stage letter in instance type {s:?}"));
            }
            flags[i] = true;
        }
        Self::from_stages(flags[0], flags[1], flags[2]).ok_or_else(|| "empty instance type".to_string())
    }
}

/// Batch formation policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerPolicy {
    /// Decodes first, then chunked prefill and image-granular encode, both
    /// bounded by searched budgets.
    #[default]
    StageLevel,
    /// Whole prompts and whole images before any decode.
    PrefillPrioritized,
    /// Decodes first and chunked prefill under a token budget, with no
    /// image budget.
    StallFreeChunked,
}

impl SchedulerPolicy {
    pub const ALL: [SchedulerPolicy; 3] = [
        SchedulerPolicy::StageLevel,
        SchedulerPolicy::PrefillPrioritized,
        SchedulerPolicy::StallFreeChunked,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerPolicy::StageLevel => "stage_level",
            SchedulerPolicy::PrefillPrioritized => "prefill_prioritized",
            SchedulerPolicy::StallFreeChunked => "stall_free_chunked",
        }
    }
}

impl FromStr for SchedulerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown scheduler policy {s:?}"))
    }
}

/// Fractions used to derive per-batch latency caps and the decode memory cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaBeta {
    /// Share of TTFT one encode/prefill batch may take.
    pub alpha: f64,
    /// Share of TTFT one prefill batch may take when profiling.
    pub beta: f64,
    /// Share of free device memory usable for cache.
    pub gamma: f64,
}

impl Default for AlphaBeta {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.9,
        }
    }
}

impl AlphaBeta {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.alpha) || !unit(self.beta) {
            return Err("alpha and beta must be in (0, 1]".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err("gamma must be in (0, 1)".into());
        }
        Ok(())
    }
}

/// Per-batch latency cap of an instance: instances that never decode are
/// bounded by a share of TTFT, anything that decodes by TBT.
pub fn derive_latency_cap(ty: InstanceType, slo: &SloSpec, alpha: f64) -> f64 {
    if ty.has(StageKind::Decode) {
        slo.tbt_s
    } else {
        alpha * slo.ttft_s
    }
}
