//! Pull-based cache migration between instances.
//!
//! A job goes through four steps: the source sends control information and
//! the target queues the request at the head of its waiting queue; the
//! target allocates blocks when it next forms a batch; the caches are copied
//! at interconnect bandwidth; the source releases its blocks.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{HardwareProfile, StageKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MigrationError {
    #[error("no candidate instance for {0} migration")]
    NoCandidate(&'static str),
    #[error("migration job {job} cannot move from {from:?} to {to:?}")]
    BadTransition { job: usize, from: Phase, to: Phase },
}

/// Which cache moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MigrationKind {
    /// Image cache, from an encode instance to a prefill instance.
    Ep,
    /// KV cache, from a prefill instance to a decode instance.
    Pd,
}

impl MigrationKind {
    /// Kind of the hop that leads into `stage`.
    pub fn into_stage(stage: StageKind) -> Option<Self> {
        match stage {
            StageKind::Prefill => Some(MigrationKind::Ep),
            StageKind::Decode => Some(MigrationKind::Pd),
            StageKind::Encode => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MigrationKind::Ep => "ep",
            MigrationKind::Pd => "pd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    ControlSent,
    Scheduled,
    Transferring,
    Done,
}

/// One cache migration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MigrationJob {
    pub id: usize,
    pub req: usize,
    pub kind: MigrationKind,
    pub source: usize,
    pub target: usize,
    pub kv_bytes: f64,
    pub image_bytes: f64,
    pub phase: Phase,
    pub created_ns: u64,
    pub transfer_start_ns: Option<u64>,
    pub done_ns: Option<u64>,
}

impl MigrationJob {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        req: usize,
        kind: MigrationKind,
        source: usize,
        target: usize,
        kv_bytes: f64,
        image_bytes: f64,
        now_ns: u64,
    ) -> Self {
        Self {
            id,
            req,
            kind,
            source,
            target,
            kv_bytes,
            image_bytes,
            phase: Phase::ControlSent,
            created_ns: now_ns,
            transfer_start_ns: None,
            done_ns: None,
        }
    }

    pub fn bytes(&self) -> f64 {
        self.kv_bytes + self.image_bytes
    }

    /// Moves to the next phase; phases only advance one step at a time.
    pub fn advance(&mut self, to: Phase) -> Result<(), MigrationError> {
        let ok = matches!(
            (self.phase, to),
            (Phase::ControlSent, Phase::Scheduled)
                | (Phase::Scheduled, Phase::Transferring)
                | (Phase::Transferring, Phase::Done)
        );
        if !ok {
            return Err(MigrationError::BadTransition {
                job: self.id,
                from: self.phase,
                to,
            });
        }
        self.phase = to;
        Ok(())
    }

    /// Control overhead plus copy time, in seconds, for a transfer that
    /// starts as soon as the target is asked.
    pub fn unloaded_latency_s(&self, hw: &HardwareProfile<f64>) -> f64 {
        hw.migration_fixed_overhead + transfer_time_s(self.bytes(), hw)
    }
}

/// Seconds to copy `bytes` over the interconnect.
pub fn transfer_time_s(bytes: f64, hw: &HardwareProfile<f64>) -> f64 {
    bytes / hw.interconnect_bandwidth
}

/// How a migration picks its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    #[default]
    RoundRobin,
    Random,
    LeastLoad,
}

impl TargetPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetPolicy::RoundRobin => "round_robin",
            TargetPolicy::Random => "random",
            TargetPolicy::LeastLoad => "least_load",
        }
    }
}

impl FromStr for TargetPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [TargetPolicy::RoundRobin, TargetPolicy::Random, TargetPolicy::LeastLoad]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown target policy {s:?}"))
    }
}

/// Stateful target selection: a persistent round-robin cursor and a seeded
/// generator.
#[derive(Debug, Clone)]
pub struct TargetSelector {
    policy: TargetPolicy,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl TargetSelector {
    pub fn new(policy: TargetPolicy, seed: u64) -> Self {
        Self {
            policy,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Picks one of `candidates`. `loads[i]` is the outstanding token count
    /// of `candidates[i]`.
    pub fn select(&mut self, candidates: &[usize], loads: &[u64]) -> Option<usize> {
        if candidates.is_empty() {
            return None;
        }
        let i = match self.policy {
            TargetPolicy::RoundRobin => {
                let i = self.cursor % candidates.len();
                self.cursor = self.cursor.wrapping_add(1);
                i
            }
            TargetPolicy::Random => self.rng.random_range(0..candidates.len()),
            TargetPolicy::LeastLoad => {
                let mut best = 0;
                for (j, &l) in loads.iter().enumerate().take(candidates.len()) {
                    if l < loads[best] {
                        best = j;
                    }
                }
                best
            }
        };
        Some(candidates[i])
    }
}
