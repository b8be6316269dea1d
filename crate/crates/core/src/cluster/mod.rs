//! Discrete-event simulation of a cluster of instances serving a trace.

mod method;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use method::DisaggregationMethod;

use crate::cost::{HardwareProfile, ModelProfile, StageKind};
use crate::engine::{
    derive_latency_cap, search_budgets, AlphaBeta, BudgetPair, BudgetProbe, Ceilings, Cursor, InstanceState,
    InstanceType, Next, Resident, RooflineProbe, SchedulerPolicy,
};
use crate::metrics::{
    aggregate, find_goodput, Aggregates, Component, GoodputError, GoodputResult, MigrationTimes, RequestMetrics,
};
use crate::migration::{transfer_time_s, MigrationJob, MigrationKind, Phase, TargetPolicy, TargetSelector};
use crate::workload::{scale_to_rate, SloSpec, Trace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation stalled with {unfinished} unfinished requests: {detail}")]
    Deadlock { unfinished: usize, detail: String },
    #[error("invariant violated at t={at_ns} ns: {detail}")]
    Invariant { at_ns: u64, detail: String },
}

/// Everything a replay depends on besides the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub model: ModelProfile<f64>,
    pub hardware: HardwareProfile<f64>,
    pub method: DisaggregationMethod,
    #[serde(default)]
    pub policy: SchedulerPolicy,
    #[serde(default)]
    pub target_policy: TargetPolicy,
    /// Defaults for requests without their own SLO; also sets batch caps.
    pub slo: SloSpec,
    #[serde(default)]
    pub params: AlphaBeta,
    #[serde(default)]
    pub ceilings: Ceilings,
    /// Request shape for budget search; derived from the trace when absent.
    #[serde(default)]
    pub probe: Option<BudgetProbe>,
    #[serde(default = "default_image_fraction")]
    pub image_cache_fraction: f64,
    #[serde(default)]
    pub preprocess_delay_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Check conservation and block accounting after every event.
    #[serde(skip)]
    pub check_invariants: bool,
}

fn default_image_fraction() -> f64 {
    0.1
}

impl SimConfig {
    /// LLaVA-1.5-7B on the default device with 4 s / 80 ms SLOs.
    pub fn new(method: DisaggregationMethod) -> Self {
        Self {
            model: ModelProfile::llava_7b(),
            hardware: HardwareProfile::default(),
            method,
            policy: SchedulerPolicy::StageLevel,
            target_policy: TargetPolicy::RoundRobin,
            slo: SloSpec::new(4.0, 0.08),
            params: AlphaBeta::default(),
            ceilings: Ceilings::default(),
            probe: None,
            image_cache_fraction: default_image_fraction(),
            preprocess_delay_s: 0.0,
            seed: 0,
            check_invariants: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let cfg = |e: String| SimError::Config(e);
        self.model.validate().map_err(|e| cfg(e.to_string()))?;
        self.hardware.validate().map_err(|e| cfg(e.to_string()))?;
        self.params.validate().map_err(cfg)?;
        if !self.slo.is_valid() {
            return Err(cfg("SLO bounds must be positive".into()));
        }
        if !(self.image_cache_fraction > 0.0 && self.image_cache_fraction < 1.0) {
            return Err(cfg("image_cache_fraction must be in (0, 1)".into()));
        }
        if !(self.preprocess_delay_s >= 0.0 && self.preprocess_delay_s.is_finite()) {
            return Err(cfg("preprocess_delay_s must be >= 0".into()));
        }
        if self.ceilings.tokens == 0 {
            return Err(cfg("token ceiling must be at least 1".into()));
        }
        Ok(())
    }

    /// Budget-search probe: configured, or the largest image and longest
    /// context in `trace`.
    pub fn probe_for(&self, trace: &Trace) -> BudgetProbe {
        if let Some(p) = self.probe {
            return p;
        }
        let mut p = BudgetProbe::default();
        if !trace.is_empty() {
            let image = trace.requests.iter().flat_map(|r| r.image_tokens.iter().copied()).max();
            p.image_tokens = image.unwrap_or(p.image_tokens).max(1);
            p.decode_context = trace
                .requests
                .iter()
                .map(|r| r.prefill_tokens() + r.output_tokens - 1)
                .max()
                .unwrap_or(1)
                .max(1);
        }
        p
    }

    /// Latency cap and searched budgets of one instance type.
    pub fn budgets_for(&self, ty: InstanceType, probe: BudgetProbe) -> TypeBudget {
        let cap_s = derive_latency_cap(ty, &self.slo, self.params.alpha);
        let lat = RooflineProbe {
            model: &self.model,
            hw: &self.hardware,
            ty,
            probe,
        };
        let reserve = self.policy == SchedulerPolicy::StageLevel;
        TypeBudget {
            ty,
            cap_s,
            budgets: search_budgets(cap_s, &lat, ty, self.ceilings, reserve),
        }
    }

    fn cache_bytes(&self) -> f64 {
        self.params.gamma * self.hardware.cache_memory_bytes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TypeBudget {
    pub ty: InstanceType,
    pub cap_s: f64,
    pub budgets: BudgetPair,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InstanceSummary {
    pub index: usize,
    pub ty: String,
    pub batches: u64,
    pub busy_s: f64,
    pub max_batch_latency_s: f64,
    pub max_batch_tokens: u64,
    pub max_batch_images: u64,
    pub kv_capacity_blocks: u64,
    pub image_capacity_blocks: u64,
    pub peak_kv_blocks: u64,
    pub peak_image_blocks: u64,
}

/// Result of one replay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub aggregates: Aggregates,
    pub budgets: Vec<TypeBudget>,
    pub instances: Vec<InstanceSummary>,
    pub migrations: MigrationTimes,
    pub warnings: Vec<String>,
    pub events: u64,
    pub requests: Vec<RequestMetrics>,
}

impl SimReport {
    pub fn attainment(&self) -> f64 {
        self.aggregates.slo_attainment
    }
}

/// Rate bracket and tolerance of a goodput search, in requests per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoodputSearch {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Probe both bracket ends to check monotonicity.
    #[serde(default)]
    pub verify_bounds: bool,
}

fn default_tolerance() -> f64 {
    0.05
}

impl Default for GoodputSearch {
    fn default() -> Self {
        Self {
            lo: 0.1,
            hi: 16.0,
            tolerance: default_tolerance(),
            verify_bounds: false,
        }
    }
}

/// Goodput of the cluster on `base` rescaled to each probed rate.
pub fn goodput(cfg: &SimConfig, base: &Trace, search: &GoodputSearch) -> Result<GoodputResult, GoodputError> {
    find_goodput(
        |rate| -> Result<f64, String> {
            let trace = scale_to_rate(base, rate).map_err(|e| e.to_string())?;
            let report = run(cfg, &trace).map_err(|e| e.to_string())?;
            log::debug!("rate {rate:.4} req/s: attainment {:.4}", report.attainment());
            Ok(report.attainment())
        },
        search.lo,
        search.hi,
        search.tolerance,
        search.verify_bounds,
    )
}

/// Replays `trace` on the cluster described by `cfg`.
pub fn run(cfg: &SimConfig, trace: &Trace) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg, trace)?;
    sim.run()?;
    Ok(sim.into_report())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Arrival(usize),
    BatchComplete(usize),
    ControlArrive(usize),
    TransferDone(usize),
}

struct Track {
    phase: Component,
    since: u64,
    breakdown: [u64; 8],
    tokens: Vec<u64>,
    done: Option<u64>,
    origin: Option<usize>,
}

impl Track {
    fn enter(&mut self, phase: Component, now: u64) {
        self.breakdown[self.phase as usize] += now - self.since;
        self.phase = phase;
        self.since = now;
    }
}

fn queue_of(stage: StageKind) -> Component {
    match stage {
        StageKind::Encode => Component::EncodeQueue,
        StageKind::Prefill => Component::PrefillQueue,
        StageKind::Decode => Component::DecodeQueue,
    }
}

fn exec_of(stage: StageKind) -> Component {
    match stage {
        StageKind::Encode => Component::EncodeExec,
        StageKind::Prefill => Component::PrefillExec,
        StageKind::Decode => Component::DecodeExec,
    }
}

fn migration_of(kind: MigrationKind) -> Component {
    match kind {
        MigrationKind::Ep => Component::EpMigration,
        MigrationKind::Pd => Component::PdMigration,
    }
}

fn s_to_ns(s: f64) -> u64 {
    (s * 1e9).floor() as u64
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    trace: &'a Trace,
    budgets: Vec<TypeBudget>,
    instances: Vec<InstanceState>,
    stats: Vec<InstanceSummary>,
    heap: BinaryHeap<Reverse<(u64, u64, EventKind)>>,
    seq: u64,
    now: u64,
    events: u64,
    tracks: Vec<Track>,
    finished: usize,
    jobs: Vec<MigrationJob>,
    active_job: HashMap<usize, usize>,
    migration_ns: Vec<(MigrationKind, u64)>,
    e_capable: Vec<usize>,
    p_capable: Vec<usize>,
    d_capable: Vec<usize>,
    rr_e: usize,
    rr_p: usize,
    ep_select: TargetSelector,
    pd_select: TargetSelector,
    warnings: Vec<String>,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, trace: &'a Trace) -> Result<Self, SimError> {
        let types = cfg.method.instance_types();
        let probe = cfg.probe_for(trace);
        let mut by_type: BTreeMap<InstanceType, TypeBudget> = BTreeMap::new();
        for &ty in &types {
            by_type.entry(ty).or_insert_with(|| cfg.budgets_for(ty, probe));
        }
        let mut warnings = Vec::new();
        for b in by_type.values() {
            if !b.budgets.feasible {
                warnings.push(format!(
                    "{} instances cannot meet a {:.4} s batch latency cap even at the floor budget",
                    b.ty, b.cap_s
                ));
            }
        }
        let cache = cfg.cache_bytes();
        let mut instances = Vec::with_capacity(types.len());
        let mut stats = Vec::with_capacity(types.len());
        for (i, &ty) in types.iter().enumerate() {
            let (kv, image) = InstanceState::pool_blocks(ty, cache, cfg.image_cache_fraction, &cfg.model);
            instances.push(InstanceState::new(
                i,
                ty,
                cfg.policy,
                by_type[&ty].budgets,
                cfg.ceilings,
                kv,
                image,
            ));
            stats.push(InstanceSummary {
                index: i,
                ty: ty.to_string(),
                kv_capacity_blocks: kv,
                image_capacity_blocks: image,
                ..Default::default()
            });
        }
        let capable = |s: StageKind| -> Vec<usize> { (0..types.len()).filter(|&i| types[i].has(s)).collect() };
        let delay = s_to_ns(cfg.preprocess_delay_s);
        let mut sim = Self {
            cfg,
            trace,
            budgets: by_type.into_values().collect(),
            instances,
            stats,
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0,
            events: 0,
            tracks: Vec::with_capacity(trace.len()),
            finished: 0,
            jobs: Vec::new(),
            active_job: HashMap::new(),
            migration_ns: Vec::new(),
            e_capable: capable(StageKind::Encode),
            p_capable: capable(StageKind::Prefill),
            d_capable: capable(StageKind::Decode),
            rr_e: 0,
            rr_p: 0,
            ep_select: TargetSelector::new(cfg.target_policy, cfg.seed ^ 0x4550),
            pd_select: TargetSelector::new(cfg.target_policy, cfg.seed ^ 0x5044),
            warnings,
        };
        for (i, r) in trace.requests.iter().enumerate() {
            let arrival = (r.arrival_s * 1e9).round() as u64;
            let first = if r.has_images() {
                Component::EncodeQueue
            } else {
                Component::PrefillQueue
            };
            sim.tracks.push(Track {
                phase: first,
                since: arrival,
                breakdown: [0; 8],
                tokens: Vec::with_capacity(r.output_tokens as usize),
                done: None,
                origin: None,
            });
            sim.push(arrival + delay, EventKind::Arrival(i));
        }
        Ok(sim)
    }

    fn push(&mut self, t: u64, kind: EventKind) {
        self.heap.push(Reverse((t, self.seq, kind)));
        self.seq += 1;
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse((t, _, kind))) = self.heap.pop() {
            debug_assert!(t >= self.now);
            self.now = t;
            self.events += 1;
            match kind {
                EventKind::Arrival(req) => self.on_arrival(req),
                EventKind::BatchComplete(i) => self.on_batch_complete(i),
                EventKind::ControlArrive(job) => self.on_control_arrive(job),
                EventKind::TransferDone(job) => self.on_transfer_done(job),
            }
            for i in 0..self.instances.len() {
                if !self.instances[i].is_busy() {
                    self.poke(i);
                }
            }
            if self.cfg.check_invariants {
                self.check().map_err(|detail| SimError::Invariant {
                    at_ns: self.now,
                    detail,
                })?;
            }
        }
        if self.finished < self.trace.len() {
            return Err(SimError::Deadlock {
                unfinished: self.trace.len() - self.finished,
                detail: self.starvation_report(),
            });
        }
        Ok(())
    }

    fn on_arrival(&mut self, req: usize) {
        let spec = &self.trace.requests[req];
        let target = if spec.has_images() {
            let i = self.e_capable[self.rr_e % self.e_capable.len()];
            self.rr_e += 1;
            i
        } else {
            let i = self.p_capable[self.rr_p % self.p_capable.len()];
            self.rr_p += 1;
            i
        };
        self.tracks[req].origin = Some(target);
        self.instances[target].enqueue(Resident::new(req, Cursor::new(spec)));
    }

    fn on_batch_complete(&mut self, i: usize) {
        let now = self.now;
        for o in self.instances[i].complete() {
            let track = &mut self.tracks[o.req];
            if o.token {
                track.tokens.push(now);
            }
            match o.next {
                Next::Queue(stage) => track.enter(queue_of(stage), now),
                Next::Finished => {
                    track.enter(Component::DecodeExec, now);
                    track.done = Some(now);
                    self.finished += 1;
                }
                Next::Migrate(stage) => self.start_migration(o.req, i, stage),
            }
        }
    }

    fn start_migration(&mut self, req: usize, source: usize, stage: StageKind) {
        let kind = MigrationKind::into_stage(stage).expect("migrations lead into prefill or decode");
        let loads = |cands: &[usize], inst: &[InstanceState]| -> Vec<u64> {
            cands.iter().map(|&c| inst[c].outstanding_tokens()).collect()
        };
        let target = match kind {
            MigrationKind::Ep => {
                let l = loads(&self.p_capable, &self.instances);
                self.ep_select.select(&self.p_capable, &l)
            }
            MigrationKind::Pd => match self.tracks[req].origin {
                Some(o) if o != source && self.instances[o].ty.has(StageKind::Decode) => Some(o),
                _ => {
                    let l = loads(&self.d_capable, &self.instances);
                    self.pd_select.select(&self.d_capable, &l)
                }
            },
        }
        .expect("validated methods have a capable target for every stage");
        let cursor = self.instances[source]
            .departing_cursor(req)
            .expect("migrating request is departing");
        let (kv_bytes, image_bytes) = match kind {
            MigrationKind::Ep => (
                0.0,
                cursor.visual_tokens() as f64 * self.cfg.model.image_bytes_per_token(),
            ),
            MigrationKind::Pd => (cursor.kv_len as f64 * self.cfg.model.kv_bytes_per_token(), 0.0),
        };
        let id = self.jobs.len();
        self.jobs.push(MigrationJob::new(
            id,
            req,
            kind,
            source,
            target,
            kv_bytes,
            image_bytes,
            self.now,
        ));
        self.active_job.insert(req, id);
        self.tracks[req].enter(migration_of(kind), self.now);
        let t = self.now + s_to_ns(self.cfg.hardware.migration_fixed_overhead);
        self.push(t, EventKind::ControlArrive(id));
    }

    fn on_control_arrive(&mut self, id: usize) {
        let job = &mut self.jobs[id];
        job.advance(Phase::Scheduled).expect("control arrives once");
        let (req, source, target) = (job.req, job.source, job.target);
        let stage = match job.kind {
            MigrationKind::Ep => StageKind::Prefill,
            MigrationKind::Pd => StageKind::Decode,
        };
        let cursor = self.instances[source]
            .departing_cursor(req)
            .expect("source holds the request until transfer completes")
            .clone();
        self.instances[target].enqueue_migrated(Resident::new(req, cursor));
        self.tracks[req].enter(queue_of(stage), self.now);
    }

    fn on_transfer_done(&mut self, id: usize) {
        let now = self.now;
        let job = &mut self.jobs[id];
        job.advance(Phase::Done).expect("transfer completes once");
        job.done_ns = Some(now);
        let (req, source, target, kind) = (job.req, job.source, job.target, job.kind);
        let control = s_to_ns(self.cfg.hardware.migration_fixed_overhead);
        let copy = now - job.transfer_start_ns.expect("transfer started");
        self.migration_ns.push((kind, control + copy));
        self.active_job.remove(&req);
        let moved = self.instances[target].finish_incoming(req);
        debug_assert!(moved);
        self.instances[source]
            .release_departed(req)
            .expect("released exactly once");
        let stage = self.instances[target]
            .running()
            .iter()
            .find(|r| r.req == req)
            .and_then(|r| r.cursor.stage())
            .expect("migrated request has work left");
        self.tracks[req].enter(queue_of(stage), now);
    }

    fn poke(&mut self, i: usize) {
        let now = self.now;
        let started = self.instances[i].start(&self.cfg.model, &self.cfg.hardware);
        for req in started.pulled {
            let id = self.active_job[&req];
            let job = &mut self.jobs[id];
            job.advance(Phase::Transferring).expect("pulled once");
            job.transfer_start_ns = Some(now);
            let copy = s_to_ns(transfer_time_s(job.bytes(), &self.cfg.hardware));
            let comp = migration_of(job.kind);
            self.tracks[req].enter(comp, now);
            self.push(now + copy, EventKind::TransferDone(id));
        }
        let b = started.batch;
        if b.is_empty() {
            return;
        }
        let lat = s_to_ns(started.latency_s).max(1);
        let members = [
            (StageKind::Decode, b.decode.iter().map(|e| e.0).collect::<Vec<_>>()),
            (StageKind::Prefill, b.prefill.iter().map(|e| e.0).collect()),
            (StageKind::Encode, b.encode.iter().map(|e| e.0).collect()),
        ];
        for (stage, reqs) in members {
            for r in reqs {
                self.tracks[r].enter(exec_of(stage), now);
            }
        }
        let st = &mut self.stats[i];
        let inst = &self.instances[i];
        st.batches += 1;
        st.busy_s += started.latency_s;
        st.max_batch_latency_s = st.max_batch_latency_s.max(started.latency_s);
        st.max_batch_tokens = st.max_batch_tokens.max(b.tokens());
        st.max_batch_images = st.max_batch_images.max(b.images());
        st.peak_kv_blocks = st.peak_kv_blocks.max(inst.kv_pool.allocated_total());
        st.peak_image_blocks = st.peak_image_blocks.max(inst.image_pool.allocated_total());
        self.push(now + lat, EventKind::BatchComplete(i));
    }

    /// Conservation and block accounting.
    fn check(&self) -> Result<(), String> {
        let n = self.trace.len();
        let mut seen = vec![0u32; n];
        for inst in &self.instances {
            inst.check_invariants()?;
            for (req, _) in inst.waiting_reqs() {
                seen[req] += 1;
            }
            for r in inst.running() {
                seen[r.req] += 1;
            }
        }
        for job in &self.jobs {
            match job.phase {
                Phase::ControlSent => seen[job.req] += 1,
                Phase::Transferring => seen[job.req] += 1,
                _ => {}
            }
        }
        let arrived_by = |i: usize| self.tracks[i].origin.is_some();
        for (i, &s) in seen.iter().enumerate() {
            let expected = u32::from(arrived_by(i) && self.tracks[i].done.is_none());
            if s != expected {
                return Err(format!("request {i} found at {s} locations, expected {expected}"));
            }
        }
        for (i, t) in self.tracks.iter().enumerate() {
            if t.done.is_some() {
                for inst in &self.instances {
                    if inst.kv_pool.held(i) + inst.image_pool.held(i) > 0 {
                        return Err(format!(
                            "finished request {i} still holds blocks on instance {}",
                            inst.index
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn starvation_report(&self) -> String {
        let mut parts = Vec::new();
        for inst in &self.instances {
            if inst.waiting_len() == 0 {
                continue;
            }
            parts.push(format!(
                "instance {} ({}) has {} waiting requests; KV pool {}/{} blocks reserved, image pool {}/{}",
                inst.index,
                inst.ty,
                inst.waiting_len(),
                inst.kv_pool.reserved_total(),
                inst.kv_pool.capacity(),
                inst.image_pool.reserved_total(),
                inst.image_pool.capacity()
            ));
        }
        if parts.is_empty() {
            "no instance has queued work".into()
        } else {
            parts.join("; ")
        }
    }

    fn into_report(self) -> SimReport {
        let mut migrations = MigrationTimes::default();
        for &(kind, ns) in &self.migration_ns {
            let s = ns as f64 / 1e9;
            match kind {
                MigrationKind::Ep => migrations.ep_s.push(s),
                MigrationKind::Pd => migrations.pd_s.push(s),
            }
        }
        let requests: Vec<RequestMetrics> = self
            .trace
            .requests
            .iter()
            .zip(self.tracks)
            .map(|(spec, t)| {
                let arrival = (spec.arrival_s * 1e9).round() as u64;
                RequestMetrics {
                    id: spec.id.to_string(),
                    arrival_ns: arrival,
                    first_token_ns: t.tokens.first().copied(),
                    completion_ns: t.done,
                    token_ns: t.tokens,
                    breakdown_ns: t.breakdown,
                    slo: spec.slo(self.cfg.slo),
                    finished: t.done.is_some(),
                }
            })
            .collect();
        SimReport {
            config: self.cfg.clone(),
            aggregates: aggregate(&requests, &migrations),
            budgets: self.budgets,
            instances: self.stats,
            migrations,
            warnings: self.warnings,
            events: self.events,
            requests,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::batch_latency;
    use crate::engine::Batch;
    use crate::workload::{RequestId, RequestSpec};

    fn one(images: &[u64], prompt: u64, output: u64) -> Trace {
        Trace::new(
            "t",
            "test",
            vec![RequestSpec {
                id: RequestId::Int(1),
                arrival_s: 0.5,
                image_tokens: images.to_vec(),
                prompt_tokens: prompt,
                output_tokens: output,
                ttft_slo_s: None,
                tbt_slo_s: None,
            }],
        )
    }

    #[test]
    fn empty_trace() {
        let cfg = SimConfig::new(DisaggregationMethod::colocated(2).unwrap());
        let r = run(&cfg, &Trace::default()).unwrap();
        assert_eq!(r.events, 0);
        assert!(r.requests.is_empty());
        assert_eq!(r.attainment(), 1.0);
    }

    #[test]
    fn single_request_hand_walk() {
        let mut cfg = SimConfig::new(DisaggregationMethod::colocated(1).unwrap());
        cfg.preprocess_delay_s = 0.01;
        cfg.check_invariants = true;
        let r = run(&cfg, &one(&[576], 40, 4)).unwrap();
        let m = &r.requests[0];
        let (model, hw) = (&cfg.model, &cfg.hardware);
        let enc = Batch {
            encode: vec![(0, 1)],
            encode_tokens: vec![576],
            ..Default::default()
        };
        let pre = Batch {
            prefill: vec![(0, 616)],
            ..Default::default()
        };
        let ns = |b: &Batch| s_to_ns(batch_latency(b, model, hw));
        assert_eq!(
            m.first_token_ns.unwrap() - m.arrival_ns,
            s_to_ns(0.01) + ns(&enc) + ns(&pre)
        );
        let tbt: Vec<u64> = m.token_ns.windows(2).map(|w| w[1] - w[0]).collect();
        let dec = |ctx| {
            ns(&Batch {
                decode: vec![(0, ctx)],
                ..Default::default()
            })
        };
        assert_eq!(tbt, vec![dec(616), dec(617), dec(618)]);
        assert_eq!(m.breakdown_ns.iter().sum::<u64>(), m.latency_ns().unwrap());
        assert_eq!(m.breakdown_ns[Component::EncodeQueue as usize], s_to_ns(0.01));
    }

    #[test]
    fn disaggregated_paths_conserve_time() {
        let trace = crate::workload::synth_trace(&crate::workload::SynthSpec {
            seed: 5,
            n_requests: 60,
            rate: 20.0,
            image_count: crate::workload::Dist::Uniform { lo: 0, hi: 2 },
            visual_tokens: crate::workload::Dist::Fixed(576),
            prompt_tokens: crate::workload::Dist::Uniform { lo: 5, hi: 80 },
            output_tokens: crate::workload::Dist::Uniform { lo: 1, hi: 30 },
            slo: None,
        })
        .unwrap();
        for method in ["1E1P1D", "2EP1D", "2ED1P", "3EPD", "1E1PD", "1E2P1D"] {
            for target in [TargetPolicy::RoundRobin, TargetPolicy::Random, TargetPolicy::LeastLoad] {
                let mut cfg = SimConfig::new(method.parse().unwrap());
                cfg.target_policy = target;
                cfg.check_invariants = true;
                let r = run(&cfg, &trace).unwrap();
                assert_eq!(r.aggregates.finished, 60, "{method}");
                for (m, spec) in r.requests.iter().zip(&trace.requests) {
                    assert_eq!(m.breakdown_ns.iter().sum::<u64>(), m.latency_ns().unwrap());
                    assert_eq!(m.token_ns.len() as u64, spec.output_tokens);
                    assert!(m.token_ns.windows(2).all(|w| w[0] < w[1]));
                    assert!(m.first_token_ns.unwrap() > m.arrival_ns);
                }
                let again = run(&cfg, &trace).unwrap();
                assert_eq!(r, again);
            }
        }
    }

    #[test]
    fn oversized_request_is_a_diagnosed_deadlock() {
        let mut cfg = SimConfig::new(DisaggregationMethod::colocated(1).unwrap());
        cfg.hardware.gpu_memory_bytes = cfg.hardware.model_weight_bytes + 1e8;
        let err = run(&cfg, &one(&[], 4000, 10)).unwrap_err();
        match err {
            SimError::Deadlock { unfinished, detail } => {
                assert_eq!(unfinished, 1);
                assert!(detail.contains("instance 0 (EPD)"), "{detail}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn overloaded_ed_p_drains() {
        use crate::workload::{synth_trace, Dist, SynthSpec};
        let trace = synth_trace(&SynthSpec {
            seed: 3,
            n_requests: 300,
            rate: 32.0,
            image_count: Dist::Fixed(16),
            visual_tokens: Dist::Fixed(576),
            prompt_tokens: Dist::Uniform { lo: 10, hi: 30 },
            output_tokens: Dist::Uniform { lo: 10, hi: 30 },
            slo: None,
        })
        .unwrap();
        let mut cfg = SimConfig::new("2ED2P".parse().unwrap());
        cfg.check_invariants = true;
        let r = run(&cfg, &trace).unwrap();
        assert_eq!(r.aggregates.finished, 300);
    }
}
