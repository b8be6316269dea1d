//! Per-request latency metrics, SLO attainment and goodput search.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::workload::SloSpec;

/// Attainment a rate must reach to count toward goodput.
pub const GOODPUT_ATTAINMENT: f64 = 0.9;

/// The eight latency components of a request, in lifecycle order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Component {
    EncodeQueue = 0,
    EncodeExec = 1,
    EpMigration = 2,
    PrefillQueue = 3,
    PrefillExec = 4,
    PdMigration = 5,
    DecodeQueue = 6,
    DecodeExec = 7,
}

pub const COMPONENT_NAMES: [&str; 8] = [
    "encode_queue_s",
    "encode_exec_s",
    "ep_migration_s",
    "prefill_queue_s",
    "prefill_exec_s",
    "pd_migration_s",
    "decode_queue_s",
    "decode_exec_s",
];

/// Metrics of one request. Times are integer nanoseconds since trace start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestMetrics {
    pub id: String,
    pub arrival_ns: u64,
    pub first_token_ns: Option<u64>,
    pub completion_ns: Option<u64>,
    /// Emission time of every output token.
    pub token_ns: Vec<u64>,
    pub breakdown_ns: [u64; 8],
    pub slo: SloSpec,
    pub finished: bool,
}

pub fn ns_to_s(ns: u64) -> f64 {
    ns as f64 / 1e9
}

impl RequestMetrics {
    pub fn ttft_s(&self) -> Option<f64> {
        self.first_token_ns.map(|t| ns_to_s(t - self.arrival_ns))
    }

    /// Gaps between consecutive output tokens.
    pub fn tbt_s(&self) -> Vec<f64> {
        self.token_ns.windows(2).map(|w| ns_to_s(w[1] - w[0])).collect()
    }

    pub fn latency_ns(&self) -> Option<u64> {
        self.completion_ns.map(|t| t - self.arrival_ns)
    }

    pub fn breakdown_s(&self) -> [f64; 8] {
        self.breakdown_ns.map(ns_to_s)
    }

    pub fn migration_ns(&self) -> u64 {
        self.breakdown_ns[Component::EpMigration as usize] + self.breakdown_ns[Component::PdMigration as usize]
    }
}

/// True iff the request finished, its TTFT is within bound and at least
/// 90% of its TBT values are within bound. Boundaries are inclusive.
pub fn meets_slo(m: &RequestMetrics, slo: &SloSpec) -> bool {
    let Some(ttft) = m.ttft_s() else { return false };
    if !m.finished || ttft > slo.ttft_s {
        return false;
    }
    tbt_ok(&m.tbt_s(), slo.tbt_s)
}

fn tbt_ok(tbt: &[f64], bound: f64) -> bool {
    if tbt.is_empty() {
        return true;
    }
    let good = tbt.iter().filter(|&&v| v <= bound).count();
    // integer form of good / len >= 0.9
    10 * good >= 9 * tbt.len()
}

/// Fraction of requests meeting their own SLO. An empty set counts as 1.
pub fn slo_attainment(requests: &[RequestMetrics]) -> f64 {
    if requests.is_empty() {
        log::warn!("SLO attainment of an empty report is defined as 1.0");
        return 1.0;
    }
    let met = requests.iter().filter(|m| meets_slo(m, &m.slo)).count();
    met as f64 / requests.len() as f64
}

/// Nearest-rank percentile, `p` in (0, 100].
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Percentiles {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
            p50: percentile(values, 50.0)?,
            p90: percentile(values, 90.0)?,
            p95: percentile(values, 95.0)?,
            p99: percentile(values, 99.0)?,
        })
    }
}

/// Whole-run aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub requests: usize,
    pub finished: usize,
    pub slo_attainment: f64,
    /// Finished requests per second from first arrival to last completion.
    pub throughput_rps: f64,
    pub output_tokens_per_s: f64,
    pub ttft_s: Option<Percentiles>,
    pub tbt_s: Option<Percentiles>,
    pub ep_migration_s: Option<Percentiles>,
    pub pd_migration_s: Option<Percentiles>,
    /// Migration time over total request latency, summed across requests.
    pub migration_share: f64,
    /// Mean of each latency component, in component order.
    pub mean_breakdown_s: [f64; 8],
}

/// Durations of individual migration jobs: control overhead plus copy.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MigrationTimes {
    pub ep_s: Vec<f64>,
    pub pd_s: Vec<f64>,
}

pub fn aggregate(requests: &[RequestMetrics], migrations: &MigrationTimes) -> Aggregates {
    let finished: Vec<&RequestMetrics> = requests.iter().filter(|m| m.finished).collect();
    let ttft: Vec<f64> = requests.iter().filter_map(RequestMetrics::ttft_s).collect();
    let tbt: Vec<f64> = requests.iter().flat_map(RequestMetrics::tbt_s).collect();
    let first = requests.iter().map(|m| m.arrival_ns).min();
    let last = finished.iter().filter_map(|m| m.completion_ns).max();
    let span = match (first, last) {
        (Some(a), Some(b)) if b > a => ns_to_s(b - a),
        _ => 0.0,
    };
    let per_s = |x: f64| if span > 0.0 { x / span } else { 0.0 };
    let tokens: usize = finished.iter().map(|m| m.token_ns.len()).sum();
    let total_latency: u64 = finished.iter().filter_map(|m| m.latency_ns()).sum();
    let total_migration: u64 = finished.iter().map(|m| m.migration_ns()).sum();
    let mut mean = [0.0; 8];
    if !finished.is_empty() {
        for m in &finished {
            for (acc, &v) in mean.iter_mut().zip(&m.breakdown_ns) {
                *acc += ns_to_s(v);
            }
        }
        for v in &mut mean {
            *v /= finished.len() as f64;
        }
    }
    Aggregates {
        requests: requests.len(),
        finished: finished.len(),
        slo_attainment: slo_attainment(requests),
        throughput_rps: per_s(finished.len() as f64),
        output_tokens_per_s: per_s(tokens as f64),
        ttft_s: Percentiles::of(&ttft),
        tbt_s: Percentiles::of(&tbt),
        ep_migration_s: Percentiles::of(&migrations.ep_s),
        pd_migration_s: Percentiles::of(&migrations.pd_s),
        migration_share: if total_latency > 0 {
            total_migration as f64 / total_latency as f64
        } else {
            0.0
        },
        mean_breakdown_s: mean,
    }
}

/// Writes one CSV row per request.
pub fn write_request_csv(requests: &[RequestMetrics], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "id",
        "arrival_s",
        "ttft_s",
        "completion_s",
        "tbt_count",
        "tbt_mean_s",
        "tbt_max_s",
        "ttft_slo_s",
        "tbt_slo_s",
        "finished",
        "meets_slo",
    ];
    header.extend(COMPONENT_NAMES);
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in requests {
        let tbt = m.tbt_s();
        let mean = (!tbt.is_empty()).then(|| tbt.iter().sum::<f64>() / tbt.len() as f64);
        let max = tbt.iter().copied().reduce(f64::max);
        let mut row = vec![
            m.id.clone(),
            ns_to_s(m.arrival_ns).to_string(),
            opt(m.ttft_s()),
            opt(m.completion_ns.map(ns_to_s)),
            tbt.len().to_string(),
            opt(mean),
            opt(max),
            m.slo.ttft_s.to_string(),
            m.slo.tbt_s.to_string(),
            m.finished.to_string(),
            meets_slo(m, &m.slo).to_string(),
        ];
        row.extend(m.breakdown_s().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Error, PartialEq)]
pub enum GoodputError {
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("rate bounds must satisfy 0 < lo < hi, got [{0}, {1}]")]
    InvalidBounds(f64, f64),
    #[error("SLO infeasible at minimum rate {rate} (attainment {attainment:.3})")]
    InfeasibleAtMinimum { rate: f64, attainment: f64 },
    #[error("replay failed at rate {rate}: {message}")]
    Probe { rate: f64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodputResult {
    pub goodput: f64,
    /// Every probed (rate, attainment) pair, in probe order.
    pub probes: Vec<(f64, f64)>,
    /// False when a higher rate passed while a lower one failed.
    pub monotone: bool,
}

/// Largest rate in `[lo, hi]` whose attainment is at least 0.9, to within
/// `tol`, by bisection. `attainment_at(rate)` replays the workload at
/// `rate`.
///
/// Bisection probes never contradict each other, so monotonicity can only
/// be checked against the bounds. The low bound is probed when every
/// bisection probe fails, the high bound when every probe passes, and with
/// `verify_bounds` both are probed regardless.
pub fn find_goodput<E: std::fmt::Display>(
    mut attainment_at: impl FnMut(f64) -> Result<f64, E>,
    lo: f64,
    hi: f64,
    tol: f64,
    verify_bounds: bool,
) -> Result<GoodputResult, GoodputError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(GoodputError::InvalidTolerance(tol));
    }
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(GoodputError::InvalidBounds(lo, hi));
    }
    let mut probes = Vec::new();
    let mut probe = |rate: f64, probes: &mut Vec<(f64, f64)>| {
        let a = attainment_at(rate).map_err(|e| GoodputError::Probe {
            rate,
            message: e.to_string(),
        })?;
        probes.push((rate, a));
        Ok::<f64, GoodputError>(a)
    };
    let steps = ((hi - lo) / tol).log2().ceil().max(0.0) as usize;
    let (mut a, mut b) = (lo, hi);
    let (mut any_pass, mut any_fail) = (false, false);
    for _ in 0..steps {
        let mid = 0.5 * (a + b);
        if probe(mid, &mut probes)? >= GOODPUT_ATTAINMENT {
            a = mid;
            any_pass = true;
        } else {
            b = mid;
            any_fail = true;
        }
    }
    let mut goodput = a;
    if !any_pass || verify_bounds {
        let att = probe(lo, &mut probes)?;
        if att < GOODPUT_ATTAINMENT && !any_pass {
            return Err(GoodputError::InfeasibleAtMinimum {
                rate: lo,
                attainment: att,
            });
        }
    }
    if (!any_fail || verify_bounds) && probe(hi, &mut probes)? >= GOODPUT_ATTAINMENT && !any_fail {
        goodput = hi;
    }
    let monotone = probes.iter().all(|&(r1, a1)| {
        probes
            .iter()
            .all(|&(r2, a2)| !(r2 > r1 && a2 >= GOODPUT_ATTAINMENT && a1 < GOODPUT_ATTAINMENT))
    });
    if !monotone {
        log::warn!("attainment is not monotone in rate over the probes {probes:?}");
    }
    Ok(GoodputResult {
        goodput,
        probes,
        monotone,
    })
}
