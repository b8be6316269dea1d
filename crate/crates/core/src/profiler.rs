//! Choosing a disaggregation method for a workload: estimate per-stage work
//! and throughput, split the cluster in proportion to stage time, then
//! replay the trace on each candidate and keep the best goodput.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cluster::{goodput, DisaggregationMethod, GoodputSearch, SimConfig};
use crate::engine::{batch_latency, search_budgets, Batch, InstanceType, RooflineProbe};
use crate::metrics::GoodputResult;
use crate::workload::Trace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("cannot profile an empty trace")]
    EmptyTrace,
    #[error("decode memory infeasible: room for {cap:.3} concurrent requests")]
    DecodeMemory { cap: f64 },
    #[error("need at least {min} instances, got {n}")]
    TooFewInstances { n: usize, min: usize },
    #[error("stage times must be finite, nonnegative and not all zero: {0:?}")]
    BadTimes([f64; 3]),
    #[error("every candidate is infeasible: {0}")]
    AllInfeasible(String),
}

/// Token totals of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WorkloadSummary {
    /// Visual tokens.
    pub w_e: u64,
    /// Prompt plus visual tokens.
    pub w_p: u64,
    /// Output tokens.
    pub w_d: u64,
    pub n_r: u64,
    pub images: u64,
}

impl WorkloadSummary {
    /// Mean visual tokens per image, or 0 for text-only traces.
    pub fn mean_image_tokens(&self) -> f64 {
        if self.images == 0 {
            0.0
        } else {
            self.w_e as f64 / self.images as f64
        }
    }
}

pub fn summarize_workload(trace: &Trace) -> Result<WorkloadSummary, ProfileError> {
    if trace.is_empty() {
        return Err(ProfileError::EmptyTrace);
    }
    let mut s = WorkloadSummary {
        w_e: 0,
        w_p: 0,
        w_d: 0,
        n_r: 0,
        images: 0,
    };
    for r in &trace.requests {
        s.w_e += r.visual_tokens();
        s.w_p += r.prefill_tokens();
        s.w_d += r.output_tokens;
        s.n_r += 1;
        s.images += r.image_tokens.len() as u64;
    }
    Ok(s)
}

/// Per-stage batch budgets under full load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageBudgets {
    /// Images per encode batch.
    pub tau_e: u64,
    /// Tokens per prefill batch.
    pub tau_p: u64,
    /// Decode batch size after the memory cap.
    pub tau_d: u64,
    /// Decode batch size from the latency search alone.
    pub tau_d_latency: u64,
    pub concurrency_cap: u64,
    /// All three latency searches met their caps.
    pub feasible: bool,
}

/// How many requests fit in decode memory at the trace's mean footprint.
pub fn decode_concurrency_cap(
    gamma: f64,
    cache_bytes: f64,
    kv_bytes_per_token: f64,
    summary: &WorkloadSummary,
) -> Result<u64, ProfileError> {
    let per_request = kv_bytes_per_token * (summary.w_p + summary.w_d) as f64 / summary.n_r as f64;
    let cap = gamma * cache_bytes / per_request;
    if !(cap >= 1.0) {
        return Err(ProfileError::DecodeMemory { cap });
    }
    Ok(cap.floor() as u64)
}

/// Searches the encode, prefill and decode budgets. Encode and prefill are
/// capped at alpha and beta times the TTFT bound, decode at the TBT bound
/// and at the decode memory capacity.
pub fn stage_budgets(cfg: &SimConfig, trace: &Trace, summary: &WorkloadSummary) -> Result<StageBudgets, ProfileError> {
    let probe = cfg.probe_for(trace);
    let search = |ty, cap| {
        let lat = RooflineProbe {
            model: &cfg.model,
            hw: &cfg.hardware,
            ty,
            probe,
        };
        search_budgets(cap, &lat, ty, cfg.ceilings, false)
    };
    let e = search(InstanceType::E, cfg.params.alpha * cfg.slo.ttft_s);
    let p = search(InstanceType::P, cfg.params.beta * cfg.slo.ttft_s);
    let d = search(InstanceType::D, cfg.slo.tbt_s);
    let cap = decode_concurrency_cap(
        cfg.params.gamma,
        cfg.hardware.cache_memory_bytes(),
        cfg.model.kv_bytes_per_token(),
        summary,
    )?;
    Ok(StageBudgets {
        tau_e: e.tau_e,
        tau_p: p.tau_t,
        tau_d: d.tau_t.min(cap),
        tau_d_latency: d.tau_t,
        concurrency_cap: cap,
        feasible: e.feasible && p.feasible && d.feasible,
    })
}

/// Tokens per second of each stage at full budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Throughputs {
    pub tp_e: f64,
    pub tp_p: f64,
    pub tp_d: f64,
}

/// Budget tokens over the roofline latency of a full-budget batch. Encode
/// batches hold `tau_e` images of the trace's mean size; decode batches
/// hold `tau_d` requests at the mean context halfway through decoding.
pub fn estimate_throughputs(cfg: &SimConfig, b: &StageBudgets, summary: &WorkloadSummary) -> Throughputs {
    let image = summary.mean_image_tokens().round() as u64;
    let tp_e = if image == 0 || b.tau_e == 0 {
        0.0
    } else {
        let batch = Batch {
            encode: vec![(0, b.tau_e)],
            encode_tokens: vec![image; b.tau_e as usize],
            ..Default::default()
        };
        (b.tau_e * image) as f64 / batch_latency(&batch, &cfg.model, &cfg.hardware)
    };
    let prefill = Batch {
        prefill: vec![(0, b.tau_p)],
        ..Default::default()
    };
    let tp_p = b.tau_p as f64 / batch_latency(&prefill, &cfg.model, &cfg.hardware);
    let n = summary.n_r as f64;
    let context = ((summary.w_p as f64 + 0.5 * summary.w_d as f64) / n).round().max(1.0) as u64;
    let decode = Batch {
        decode: (0..b.tau_d as usize).map(|i| (i, context)).collect(),
        ..Default::default()
    };
    let tp_d = b.tau_d as f64 / batch_latency(&decode, &cfg.model, &cfg.hardware);
    Throughputs { tp_e, tp_p, tp_d }
}

/// Stage times: work over throughput, zero where there is no work.
pub fn stage_times(summary: &WorkloadSummary, tp: &Throughputs) -> [f64; 3] {
    let t = |w: u64, tp: f64| if w == 0 { 0.0 } else { w as f64 / tp };
    [
        t(summary.w_e, tp.tp_e),
        t(summary.w_p, tp.tp_p),
        t(summary.w_d, tp.tp_d),
    ]
}

/// Splits `n` instances in proportion to `times` by largest remainder, then
/// lifts any zero share to one at the expense of the largest.
pub fn partition(n: usize, times: [f64; 3]) -> Result<[usize; 3], ProfileError> {
    if n < 3 {
        return Err(ProfileError::TooFewInstances { n, min: 3 });
    }
    let total: f64 = times.iter().sum();
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || !(total > 0.0) {
        return Err(ProfileError::BadTimes(times));
    }
    let shares = times.map(|t| n as f64 * t / total);
    let mut counts = shares.map(|s| s.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (shares[a] - shares[a].floor(), shares[b] - shares[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    for i in 0..3 {
        if counts[i] == 0 {
            let largest = (0..3).fold(0, |m, j| if counts[j] > counts[m] { j } else { m });
            counts[largest] -= 1;
            counts[i] = 1;
        }
    }
    Ok(counts)
}

/// The three methods built from one E/P/D split: E+P+D, EP+D and ED+P.
pub fn candidate_methods(n_e: usize, n_p: usize, n_d: usize) -> [DisaggregationMethod; 3] {
    [
        DisaggregationMethod::epd(n_e, n_p, n_d).expect("counts are positive"),
        DisaggregationMethod::ep_d(n_e + n_p, n_d).expect("counts are positive"),
        DisaggregationMethod::ed_p(n_e + n_d, n_p).expect("counts are positive"),
    ]
}

/// Number of E+P+D, EP+D and ED+P splits of `n` instances.
pub fn search_space_size(n: u64) -> u64 {
    let m = n.saturating_sub(1);
    2 * m + m * m.saturating_sub(1) / 2
}

/// Every split of `n` instances across the three families.
pub fn all_methods(n: usize) -> Vec<DisaggregationMethod> {
    let mut out = Vec::new();
    for e in 1..n {
        for p in 1..n - e {
            out.push(DisaggregationMethod::epd(e, p, n - e - p).expect("counts are positive"));
        }
    }
    for k in 1..n {
        out.push(DisaggregationMethod::ep_d(k, n - k).expect("counts are positive"));
    }
    for k in 1..n {
        out.push(DisaggregationMethod::ed_p(k, n - k).expect("counts are positive"));
    }
    out
}

/// One replayed method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRow {
    pub method: DisaggregationMethod,
    /// Zero when the method cannot meet the SLOs at the lowest rate.
    pub goodput: f64,
    pub probes: Vec<(f64, f64)>,
    pub error: Option<String>,
}

/// Estimates behind the heuristic split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub summary: WorkloadSummary,
    pub budgets: StageBudgets,
    pub throughputs: Throughputs,
    pub times: [f64; 3],
    pub split: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub estimate: Option<Estimate>,
    pub table: Vec<CandidateRow>,
    pub best: DisaggregationMethod,
    pub best_goodput: f64,
}

/// Summary, budgets, throughputs, stage times and split for `n` instances.
pub fn estimate(cfg: &SimConfig, trace: &Trace, n: usize) -> Result<Estimate, ProfileError> {
    if n < 3 {
        return Err(ProfileError::TooFewInstances { n, min: 3 });
    }
    let summary = summarize_workload(trace)?;
    let budgets = stage_budgets(cfg, trace, &summary)?;
    let throughputs = estimate_throughputs(cfg, &budgets, &summary);
    let times = stage_times(&summary, &throughputs);
    let split = partition(n, times)?;
    Ok(Estimate {
        summary,
        budgets,
        throughputs,
        times,
        split,
    })
}

fn replay_all(
    cfg: &SimConfig,
    trace: &Trace,
    methods: Vec<DisaggregationMethod>,
    search: &GoodputSearch,
) -> Vec<CandidateRow> {
    methods
        .into_par_iter()
        .map(|method| {
            let mut c = cfg.clone();
            c.method = method.clone();
            match goodput(&c, trace, search) {
                Ok(GoodputResult { goodput, probes, .. }) => CandidateRow {
                    method,
                    goodput,
                    probes,
                    error: None,
                },
                Err(e) => CandidateRow {
                    method,
                    goodput: 0.0,
                    probes: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// First row with the highest goodput; errors if none is positive.
fn pick(table: &[CandidateRow]) -> Result<(DisaggregationMethod, f64), ProfileError> {
    let mut best: Option<&CandidateRow> = None;
    for row in table {
        if row.goodput > best.map_or(0.0, |b| b.goodput) {
            best = Some(row);
        }
    }
    match best {
        Some(b) => Ok((b.method.clone(), b.goodput)),
        None => Err(ProfileError::AllInfeasible(
            table
                .iter()
                .map(|r| format!("{}: {}", r.method, r.error.as_deref().unwrap_or("goodput 0")))
                .collect::<Vec<_>>()
                .join("; "),
        )),
    }
}

/// Heuristic selection over the three candidates of the estimated split.
/// Ties go to the earlier of E+P+D, EP+D, ED+P.
pub fn select_method(
    cfg: &SimConfig,
    trace: &Trace,
    n: usize,
    search: &GoodputSearch,
) -> Result<Selection, ProfileError> {
    let est = estimate(cfg, trace, n)?;
    let [e, p, d] = est.split;
    let table = replay_all(cfg, trace, candidate_methods(e, p, d).to_vec(), search);
    let (best, best_goodput) = pick(&table)?;
    Ok(Selection {
        estimate: Some(est),
        table,
        best,
        best_goodput,
    })
}

/// Exhaustive selection over every split of `n` instances.
pub fn brute_force_select(
    cfg: &SimConfig,
    trace: &Trace,
    n: usize,
    search: &GoodputSearch,
) -> Result<Selection, ProfileError> {
    if n < 2 {
        return Err(ProfileError::TooFewInstances { n, min: 2 });
    }
    if trace.is_empty() {
        return Err(ProfileError::EmptyTrace);
    }
    let table = replay_all(cfg, trace, all_methods(n), search);
    let (best, best_goodput) = pick(&table)?;
    Ok(Selection {
        estimate: None,
        table,
        best,
        best_goodput,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{RequestId, RequestSpec};
    use proptest::prelude::*;

    fn req(images: &[u64], prompt: u64, output: u64) -> RequestSpec {
        RequestSpec {
            id: RequestId::Int(0),
            arrival_s: 0.0,
            image_tokens: images.to_vec(),
            prompt_tokens: prompt,
            output_tokens: output,
            ttft_slo_s: None,
            tbt_slo_s: None,
        }
    }

    #[test]
    fn summaries() {
        let t = Trace::new("t", "", vec![req(&[576], 40, 100), req(&[576], 40, 100)]);
        let s = summarize_workload(&t).unwrap();
        assert_eq!((s.w_e, s.w_p, s.w_d, s.n_r), (1152, 1232, 200, 2));
        let t = Trace::new("t", "", vec![req(&[], 40, 100)]);
        assert_eq!(summarize_workload(&t).unwrap().w_e, 0);
        let t = Trace::new("t", "", vec![req(&[576, 576], 0, 1)]);
        assert_eq!(summarize_workload(&t).unwrap().w_p, 1152);
        assert_eq!(summarize_workload(&Trace::default()), Err(ProfileError::EmptyTrace));
    }

    #[test]
    fn memory_cap_example() {
        let s = WorkloadSummary {
            w_e: 0,
            w_p: 616,
            w_d: 100,
            n_r: 1,
            images: 0,
        };
        let gib = 1024.0 * 1024.0 * 1024.0;
        let cap = decode_concurrency_cap(0.9, 100.0 * gib, 0.5 * 1024.0 * 1024.0, &s).unwrap();
        assert_eq!(cap, (0.9f64 * 102_400.0 / 358.0).floor() as u64);
        assert_eq!(cap, 257);
        assert!(matches!(
            decode_concurrency_cap(1e-9, 100.0 * gib, 524_288.0, &s),
            Err(ProfileError::DecodeMemory { .. })
        ));
    }

    #[test]
    fn decode_budget_takes_the_smaller_cap() {
        let mut cfg = SimConfig::new(DisaggregationMethod::colocated(1).unwrap());
        cfg.slo.tbt_s = 10.0;
        let t = Trace::new("t", "", vec![req(&[576], 40, 100)]);
        let s = summarize_workload(&t).unwrap();
        let b = stage_budgets(&cfg, &t, &s).unwrap();
        assert!(b.tau_d_latency > b.concurrency_cap);
        assert_eq!(b.tau_d, b.concurrency_cap);
    }

    #[test]
    fn throughput_is_budget_over_latency() {
        let cfg = SimConfig::new(DisaggregationMethod::colocated(1).unwrap());
        let t = Trace::new("t", "", vec![req(&[576], 40, 100)]);
        let s = summarize_workload(&t).unwrap();
        let b = stage_budgets(&cfg, &t, &s).unwrap();
        let tp = estimate_throughputs(&cfg, &b, &s);
        let pre = Batch {
            prefill: vec![(0, b.tau_p)],
            ..Default::default()
        };
        assert_eq!(tp.tp_p, b.tau_p as f64 / batch_latency(&pre, &cfg.model, &cfg.hardware));
        let mut fast = cfg.clone();
        fast.hardware.peak_flops *= 2.0;
        fast.hardware.batch_fixed_overhead = 0.0;
        let mut base = cfg;
        base.hardware.batch_fixed_overhead = 0.0;
        let b = StageBudgets { tau_p: 8192, ..b };
        let ratio = estimate_throughputs(&fast, &b, &s).tp_p / estimate_throughputs(&base, &b, &s).tp_p;
        assert!((ratio - 2.0).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn partitions() {
        assert_eq!(partition(3, [1.0, 1.0, 1.0]).unwrap(), [1, 1, 1]);
        assert_eq!(partition(8, [1.0, 3.0, 4.0]).unwrap(), [1, 3, 4]);
        assert_eq!(partition(3, [1.0, 1.0, 98.0]).unwrap(), [1, 1, 1]);
        assert_eq!(partition(8, [0.0, 1.0, 1.0]).unwrap(), [1, 3, 4]);
        assert!(partition(2, [1.0, 1.0, 1.0]).is_err());
        assert!(partition(5, [0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn candidates_and_space() {
        let c = candidate_methods(1, 3, 4);
        let names: Vec<String> = c.iter().map(|m| m.to_string()).collect();
        assert_eq!(names, ["1E3P4D", "4EP4D", "5ED3P"]);
        assert!(c.iter().all(|m| m.total() == 8));
        let names: Vec<String> = candidate_methods(1, 1, 1).iter().map(|m| m.to_string()).collect();
        assert_eq!(names, ["1E1P1D", "2EP1D", "2ED1P"]);
        assert_eq!(search_space_size(8), 35);
        assert_eq!(search_space_size(3), 5);
        assert_eq!(search_space_size(2), 2);
        for n in 2..12 {
            let all = all_methods(n);
            assert_eq!(all.len() as u64, search_space_size(n as u64));
            assert!(all.iter().all(|m| m.total() == n));
        }
    }

    proptest! {
        #[test]
        fn partition_sums_and_floors(n in 3usize..64, t in prop::array::uniform3(0.0f64..1e3)) {
            prop_assume!(t.iter().sum::<f64>() > 0.0);
            let p = partition(n, t).unwrap();
            prop_assert_eq!(p.iter().sum::<usize>(), n);
            prop_assert!(p.iter().all(|&c| c >= 1));
        }

        #[test]
        fn partition_is_scale_invariant(
            n in 3usize..64,
            t in prop::array::uniform3(0.01f64..1e3),
            k in -20i32..20,
        ) {
            let s = 2f64.powi(k);
            prop_assert_eq!(partition(n, t).unwrap(), partition(n, t.map(|x| x * s)).unwrap());
        }
    }
}
