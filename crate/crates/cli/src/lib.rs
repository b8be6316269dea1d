//! Command-line driver: configuration loading, subcommands and report
//! output. `main.rs` only parses arguments and maps errors to exit codes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use epd_sim::cluster::{self, DisaggregationMethod, GoodputSearch, SimConfig, SimError, SimReport};
use epd_sim::engine::{InstanceType, SchedulerPolicy};
use epd_sim::metrics::{write_request_csv, GoodputError};
use epd_sim::profiler::{self, ProfileError, Selection};
use epd_sim::workload::{self, Trace};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use config::{MethodChoice, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => CliError::Config(m),
            e => CliError::Infeasible(e.to_string()),
        }
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::TooFewInstances { .. } | ProfileError::EmptyTrace => CliError::Usage(e.to_string()),
            e => CliError::Infeasible(e.to_string()),
        }
    }
}

impl From<GoodputError> for CliError {
    fn from(e: GoodputError) -> Self {
        match e {
            GoodputError::InvalidTolerance(_) | GoodputError::InvalidBounds(..) => CliError::Usage(e.to_string()),
            e => CliError::Infeasible(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "epdsim", version, about = "Simulate disaggregated multimodal LLM serving")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct GlobalArgs {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Request trace in JSON Lines.
    #[arg(long, global = true)]
    pub trace: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    /// Check simulator invariants after every event (slow).
    #[arg(long, global = true, hide = true)]
    pub check_invariants: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay a trace and write a report.
    Replay,
    /// Find the highest request rate that keeps 90% SLO attainment.
    Goodput(GoodputArgs),
    /// Choose a disaggregation method for the trace.
    Profile(ProfileArgs),
    /// Replay over a grid of instance splits, rates or scheduler policies.
    Sweep(SweepArgs),
    /// Print the searched batch budgets of every instance type.
    Budgets,
    /// Parse a trace and print its summary.
    ValidateTrace,
    /// Convert a CSV trace to JSON Lines.
    ConvertTrace(ConvertArgs),
    /// Generate a synthetic trace shaped like a dataset.
    SynthTrace(SynthArgs),
}

#[derive(Debug, Args, Clone)]
pub struct SearchArgs {
    /// Lowest rate probed, requests/s.
    #[arg(long, default_value_t = 0.1)]
    pub lo: f64,
    /// Highest rate probed, requests/s.
    #[arg(long, default_value_t = 16.0)]
    pub hi: f64,
    /// Search resolution, requests/s.
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f64,
    /// Also probe both ends of the bracket to check monotonicity.
    #[arg(long)]
    pub verify: bool,
}

impl SearchArgs {
    fn search(&self) -> GoodputSearch {
        GoodputSearch {
            lo: self.lo,
            hi: self.hi,
            tolerance: self.tolerance,
            verify_bounds: self.verify,
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct GoodputArgs {
    #[command(flatten)]
    pub search: SearchArgs,
    /// Print every probe.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Args, Clone)]
pub struct ProfileArgs {
    /// Cluster size; defaults to `[cluster] instances`.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Replay every split instead of the three heuristic candidates.
    #[arg(long)]
    pub brute_force: bool,
    /// Only use requests from the last SECONDS of the trace.
    #[arg(long, value_name = "SECONDS")]
    pub window: Option<f64>,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    InstanceRatio,
    RequestRate,
    SchedulerPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    #[value(name = "E+P+D")]
    EPD,
    #[value(name = "EP+D")]
    EPxD,
    #[value(name = "ED+P")]
    EDxP,
}

#[derive(Debug, Args, Clone)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Method family for `instance_ratio`.
    #[arg(long, value_enum, default_value = "EP+D")]
    pub family: Family,
    /// Cluster size for `instance_ratio`; defaults to `[cluster] instances`.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Rates for `request_rate`: `START:END:STEP` or a comma list.
    #[arg(long, default_value = "1:8:1")]
    pub rates: String,
    /// Rescale the trace to this rate before sweeping the other axes.
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct ConvertArgs {
    /// CSV input.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON Lines output.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value = "textcaps")]
    pub dataset: String,
    #[arg(long, default_value = "llava-1.5-7b")]
    pub model: String,
    #[arg(long, default_value_t = 1000)]
    pub requests: usize,
    /// Mean arrival rate, requests/s.
    #[arg(long, default_value_t = 4.0)]
    pub rate: f64,
    #[arg(long)]
    pub output: PathBuf,
}

/// Resolved global inputs shared by the subcommands.
struct Context {
    cfg: RunConfig,
    global: GlobalArgs,
}

impl Context {
    fn new(global: &GlobalArgs) -> Result<Self, CliError> {
        let mut cfg = match &global.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = global.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &global.out {
            cfg.output.dir = out.clone();
        }
        cfg.check_invariants = global.check_invariants;
        cfg.validate()?;
        Ok(Self {
            cfg,
            global: global.clone(),
        })
    }

    fn trace(&self) -> Result<Trace, CliError> {
        let path = self
            .global
            .trace
            .as_ref()
            .ok_or_else(|| CliError::Usage("this command needs --trace PATH".into()))?;
        if !path.exists() {
            return Err(CliError::Usage(format!("trace file not found: {}", path.display())));
        }
        workload::load_trace(path).map_err(|e| CliError::Usage(e.to_string()))
    }

    /// The configured method, running the profiler when it is `auto`.
    fn method(&self, trace: &Trace, log: &mut dyn Write) -> Result<DisaggregationMethod, CliError> {
        match self.cfg.method()? {
            MethodChoice::Fixed(m) => Ok(m),
            MethodChoice::Auto { instances } => {
                let base = self
                    .cfg
                    .sim_config(DisaggregationMethod::colocated(1).expect("valid"))?;
                let sel = profiler::select_method(&base, trace, instances, &GoodputSearch::default())?;
                wr(
                    log,
                    format_args!(
                        "auto-selected method {} (goodput {:.3} req/s)\n",
                        sel.best, sel.best_goodput
                    ),
                )?;
                Ok(sel.best)
            }
        }
    }

    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.cfg.output.dir.clone();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(dir)
    }
}

fn wr(out: &mut dyn Write, args: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(args).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

/// Runs one parsed command, writing human output to `out` and warnings to
/// `err`.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::ConvertTrace(a) => return convert_trace(a, out),
        Command::SynthTrace(a) => return synth(a, cli.global.seed.unwrap_or(0), out),
        _ => {}
    }
    let ctx = Context::new(&cli.global)?;
    match &cli.command {
        Command::Replay => replay(&ctx, out, err),
        Command::Goodput(a) => goodput(&ctx, a, out),
        Command::Profile(a) => profile(&ctx, a, out),
        Command::Sweep(a) => sweep(&ctx, a, out),
        Command::Budgets => budgets(&ctx, out),
        Command::ValidateTrace => validate_trace(&ctx, out),
        Command::ConvertTrace(_) | Command::SynthTrace(_) => unreachable!(),
    }
}

fn replay(ctx: &Context, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let trace = ctx.trace()?;
    let method = ctx.method(&trace, err)?;
    let cfg = ctx.cfg.sim_config(method)?;
    let report = cluster::run(&cfg, &trace)?;
    for w in &report.warnings {
        wr(err, format_args!("WARNING: {w}\n"))?;
    }
    let dir = ctx.out_dir()?;
    let path = dir.join("report.json");
    fs::write(&path, to_json(&report) + "\n").map_err(|e| io_err(&path, e))?;
    if ctx.cfg.output.csv {
        let path = dir.join("requests.csv");
        let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        write_request_csv(&report.requests, f).map_err(|e| io_err(&path, e))?;
    }
    if ctx.global.json {
        wr(out, format_args!("{}\n", to_json(&report.aggregates)))
    } else {
        wr(out, format_args!("{}", summary_table(&report)))?;
        wr(out, format_args!("report written to {}\n", dir.display()))
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// Human-readable summary of a replay.
pub fn summary_table(r: &SimReport) -> String {
    let a = &r.aggregates;
    let mut s = String::new();
    let mut row = |k: &str, v: String| s.push_str(&format!("{k:<24}{v}\n"));
    row("method", r.config.method.to_string());
    row("policy", r.config.policy.as_str().into());
    row("requests", format!("{} ({} finished)", a.requests, a.finished));
    row("slo attainment", format!("{:.4}", a.slo_attainment));
    row("throughput (req/s)", format!("{:.4}", a.throughput_rps));
    row("output tokens/s", format!("{:.2}", a.output_tokens_per_s));
    row(
        "ttft p50 / p99 (s)",
        format!(
            "{} / {}",
            fmt_opt(a.ttft_s.as_ref().map(|p| p.p50)),
            fmt_opt(a.ttft_s.as_ref().map(|p| p.p99))
        ),
    );
    row(
        "tbt p50 / p99 (s)",
        format!(
            "{} / {}",
            fmt_opt(a.tbt_s.as_ref().map(|p| p.p50)),
            fmt_opt(a.tbt_s.as_ref().map(|p| p.p99))
        ),
    );
    row("migration share", format!("{:.6}", a.migration_share));
    s
}

fn goodput(ctx: &Context, a: &GoodputArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let trace = ctx.trace()?;
    let method = ctx.method(&trace, out)?;
    let cfg = ctx.cfg.sim_config(method)?;
    let res = cluster::goodput(&cfg, &trace, &a.search.search())?;
    if ctx.global.json {
        return wr(out, format_args!("{}\n", to_json(&res)));
    }
    if a.verbose {
        for (rate, att) in &res.probes {
            wr(out, format_args!("probe rate {rate:.4} req/s: attainment {att:.4}\n"))?;
        }
    }
    if !res.monotone {
        wr(
            out,
            format_args!("WARNING: attainment is not monotone in rate over the probes\n"),
        )?;
    }
    wr(
        out,
        format_args!("goodput {:.4} req/s ({} probes)\n", res.goodput, res.probes.len()),
    )?;
    if res.goodput >= a.search.hi {
        wr(out, format_args!("note: goodput reached the upper bound; raise --hi\n"))?;
    }
    Ok(())
}

fn profile(ctx: &Context, a: &ProfileArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut trace = ctx.trace()?;
    if let Some(w) = a.window {
        if !(w > 0.0) {
            return Err(CliError::Usage("--window must be positive".into()));
        }
        trace = trace.tail_window(w);
    }
    let n = a.instances.unwrap_or(ctx.cfg.cluster.instances);
    if n < 3 {
        return Err(CliError::Usage(format!(
            "profiling needs at least 3 instances, got {n}"
        )));
    }
    let base = ctx.cfg.sim_config(DisaggregationMethod::colocated(1).expect("valid"))?;
    let search = a.search.search();
    let sel = if a.brute_force {
        profiler::brute_force_select(&base, &trace, n, &search)?
    } else {
        profiler::select_method(&base, &trace, n, &search)?
    };
    if ctx.global.json {
        return wr(out, format_args!("{}\n", to_json(&sel)));
    }
    wr(out, format_args!("{}", selection_table(&sel)))
}

/// Candidate table with the winner marked.
pub fn selection_table(sel: &Selection) -> String {
    let mut s = String::new();
    if let Some(e) = &sel.estimate {
        s.push_str(&format!(
            "workload: W_e={} W_p={} W_d={} N_r={}\n",
            e.summary.w_e, e.summary.w_p, e.summary.w_d, e.summary.n_r
        ));
        s.push_str(&format!(
            "budgets: tau_e={} tau_p={} tau_d={} (latency {} / memory {})\n",
            e.budgets.tau_e, e.budgets.tau_p, e.budgets.tau_d, e.budgets.tau_d_latency, e.budgets.concurrency_cap
        ));
        s.push_str(&format!(
            "stage times (s): {:.4} {:.4} {:.4} -> split E={} P={} D={}\n",
            e.times[0], e.times[1], e.times[2], e.split[0], e.split[1], e.split[2]
        ));
    }
    s.push_str(&format!("{:<3}{:<12}{:<10}{:>12}\n", "", "method", "family", "goodput"));
    for row in &sel.table {
        let mark = if row.method == sel.best { "*" } else { "" };
        s.push_str(&format!(
            "{:<3}{:<12}{:<10}{:>12.4}",
            mark,
            row.method.to_string(),
            row.method.family(),
            row.goodput
        ));
        if let Some(e) = &row.error {
            s.push_str(&format!("  ({e})"));
        }
        s.push('\n');
    }
    s.push_str(&format!("best: {} at {:.4} req/s\n", sel.best, sel.best_goodput));
    s
}

/// Rates from `START:END:STEP` (inclusive) or `a,b,c`.
pub fn parse_rates(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("bad rate list {spec:?}"));
    let rates: Vec<f64> = if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let [start, end, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0 && end >= start) {
            return Err(bad());
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| start + i as f64 * step).collect()
    } else {
        spec.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if rates.is_empty() || rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(bad());
    }
    Ok(rates)
}

/// Every split of `n` instances within one family.
pub fn family_splits(family: Family, n: usize) -> Vec<DisaggregationMethod> {
    let mut v = Vec::new();
    match family {
        Family::EPD => {
            for e in 1..n {
                for p in 1..n - e {
                    v.push(DisaggregationMethod::epd(e, p, n - e - p).expect("positive"));
                }
            }
        }
        Family::EPxD => v.extend((1..n).map(|k| DisaggregationMethod::ep_d(k, n - k).expect("positive"))),
        Family::EDxP => v.extend((1..n).map(|k| DisaggregationMethod::ed_p(k, n - k).expect("positive"))),
    }
    v
}

pub const SWEEP_COLUMNS: &str =
    "method,policy,rate,attainment,throughput_rps,ttft_mean_s,ttft_p99_s,tbt_mean_s,tbt_p99_s,migration_share";

fn sweep(ctx: &Context, a: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut trace = ctx.trace()?;
    if let Some(r) = a.rate {
        trace = workload::scale_to_rate(&trace, r).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let fixed = || -> Result<DisaggregationMethod, CliError> {
        match ctx.cfg.method()? {
            MethodChoice::Fixed(m) => Ok(m),
            MethodChoice::Auto { .. } => Err(CliError::Usage("this sweep needs a fixed cluster.method".into())),
        }
    };
    let base = ctx.cfg.sim_config(DisaggregationMethod::colocated(1).expect("valid"))?;
    let points: Vec<(SimConfig, Option<f64>)> = match a.axis {
        SweepAxis::InstanceRatio => {
            let n = a.instances.unwrap_or(ctx.cfg.cluster.instances);
            let min = if a.family == Family::EPD { 3 } else { 2 };
            if n < min {
                return Err(CliError::Usage(format!(
                    "instance_ratio sweep needs at least {min} instances"
                )));
            }
            family_splits(a.family, n)
                .into_iter()
                .map(|m| {
                    (
                        SimConfig {
                            method: m,
                            ..base.clone()
                        },
                        None,
                    )
                })
                .collect()
        }
        SweepAxis::RequestRate => {
            let m = fixed()?;
            parse_rates(&a.rates)?
                .into_iter()
                .map(|r| {
                    (
                        SimConfig {
                            method: m.clone(),
                            ..base.clone()
                        },
                        Some(r),
                    )
                })
                .collect()
        }
        SweepAxis::SchedulerPolicy => {
            let m = fixed()?;
            SchedulerPolicy::ALL
                .into_iter()
                .map(|p| {
                    (
                        SimConfig {
                            method: m.clone(),
                            policy: p,
                            ..base.clone()
                        },
                        None,
                    )
                })
                .collect()
        }
    };
    let rows: Vec<Result<String, CliError>> = points
        .par_iter()
        .map(|(cfg, rate)| {
            let t = match rate {
                Some(r) => workload::scale_to_rate(&trace, *r).map_err(|e| CliError::Usage(e.to_string()))?,
                None => trace.clone(),
            };
            let r = cluster::run(cfg, &t)?;
            let a = &r.aggregates;
            let p = |x: &Option<epd_sim::metrics::Percentiles>, f: fn(&epd_sim::metrics::Percentiles) -> f64| {
                x.as_ref().map_or(String::new(), |v| format!("{:.6}", f(v)))
            };
            Ok(format!(
                "{},{},{},{:.6},{:.6},{},{},{},{},{:.6}",
                cfg.method,
                cfg.policy.as_str(),
                t.rate().map_or(String::new(), |r| format!("{r:.6}")),
                a.slo_attainment,
                a.throughput_rps,
                p(&a.ttft_s, |v| v.mean),
                p(&a.ttft_s, |v| v.p99),
                p(&a.tbt_s, |v| v.mean),
                p(&a.tbt_s, |v| v.p99),
                a.migration_share
            ))
        })
        .collect();
    let mut csv = String::from(SWEEP_COLUMNS);
    csv.push('\n');
    for r in rows {
        csv.push_str(&r?);
        csv.push('\n');
    }
    if ctx.global.out.is_some() {
        let dir = ctx.out_dir()?;
        let axis = a.axis.to_possible_value().expect("named").get_name().to_string();
        let path = dir.join(format!("sweep_{axis}.csv"));
        fs::write(&path, &csv).map_err(|e| io_err(&path, e))?;
    }
    wr(out, format_args!("{csv}"))
}

#[derive(Debug, Serialize)]
struct BudgetRow {
    instance_type: InstanceType,
    cap_s: f64,
    tau_t: u64,
    tau_e: u64,
    feasible: bool,
}

fn budgets(ctx: &Context, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ctx.cfg.sim_config(DisaggregationMethod::colocated(1).expect("valid"))?;
    let probe = match &ctx.global.trace {
        Some(_) => cfg.probe_for(&ctx.trace()?),
        None => cfg.probe_for(&Trace::default()),
    };
    let rows: Vec<BudgetRow> = InstanceType::ALL
        .into_iter()
        .map(|ty| {
            let b = cfg.budgets_for(ty, probe);
            BudgetRow {
                instance_type: ty,
                cap_s: b.cap_s,
                tau_t: b.budgets.tau_t,
                tau_e: b.budgets.tau_e,
                feasible: b.budgets.feasible,
            }
        })
        .collect();
    if ctx.global.json {
        return wr(out, format_args!("{}\n", to_json(&rows)));
    }
    wr(
        out,
        format_args!(
            "{:<6}{:>10}{:>8}{:>8}  {}\n",
            "type", "cap_s", "tau_t", "tau_e", "feasible"
        ),
    )?;
    for r in &rows {
        let flag = if r.feasible {
            "yes"
        } else {
            "NO (floor budget exceeds cap)"
        };
        wr(
            out,
            format_args!(
                "{:<6}{:>10.4}{:>8}{:>8}  {}\n",
                r.instance_type.as_str(),
                r.cap_s,
                r.tau_t,
                r.tau_e,
                flag
            ),
        )?;
    }
    Ok(())
}

fn validate_trace(ctx: &Context, out: &mut dyn Write) -> Result<(), CliError> {
    let trace = ctx.trace()?;
    let summary = profiler::summarize_workload(&trace).ok();
    if ctx.global.json {
        #[derive(Serialize)]
        struct V<'a> {
            name: &'a str,
            requests: usize,
            rate: Option<f64>,
            summary: Option<profiler::WorkloadSummary>,
        }
        let v = V {
            name: &trace.name,
            requests: trace.len(),
            rate: trace.rate(),
            summary,
        };
        return wr(out, format_args!("{}\n", to_json(&v)));
    }
    wr(out, format_args!("{}: {} requests", trace.name, trace.len()))?;
    if let Some(r) = trace.rate() {
        wr(out, format_args!(", {r:.4} req/s"))?;
    }
    wr(out, format_args!("\n"))?;
    if let Some(s) = summary {
        wr(
            out,
            format_args!(
                "visual tokens {}, prefill tokens {}, output tokens {}, images {}\n",
                s.w_e, s.w_p, s.w_d, s.images
            ),
        )?;
    }
    Ok(())
}

fn convert_trace(a: &ConvertArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let f = fs::File::open(&a.input).map_err(|e| CliError::Usage(format!("{}: {e}", a.input.display())))?;
    let trace = workload::convert_csv(f).map_err(|e| CliError::Usage(format!("{}: {e}", a.input.display())))?;
    workload::save_trace(&trace, &a.output).map_err(|e| io_err(&a.output, e))?;
    wr(
        out,
        format_args!("wrote {} requests to {}\n", trace.len(), a.output.display()),
    )
}

fn synth(a: &SynthArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = workload::dataset_preset(&a.dataset, &a.model, seed, a.requests, a.rate).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown dataset {:?} or model {:?}; datasets: {}",
            a.dataset,
            a.model,
            workload::DATASETS.join(", ")
        ))
    })?;
    let trace = workload::synth_trace(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    workload::save_trace(&trace, &a.output).map_err(|e| io_err(&a.output, e))?;
    wr(
        out,
        format_args!("wrote {} requests to {}\n", trace.len(), a.output.display()),
    )
}
