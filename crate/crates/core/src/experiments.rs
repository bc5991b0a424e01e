//! Named experiment matrices. Each point is an isolated simulation whose
//! history is re-checked before its row is reported.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::checker::{check_timestamp_serializable, write_history, Violation};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::lease::{fresh_hit_rate, monte_carlo_fresh_rate, AccessStats};
use crate::message::MessageKind;
use crate::par::{self, Execution};
use crate::sim::{self, SimReport};

pub const NAMES: [&str; 8] = [
    "strategy-compare",
    "alpha-r-sweep",
    "alpha-rw-sweep",
    "ro-ratio-sweep",
    "cache-size-sweep",
    "lease-policy-compare",
    "lease-sweep",
    "failure-inject",
];

const STRATEGIES: [&str; 4] = ["none", "naive", "ei", "lease"];

/// Settings for throughput comparisons: every client keeps eight
/// transactions outstanding and servers spend 100 µs per message, so the
/// storage tier is the bottleneck.
const THROUGHPUT: &[&str] = &["sim.closed_loop=true", "sim.max_in_flight=8", "sim.service_us=100"];

const FAILURES: &[&str] = &[
    "failure.coordinator_crash_every=10",
    "failure.restart_after_ms=50",
    "failure.replica_outages=[{shard=0,replica=1,at_ms=2000,down_ms=3000}]",
    "sim.warmup_ms=0",
];

/// Overrides an experiment applies on top of the loaded configuration and
/// below any command-line `--set`.
pub fn preset(name: &str) -> Result<&'static [&'static str]> {
    Ok(match name {
        "strategy-compare" | "alpha-r-sweep" | "alpha-rw-sweep" | "ro-ratio-sweep" | "lease-policy-compare" => THROUGHPUT,
        "failure-inject" => FAILURES,
        "cache-size-sweep" | "lease-sweep" => &[],
        _ => return Err(Error::UnknownExperiment(name.to_string())),
    })
}

/// One simulation of an experiment matrix.
#[derive(Debug, Clone)]
pub struct Point {
    pub label: String,
    pub strategy: &'static str,
    pub cfg: SimConfig,
}

fn with_strategy(cfg: &SimConfig, strategy: &'static str) -> Result<SimConfig> {
    match strategy {
        "none" => cfg.with_overrides(&["cache.capacity_fraction=0"]),
        s => cfg.with_overrides(&[format!("cache.strategy=\"{s}\"")]),
    }
}

fn strategy_label(cfg: &SimConfig) -> &'static str {
    if cfg.cache.capacity_fraction == 0.0 {
        "none"
    } else {
        cfg.cache.strategy.name()
    }
}

/// Expands a named experiment into its points, `seeds` replicas each.
pub fn points(name: &str, base: &SimConfig, seeds: u64) -> Result<Vec<Point>> {
    let mut variants: Vec<(String, SimConfig)> = Vec::new();
    let sweep = |variants: &mut Vec<(String, SimConfig)>, key: &str, values: &[f64], strategies: &[&'static str]| -> Result<()> {
        for v in values {
            for s in strategies {
                let cfg = with_strategy(base, s)?.with_overrides(&[format!("{key}={v}")])?;
                variants.push((format!("{key}={v} strategy={s}"), cfg));
            }
        }
        Ok(())
    };
    match name {
        "strategy-compare" => {
            for s in STRATEGIES {
                variants.push((format!("strategy={s}"), with_strategy(base, s)?));
            }
        }
        "alpha-r-sweep" => sweep(&mut variants, "workload.alpha_r", &[0.8, 0.9, 0.99, 1.1, 1.2], &STRATEGIES)?,
        "alpha-rw-sweep" => sweep(&mut variants, "workload.alpha_rw", &[0.3, 0.4, 0.5, 0.6, 0.7], &STRATEGIES)?,
        "ro-ratio-sweep" => {
            sweep(&mut variants, "workload.read_only_ratio", &[0.5, 0.6, 0.7, 0.8, 0.9, 1.0], &STRATEGIES)?
        }
        "cache-size-sweep" => {
            let s = strategy_label(base);
            let s = if s == "none" { "lease" } else { s };
            sweep(&mut variants, "cache.capacity_fraction", &[0.0001, 0.0002, 0.0005, 0.001, 0.002, 0.005, 0.01], &[s])?
        }
        "lease-policy-compare" => {
            for p in ["ideal", "P(0.1)", "P(0.2)", "P(0.4)", "mean"] {
                let cfg = with_strategy(base, "lease")?.with_overrides(&[format!("cache.lease_policy=\"{p}\"")])?;
                variants.push((format!("policy={p}"), cfg));
            }
        }
        "failure-inject" => {
            for s in ["naive", "ei", "lease"] {
                variants.push((format!("strategy={s}"), with_strategy(base, s)?));
            }
        }
        "lease-sweep" => return Err(Error::Config("lease-sweep has no simulation points".into())),
        _ => return Err(Error::UnknownExperiment(name.to_string())),
    }
    let mut out = Vec::new();
    for (label, cfg) in variants {
        for i in 0..seeds.max(1) {
            let mut cfg = cfg.clone();
            cfg.sim.seed = base.sim.seed + i;
            let strategy = strategy_label(&cfg);
            out.push(Point { label: format!("{label} seed={}", cfg.sim.seed), strategy, cfg });
        }
    }
    Ok(out)
}

/// One CSV row per simulation point. Column order is the field order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRow {
    pub experiment: String,
    pub point: usize,
    pub label: String,
    pub seed: u64,
    pub strategy: String,
    pub lease_policy: String,
    pub alpha_r: f64,
    pub alpha_rw: f64,
    pub read_only_ratio: f64,
    pub capacity_fraction: f64,
    pub max_skew_us: i64,
    pub committed: u64,
    pub committed_ro: u64,
    pub committed_rw: u64,
    pub aborted: u64,
    pub abort_rate: f64,
    pub stale_aborts: u64,
    pub stale_abort_rate: f64,
    pub stale_hit_aborts: u64,
    pub stale_hit_abort_rate: f64,
    pub throughput_tps: f64,
    pub hit_rate: f64,
    pub hits: u64,
    pub fresh_hits: u64,
    pub stale_hits: u64,
    pub misses: u64,
    pub mean_lease_us: f64,
    pub stale_windows: u64,
    pub mean_stale_window_us: f64,
    pub mean_txn_duration_us: f64,
    pub latency_p50_us: u64,
    pub latency_p99_us: u64,
    pub get_messages: u64,
    pub validate_messages: u64,
    pub invalidate_messages: u64,
    pub messages: u64,
    pub dropped: u64,
    pub ctp_runs: u64,
    pub coordinator_crashes: u64,
    pub ctp_resolved: u64,
    pub ctp_rule_mismatches: u64,
    pub split_decisions: u64,
    pub installed_but_aborted: u64,
    pub stuck_prepared: u64,
    pub history_len: usize,
    pub checker: String,
}

impl PointRow {
    /// True when the history checked clean and the decision audit is empty.
    pub fn ok(&self) -> bool {
        self.checker == "ok" && self.ctp_rule_mismatches == 0 && self.split_decisions == 0 && self.installed_but_aborted == 0
            && self.stuck_prepared == 0
    }
}

fn per(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn row(experiment: &str, point: usize, p: &Point, r: &SimReport, history_len: usize, verdict: &Result<(), Violation>) -> PointRow {
    let c = &r.core;
    let finished = r.committed() + r.aborted();
    PointRow {
        experiment: experiment.to_string(),
        point,
        label: p.label.clone(),
        seed: p.cfg.sim.seed,
        strategy: p.strategy.to_string(),
        lease_policy: if p.strategy == "lease" { p.cfg.cache.lease_policy.clone() } else { String::new() },
        alpha_r: p.cfg.workload.alpha_r,
        alpha_rw: p.cfg.workload.alpha_rw,
        read_only_ratio: p.cfg.workload.read_only_ratio,
        capacity_fraction: p.cfg.cache.capacity_fraction,
        max_skew_us: p.cfg.clock.max_skew(),
        committed: r.committed(),
        committed_ro: c.committed_ro,
        committed_rw: c.committed_rw,
        aborted: r.aborted(),
        abort_rate: r.abort_rate(),
        stale_aborts: r.stale_aborts(),
        stale_abort_rate: per(r.stale_aborts(), finished),
        stale_hit_aborts: c.stale_hit_aborts,
        stale_hit_abort_rate: per(c.stale_hit_aborts, c.hits),
        throughput_tps: r.throughput(),
        hit_rate: r.hit_rate(),
        hits: c.hits,
        fresh_hits: c.fresh_hits,
        stale_hits: c.stale_hits,
        misses: c.misses,
        mean_lease_us: c.mean_lease_us,
        stale_windows: c.stale_windows,
        mean_stale_window_us: c.mean_stale_window_us,
        mean_txn_duration_us: c.mean_txn_duration_us,
        latency_p50_us: c.latency_p50_us,
        latency_p99_us: c.latency_p99_us,
        get_messages: r.message_count(MessageKind::Get),
        validate_messages: r.message_count(MessageKind::Validate),
        invalidate_messages: r.message_count(MessageKind::Invalidate),
        messages: c.messages.iter().sum(),
        dropped: c.dropped,
        ctp_runs: r.ctp_runs,
        coordinator_crashes: r.boundary_crashes.values().sum(),
        ctp_resolved: r.audit.ctp_resolved,
        ctp_rule_mismatches: r.audit.ctp_rule_mismatches,
        split_decisions: r.audit.split_decisions,
        installed_but_aborted: r.audit.installed_but_aborted,
        stuck_prepared: r.audit.stuck_prepared,
        history_len,
        checker: match verdict {
            Ok(()) => "ok".to_string(),
            Err(v) => format!("violation txn={} key={:?}: {}", v.txn, v.key.map(|k| k.0), v.detail),
        },
    }
}

/// Runs every point, checking each history and optionally dumping it (and
/// the event trace, when enabled) under `dump_dir`.
pub fn run_points(experiment: &str, points: &[Point], exec: Execution, dump_dir: Option<&Path>) -> Result<Vec<PointRow>> {
    let indexed: Vec<(usize, &Point)> = points.iter().enumerate().collect();
    let rows = par::map(exec, &indexed, |&(i, p)| -> Result<PointRow> {
        let out = sim::run(&p.cfg)?;
        let verdict = check_timestamp_serializable(&out.history);
        if let Some(dir) = dump_dir {
            let path = dir.join(format!("{experiment}-{i:03}.history.jsonl"));
            let mut w = BufWriter::new(File::create(&path).map_err(|e| io_error(&path, e))?);
            write_history(&mut w, &out.history)?;
            w.flush().map_err(|e| io_error(&path, e))?;
            if let Some(trace) = &out.trace {
                let path = dir.join(format!("{experiment}-{i:03}.trace.json"));
                let w = BufWriter::new(File::create(&path).map_err(|e| io_error(&path, e))?);
                serde_json::to_writer(w, trace).map_err(|e| Error::Decode(e.to_string()))?;
            }
        }
        Ok(row(experiment, i, p, &out.report, out.history.len(), &verdict))
    });
    rows.into_iter().collect()
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Row of the lease sweep. Durations are in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaseSweepRow {
    pub d: f64,
    pub predicted_fresh: f64,
    pub simulated_fresh: f64,
    pub simulated_stale: f64,
    pub hit_rate: f64,
    /// Batch-means standard error of `simulated_fresh`.
    pub simulated_fresh_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaseSweep {
    pub r_mean_ms: f64,
    pub w_mean_ms: f64,
    pub d_max_ms: f64,
    pub accesses: u64,
    pub seed: u64,
}

impl Default for LeaseSweep {
    fn default() -> Self {
        Self { r_mean_ms: 1.0, w_mean_ms: 19.0, d_max_ms: 50.0, accesses: 1_000_000, seed: 1 }
    }
}

/// Sweeps `d` over whole multiples of the read gap up to `d_max_ms`,
/// comparing the model with the Monte Carlo simulation of one key.
pub fn lease_sweep(s: &LeaseSweep, exec: Execution) -> Result<Vec<LeaseSweepRow>> {
    let stats = AccessStats::new(s.r_mean_ms / 1e3, s.w_mean_ms / 1e3)?;
    let steps = (s.d_max_ms / s.r_mean_ms).floor() as u64;
    let mut rows = Vec::with_capacity(steps as usize);
    for k in 1..=steps {
        let d_ms = k as f64 * s.r_mean_ms;
        let d = d_ms / 1e3;
        let predicted = fresh_hit_rate(d, &stats)?;
        let mc = monte_carlo_fresh_rate(stats.r_mean_cache, stats.w_mean_global, d, s.accesses, s.seed.wrapping_add(k), exec);
        rows.push(LeaseSweepRow {
            d: d_ms,
            predicted_fresh: predicted,
            simulated_fresh: mc.fresh_hit_rate,
            simulated_stale: mc.stale_rate,
            hit_rate: mc.hit_rate,
            simulated_fresh_se: mc.fresh_std_err,
        });
    }
    Ok(rows)
}

/// Writes rows as CSV with a header line.
pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    csv.flush().map_err(|e| Error::Io(e.to_string()))
}
