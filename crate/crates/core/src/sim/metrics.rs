use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::checker::CommittedTxn;
use crate::client::ctp_decide;
use crate::message::{AbortCause, Decision, MessageKind, ParticipantStatus};
use crate::types::{KeyId, NodeId, Timestamp, TxnId, TxnKind};

use super::actor::{Observation, RemoveReason, TrueTime, TxnSummary};

#[derive(Debug, Clone, Copy)]
struct Holding {
    vts: Timestamp,
    /// True time at which a lease runs out; `None` for unleased entries.
    expiry: Option<TrueTime>,
    stale_since: Option<TrueTime>,
}

#[derive(Debug, Default, Clone, Copy)]
struct Window {
    count: u64,
    total: u64,
    censored: u64,
}

impl Window {
    fn add(&mut self, d: u64) {
        self.count += 1;
        self.total += d;
    }
}

#[derive(Debug, Default)]
struct TxnAudit {
    coordinator: Option<Decision>,
    ctp: Vec<(Vec<ParticipantStatus>, Decision)>,
    applied: Vec<(NodeId, Decision)>,
    installed: bool,
}

/// Final per-transaction decision audit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuditSummary {
    /// Transactions resolved through the termination protocol.
    pub ctp_resolved: u64,
    /// Resolutions whose decision disagrees with the termination rules.
    pub ctp_rule_mismatches: u64,
    /// Transactions whose participants saw different decisions.
    pub split_decisions: u64,
    /// Writes installed for a transaction whose decision is abort.
    pub installed_but_aborted: u64,
    /// Participant validators still holding a prepared write at the end.
    pub stuck_prepared: u64,
}

/// Accumulates observations into the run report.
#[derive(Debug)]
pub struct Metrics {
    /// Counters ignore events before this instant; the history does not.
    measure_from: TrueTime,
    skews: HashMap<NodeId, i64>,
    latest: HashMap<KeyId, Timestamp>,
    holdings: BTreeMap<(NodeId, KeyId), Holding>,
    holders: HashMap<KeyId, BTreeSet<NodeId>>,
    pub committed: u64,
    committed_by_kind: [u64; 2],
    aborted_by_kind: [u64; 2],
    aborts_by_cause: BTreeMap<&'static str, u64>,
    latencies: Vec<u64>,
    all_durations: u64,
    finished: u64,
    pub rejected: u64,
    hits: u64,
    fresh_hits: u64,
    stale_hits: u64,
    stale_hit_aborts: u64,
    misses: u64,
    removals: BTreeMap<&'static str, u64>,
    leases_granted: u64,
    lease_total_us: u64,
    window: Window,
    pub messages: [u64; 14],
    pub dropped: u64,
    summaries: HashMap<TxnId, TxnSummary>,
    history: Vec<CommittedTxn>,
    audit: BTreeMap<TxnId, TxnAudit>,
    pub since_broadcast: u64,
}

fn kind_idx(kind: TxnKind) -> usize {
    match kind {
        TxnKind::ReadOnly => 0,
        TxnKind::ReadWrite => 1,
    }
}

fn reason_name(r: RemoveReason) -> &'static str {
    match r {
        RemoveReason::Expired => "expired",
        RemoveReason::Evicted => "evicted",
        RemoveReason::Callback => "callback",
        RemoveReason::StaleAbort => "stale_abort",
        RemoveReason::Restart => "restart",
    }
}

impl Metrics {
    pub fn new(skews: HashMap<NodeId, i64>, measure_from: TrueTime) -> Self {
        Self {
            measure_from,
            skews,
            latest: HashMap::new(),
            holdings: BTreeMap::new(),
            holders: HashMap::new(),
            committed: 0,
            committed_by_kind: [0; 2],
            aborted_by_kind: [0; 2],
            aborts_by_cause: AbortCause::ALL.iter().map(|c| (c.name(), 0)).collect(),
            latencies: Vec::new(),
            all_durations: 0,
            finished: 0,
            rejected: 0,
            hits: 0,
            fresh_hits: 0,
            stale_hits: 0,
            stale_hit_aborts: 0,
            misses: 0,
            removals: BTreeMap::new(),
            leases_granted: 0,
            lease_total_us: 0,
            window: Window::default(),
            messages: [0; 14],
            dropped: 0,
            summaries: HashMap::new(),
            history: Vec::new(),
            audit: BTreeMap::new(),
            since_broadcast: 0,
        }
    }

    pub fn count_message(&mut self, now: TrueTime, kind: MessageKind) {
        if now >= self.measure_from {
            self.messages[kind as usize] += 1;
        }
    }

    fn expiry_true_time(&self, node: NodeId, lts: Timestamp) -> Option<TrueTime> {
        if lts.is_infinite() {
            return None;
        }
        let skew = self.skews.get(&node).copied().unwrap_or(0);
        Some((lts.micros as i128 - skew as i128).max(0) as u64)
    }

    fn close_window(&mut self, now: TrueTime, node: NodeId, key: KeyId) -> Option<Holding> {
        let h = self.holdings.remove(&(node, key))?;
        if let Some(set) = self.holders.get_mut(&key) {
            set.remove(&node);
        }
        if let Some(start) = h.stale_since.filter(|s| *s >= self.measure_from) {
            let end = h.expiry.map_or(now, |e| e.min(now));
            self.window.add(end.saturating_sub(start));
        }
        Some(h)
    }

    /// Drops every holding of a crashed client.
    pub fn client_lost_cache(&mut self, now: TrueTime, node: NodeId) {
        let keys: Vec<KeyId> = self.holdings.range((node, KeyId(0))..=(node, KeyId(u64::MAX))).map(|((_, k), _)| *k).collect();
        for k in keys {
            self.close_window(now, node, k);
        }
    }

    pub fn observe(&mut self, now: TrueTime, node: NodeId, obs: Observation) {
        let measuring = now >= self.measure_from;
        match obs {
            Observation::CacheHit { .. }
            | Observation::CacheMiss { .. }
            | Observation::StaleHitAbort { .. }
            | Observation::Rejected
                if !measuring => {}
            Observation::StaleHitAbort { .. } => self.stale_hit_aborts += 1,
            Observation::CacheHit { key, vts } => {
                self.hits += 1;
                if self.latest.get(&key).copied().unwrap_or(Timestamp::LOAD) == vts {
                    self.fresh_hits += 1;
                } else {
                    self.stale_hits += 1;
                }
            }
            Observation::CacheMiss { .. } => self.misses += 1,
            Observation::CacheInsert { key, entry, lease_micros } => {
                self.close_window(now, node, key);
                if let Some(l) = lease_micros.filter(|_| measuring) {
                    self.leases_granted += 1;
                    self.lease_total_us += l;
                }
                let latest = self.latest.get(&key).copied().unwrap_or(Timestamp::LOAD);
                let h = Holding {
                    vts: entry.vts,
                    expiry: self.expiry_true_time(node, entry.lts),
                    stale_since: (entry.vts < latest).then_some(now),
                };
                self.holdings.insert((node, key), h);
                self.holders.entry(key).or_default().insert(node);
            }
            Observation::CacheRemove { key, reason } => {
                if measuring {
                    *self.removals.entry(reason_name(reason)).or_default() += 1;
                }
                self.close_window(now, node, key);
            }
            Observation::TxnSubmitted(summary) => {
                self.summaries.insert(summary.id, summary);
            }
            Observation::TxnFinished { txn, kind, decision, cause, started } => {
                if decision == Decision::Commit {
                    self.since_broadcast += 1;
                    if kind == TxnKind::ReadOnly {
                        if let Some(s) = self.summaries.remove(&txn) {
                            self.history.push(to_committed(s));
                        }
                    }
                } else if kind == TxnKind::ReadOnly {
                    self.summaries.remove(&txn);
                }
                if !measuring {
                    return;
                }
                self.finished += 1;
                self.all_durations += now - started;
                match decision {
                    Decision::Commit => {
                        self.committed += 1;
                        self.committed_by_kind[kind_idx(kind)] += 1;
                        self.latencies.push(now - started);
                    }
                    Decision::Abort => {
                        self.aborted_by_kind[kind_idx(kind)] += 1;
                        if let Some(c) = cause {
                            *self.aborts_by_cause.entry(c.name()).or_default() += 1;
                        }
                    }
                }
            }
            Observation::CoordinatorLogged { txn, decision } => {
                self.audit.entry(txn).or_default().coordinator = Some(decision);
            }
            Observation::ValidatorApplied { txn, decision } => {
                self.audit.entry(txn).or_default().applied.push((node, decision));
            }
            Observation::CtpResolved { txn, statuses, decision } => {
                self.audit.entry(txn).or_default().ctp.push((statuses, decision));
            }
            Observation::Installed { txn, key, vts } => {
                self.audit.entry(txn).or_default().installed = true;
                self.latest.insert(key, vts);
                let holders: Vec<NodeId> = self.holders.get(&key).map(|s| s.iter().copied().collect()).unwrap_or_default();
                for c in holders {
                    if let Some(h) = self.holdings.get_mut(&(c, key)) {
                        let live = h.expiry.is_none_or(|e| e > now);
                        if h.vts < vts && h.stale_since.is_none() && live {
                            h.stale_since = Some(now);
                        }
                    }
                }
            }
            Observation::Rejected => self.rejected += 1,
        }
    }

    /// Closes the books: censors open stale windows, resolves read-write
    /// outcomes and audits decisions.
    pub fn finish(mut self, end: TrueTime, stuck_prepared: u64) -> (MetricsCore, Vec<CommittedTxn>, AuditSummary) {
        let open: Vec<(NodeId, KeyId)> = self.holdings.keys().copied().collect();
        for (node, key) in open {
            if let Some(h) = self.holdings.get(&(node, key)) {
                if h.stale_since.is_some_and(|s| s >= self.measure_from) {
                    self.window.censored += 1;
                }
            }
            self.close_window(end, node, key);
        }

        let mut audit = AuditSummary { stuck_prepared, ..Default::default() };
        let mut rw_committed = Vec::new();
        for (txn, a) in &self.audit {
            let mut decisions: BTreeSet<Decision> = a.applied.iter().map(|(_, d)| *d).collect();
            decisions.extend(a.coordinator);
            for (statuses, d) in &a.ctp {
                audit.ctp_resolved += 1;
                if ctp_decide(statuses) != Some(*d) {
                    audit.ctp_rule_mismatches += 1;
                }
                decisions.insert(*d);
            }
            if decisions.len() > 1 {
                audit.split_decisions += 1;
            }
            let committed = decisions.contains(&Decision::Commit);
            if a.installed && !committed {
                audit.installed_but_aborted += 1;
            }
            if committed && decisions.len() == 1 {
                rw_committed.push(*txn);
            }
        }
        for txn in rw_committed {
            if let Some(s) = self.summaries.remove(&txn) {
                self.history.push(to_committed(s));
            }
        }
        self.history.sort_by_key(|t| (t.t_commit, t.kind == TxnKind::ReadOnly, t.txn));

        self.latencies.sort_unstable();
        let pct = |p: f64| -> u64 {
            if self.latencies.is_empty() {
                0
            } else {
                let i = ((self.latencies.len() - 1) as f64 * p).round() as usize;
                self.latencies[i]
            }
        };
        let core = MetricsCore {
            committed_ro: self.committed_by_kind[0],
            committed_rw: self.committed_by_kind[1],
            aborted_ro: self.aborted_by_kind[0],
            aborted_rw: self.aborted_by_kind[1],
            aborts_by_cause: self.aborts_by_cause.clone(),
            rejected: self.rejected,
            hits: self.hits,
            fresh_hits: self.fresh_hits,
            stale_hits: self.stale_hits,
            stale_hit_aborts: self.stale_hit_aborts,
            misses: self.misses,
            removals: self.removals.clone(),
            mean_lease_us: ratio(self.lease_total_us as f64, self.leases_granted as f64),
            stale_windows: self.window.count,
            stale_windows_censored: self.window.censored,
            mean_stale_window_us: ratio(self.window.total as f64, self.window.count as f64),
            mean_txn_duration_us: ratio(self.all_durations as f64, self.finished as f64),
            latency_p50_us: pct(0.5),
            latency_p99_us: pct(0.99),
            messages: self.messages,
            dropped: self.dropped,
        };
        (core, self.history, audit)
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn to_committed(s: TxnSummary) -> CommittedTxn {
    CommittedTxn {
        txn: s.id,
        kind: s.kind,
        t_commit: s.t_commit,
        reads: s.reads,
        writes: s.writes.into_iter().map(|k| (k, s.t_commit)).collect(),
    }
}

/// Raw totals gathered from observations.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsCore {
    pub committed_ro: u64,
    pub committed_rw: u64,
    pub aborted_ro: u64,
    pub aborted_rw: u64,
    pub aborts_by_cause: BTreeMap<&'static str, u64>,
    pub rejected: u64,
    pub hits: u64,
    pub fresh_hits: u64,
    pub stale_hits: u64,
    /// Transactions that received a stale-read vote on a key read from cache.
    pub stale_hit_aborts: u64,
    pub misses: u64,
    pub removals: BTreeMap<&'static str, u64>,
    pub mean_lease_us: f64,
    pub stale_windows: u64,
    pub stale_windows_censored: u64,
    pub mean_stale_window_us: f64,
    pub mean_txn_duration_us: f64,
    pub latency_p50_us: u64,
    pub latency_p99_us: u64,
    pub messages: [u64; 14],
    pub dropped: u64,
}
