//! Client library: transaction processing against the local cache, commit
//! timestamp assignment and two-phase commit coordination.
//!
//! A client runs many transactions concurrently, each an independent state
//! machine advanced by message arrivals. The decision log is the only state
//! that survives a crash; on restart the client finishes every logged
//! transaction, resolving undecided ones with the cooperative termination
//! rules.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use crate::cache::{Cache, CacheConfig, CacheStrategy, InvalidateReason, Lookup};
use crate::clock::SkewedClock;
use crate::lease::{InterArrival, LeasePolicy};
use crate::message::{AbortCause, Decision, Message, ParticipantStatus, Payload, ValidateRequest};
use crate::sim::{Actor, Observation, Outbox, RemoveReason, TimerKind, TrueTime, TxnSummary};
use crate::types::{shard_of, KeyId, NodeId, ReadEntry, Timestamp, TxnContext, TxnId, TxnKind};
use crate::watermark::{local_watermark, ClientReport};
use crate::workload::{TxnSpec, WorkloadGen};

/// Outcome reported to the application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommitOutcome {
    pub decision: Decision,
    pub cause: Option<AbortCause>,
}

impl CommitOutcome {
    pub fn commit() -> Self {
        Self { decision: Decision::Commit, cause: None }
    }

    pub fn abort(cause: AbortCause) -> Self {
        Self { decision: Decision::Abort, cause: Some(cause) }
    }
}

/// Outcome of the cooperative termination protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtpOutcome {
    Commit,
    Abort,
    Pending,
}

/// Decides an in-doubt transaction from the participant validators' states.
pub fn ctp_outcome(statuses: &[ParticipantStatus]) -> CtpOutcome {
    use ParticipantStatus::*;
    if statuses.is_empty() {
        return CtpOutcome::Pending;
    }
    if statuses.contains(&ReceivedCommit) {
        return CtpOutcome::Commit;
    }
    if statuses.contains(&ReceivedAbort) || statuses.contains(&NoPrepareSeen) || statuses.contains(&RespondedAbort) {
        return CtpOutcome::Abort;
    }
    CtpOutcome::Commit
}

/// [`ctp_outcome`] as a decision; `None` while pending.
pub fn ctp_decide(statuses: &[ParticipantStatus]) -> Option<Decision> {
    match ctp_outcome(statuses) {
        CtpOutcome::Commit => Some(Decision::Commit),
        CtpOutcome::Abort => Some(Decision::Abort),
        CtpOutcome::Pending => None,
    }
}

/// Node ids of the servers a client talks to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Routing {
    /// Validator node per validation shard.
    pub validators: Vec<NodeId>,
    /// Primary node per storage shard.
    pub storage_primaries: Vec<NodeId>,
}

impl Routing {
    pub fn validator_for(&self, key: KeyId) -> NodeId {
        self.validators[shard_of(key, self.validators.len())]
    }

    pub fn primary_for(&self, key: KeyId) -> NodeId {
        self.storage_primaries[shard_of(key, self.storage_primaries.len())]
    }
}

/// Where a coordinator crash is injected, counted in messages sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CrashPoint {
    /// After `n` phase-one messages (replicates first, then validates).
    PhaseOne(usize),
    /// After the decision is logged, before any phase-two message.
    Logged,
    /// After `n >= 1` phase-two messages.
    PhaseTwo(usize),
}

impl CrashPoint {
    /// Every boundary of a transaction with the given message counts.
    pub fn all(phase_one: usize, phase_two: usize) -> Vec<CrashPoint> {
        let mut v: Vec<CrashPoint> = (0..=phase_one).map(CrashPoint::PhaseOne).collect();
        v.push(CrashPoint::Logged);
        v.extend((1..=phase_two).map(CrashPoint::PhaseTwo));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrashPlan {
    /// Crash while coordinating every `every`-th read-write transaction.
    pub every: u64,
    pub restart_after: TrueTime,
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub cache: CacheConfig,
    pub lease_policy: LeasePolicy,
    pub max_lease_secs: f64,
    pub max_in_flight: usize,
    /// Keep `max_in_flight` transactions outstanding instead of following
    /// the workload's arrival process.
    pub closed_loop: bool,
    /// Stop issuing after this many arrivals.
    pub max_txns: Option<u64>,
    pub retry_after: TrueTime,
    pub crash: Option<CrashPlan>,
}

/// A read either completes locally or waits for a server reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadStep {
    Ready(Vec<u8>),
    Pending,
}

#[derive(Debug, Clone)]
struct Processing {
    spec: Option<TxnSpec>,
    next_op: usize,
    waiting: Option<KeyId>,
}

#[derive(Debug, Clone)]
struct Voting {
    validators: BTreeSet<NodeId>,
    storage: BTreeSet<NodeId>,
    abort: Option<AbortCause>,
}

#[derive(Debug, Clone)]
enum Phase {
    Processing(Processing),
    Voting(Voting),
}

#[derive(Debug, Clone)]
struct ActiveTxn {
    ctx: TxnContext,
    started: TrueTime,
    phase: Phase,
    crash_at: Option<CrashPoint>,
    /// Keys whose read was served by the cache.
    hits: Vec<KeyId>,
    stale_hit: bool,
}

/// Durable record of a read-write transaction that entered commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub commit_ts: Timestamp,
    pub validators: Vec<NodeId>,
    pub storage: Vec<NodeId>,
    pub decision: Option<Decision>,
    pub unacked: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, Default)]
pub struct DecisionLog {
    next_seq: u64,
    records: BTreeMap<TxnId, LogRecord>,
}

impl DecisionLog {
    pub fn get(&self, txn: TxnId) -> Option<&LogRecord> {
        self.records.get(&txn)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClientCounters {
    pub arrivals: u64,
    pub rejected: u64,
    pub lost_on_crash: u64,
    pub crashes: u64,
    pub recovered_by_query: u64,
    pub wrong_shard: u64,
    pub callbacks: u64,
    /// Coordinator crashes by the commit boundary they interrupted.
    pub boundary_crashes: BTreeMap<CrashPoint, u64>,
}

#[derive(Debug)]
pub struct ClientNode {
    id: NodeId,
    cfg: ClientConfig,
    routing: Arc<Routing>,
    clock: SkewedClock,
    cache: Cache,
    reads: HashMap<KeyId, InterArrival>,
    gw_view: Timestamp,
    workload: Option<WorkloadGen>,
    active: BTreeMap<TxnId, ActiveTxn>,
    log: DecisionLog,
    recovering: BTreeMap<TxnId, BTreeMap<NodeId, ParticipantStatus>>,
    rw_started: u64,
    alive: bool,
    pub counters: ClientCounters,
}

impl ClientNode {
    pub fn new(id: NodeId, cfg: ClientConfig, routing: Arc<Routing>, clock: SkewedClock) -> Self {
        let cache = Cache::new(cfg.cache.clone());
        Self {
            id,
            cfg,
            routing,
            clock,
            cache,
            reads: HashMap::new(),
            gw_view: Timestamp::LOAD,
            workload: None,
            active: BTreeMap::new(),
            log: DecisionLog::default(),
            recovering: BTreeMap::new(),
            rw_started: 0,
            alive: true,
            counters: ClientCounters::default(),
        }
    }

    pub fn with_workload(mut self, workload: WorkloadGen) -> Self {
        self.workload = Some(workload);
        self
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    pub fn clock(&self) -> &SkewedClock {
        &self.clock
    }

    pub fn log(&self) -> &DecisionLog {
        &self.log
    }

    pub fn in_flight(&self) -> usize {
        self.active.len()
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    /// Schedules the first arrival of the attached workload.
    pub fn start(&mut self, out: &mut Outbox) {
        if let Some(w) = self.workload.as_mut() {
            if self.cfg.closed_loop {
                for _ in self.active.len()..self.cfg.max_in_flight {
                    out.timer(0, TimerKind::NextArrival);
                }
            } else {
                out.timer(w.next_gap_micros(), TimerKind::NextArrival);
            }
        }
    }

    /// Values this client contributes to the next watermark round.
    pub fn watermark_report(&mut self, now: TrueTime) -> ClientReport {
        let local_now = self.clock.now(now);
        let in_flight = self.log.records.values().map(|r| r.commit_ts);
        let local = local_watermark(in_flight, local_now);
        let mut fresh = self.cache.c_freshness(local_now).min(self.gw_view);
        for t in self.active.values() {
            if let Some(f) = t.ctx.read_set.values().map(|r| r.fts).min() {
                fresh = fresh.min(f);
            }
        }
        ClientReport { local_watermark: local, c_freshness: fresh }
    }

    // ---- application API ----

    pub fn begin_transaction(&mut self, now: TrueTime) -> TxnId {
        let id = TxnId::new(self.id, self.log.next_seq);
        self.log.next_seq += 1;
        let phase = Phase::Processing(Processing { spec: None, next_op: 0, waiting: None });
        self.active.insert(id, ActiveTxn { ctx: TxnContext::new(id), started: now, phase, crash_at: None, hits: Vec::new(), stale_hit: false });
        id
    }

    /// Discards every trace of an uncommitted transaction.
    pub fn abort_transaction(&mut self, txn: TxnId) -> bool {
        matches!(self.active.get(&txn), Some(t) if matches!(t.phase, Phase::Processing(_)))
            && self.active.remove(&txn).is_some()
    }

    pub fn put(&mut self, txn: TxnId, key: KeyId, value: Vec<u8>) -> bool {
        match self.active.get_mut(&txn) {
            Some(t) if matches!(t.phase, Phase::Processing(_)) => {
                t.ctx.write_set.insert(key, value);
                true
            }
            _ => false,
        }
    }

    /// Reads `key`: write set, then read set, then cache, then the server.
    /// A server read completes when the reply arrives.
    pub fn get(&mut self, now: TrueTime, txn: TxnId, key: KeyId, out: &mut Outbox) -> ReadStep {
        let Some(t) = self.active.get(&txn) else { return ReadStep::Pending };
        if let Some(v) = t.ctx.write_set.get(&key) {
            return ReadStep::Ready(v.clone());
        }
        if let Some(r) = t.ctx.read_set.get(&key) {
            return ReadStep::Ready(r.value.clone());
        }
        let local = self.clock.now(now);
        self.reads.entry(key).or_default().record(local);
        match self.cache.lookup(key, local) {
            Lookup::Hit(entry) => {
                out.observe(Observation::CacheHit { key, vts: entry.vts });
                let value = entry.value.clone();
                let t = self.active.get_mut(&txn).expect("checked above");
                t.hits.push(key);
                t.ctx.read_set.insert(key, ReadEntry { value: entry.value, vts: entry.vts, fts: entry.fts });
                return ReadStep::Ready(value);
            }
            Lookup::Expired(_) => {
                out.observe(Observation::CacheRemove { key, reason: RemoveReason::Expired });
            }
            Lookup::Miss => {}
        }
        out.observe(Observation::CacheMiss { key });
        if let Some(Phase::Processing(p)) = self.active.get_mut(&txn).map(|t| &mut t.phase) {
            p.waiting = Some(key);
        }
        out.send(Message::new(self.id, self.routing.primary_for(key), Payload::Get { txn, key }));
        ReadStep::Pending
    }

    /// Assigns timestamps and starts the commit protocol.
    pub fn commit_transaction(&mut self, now: TrueTime, txn: TxnId, out: &mut Outbox) {
        let Some(t) = self.active.get_mut(&txn) else { return };
        if !matches!(t.phase, Phase::Processing(_)) {
            return;
        }
        t.ctx.assign_timestamps(self.clock.now(now));
        let kind = t.ctx.kind();
        let commit_ts = t.ctx.t_commit.expect("assigned");
        let freshness_ts = t.ctx.t_freshness.expect("assigned");
        out.observe(Observation::TxnSubmitted(TxnSummary {
            id: txn,
            kind,
            t_commit: commit_ts,
            reads: t.ctx.read_set.iter().map(|(k, r)| (*k, r.vts)).collect(),
            writes: t.ctx.write_set.keys().copied().collect(),
        }));

        let mut by_validator: BTreeMap<NodeId, (Vec<(KeyId, Timestamp)>, Vec<KeyId>)> = BTreeMap::new();
        for (k, r) in &t.ctx.read_set {
            by_validator.entry(self.routing.validator_for(*k)).or_default().0.push((*k, r.vts));
        }
        for k in t.ctx.write_set.keys() {
            by_validator.entry(self.routing.validator_for(*k)).or_default().1.push(*k);
        }
        let mut by_storage: BTreeMap<NodeId, Vec<(KeyId, Vec<u8>)>> = BTreeMap::new();
        for (k, v) in &t.ctx.write_set {
            by_storage.entry(self.routing.primary_for(*k)).or_default().push((*k, v.clone()));
        }
        let validators: Vec<NodeId> = by_validator.keys().copied().collect();
        let storage: Vec<NodeId> = by_storage.keys().copied().collect();

        if validators.is_empty() {
            // nothing read or written
            self.finish(now, txn, CommitOutcome::commit(), out);
            return;
        }

        if kind == TxnKind::ReadWrite {
            self.rw_started += 1;
            if let Some(plan) = self.cfg.crash {
                if plan.every > 0 && self.rw_started.is_multiple_of(plan.every) {
                    let points = CrashPoint::all(validators.len() + storage.len(), validators.len() + storage.len());
                    let idx = (self.rw_started / plan.every - 1) as usize % points.len();
                    t.crash_at = Some(points[idx]);
                }
            }
            self.log.records.insert(
                txn,
                LogRecord {
                    commit_ts,
                    validators: validators.clone(),
                    storage: storage.clone(),
                    decision: None,
                    unacked: BTreeSet::new(),
                },
            );
        }
        let crash_at = t.crash_at;
        t.phase = Phase::Voting(Voting {
            validators: validators.iter().copied().collect(),
            storage: storage.iter().copied().collect(),
            abort: None,
        });

        let mut sent = 0usize;
        if crash_at == Some(CrashPoint::PhaseOne(0)) {
            self.crash_here(CrashPoint::PhaseOne(0), out);
            return;
        }
        for (node, writes) in by_storage {
            out.send(Message::new(self.id, node, Payload::Replicate { txn, writes }));
            sent += 1;
            if crash_at == Some(CrashPoint::PhaseOne(sent)) {
                self.crash_here(CrashPoint::PhaseOne(sent), out);
                return;
            }
        }
        for (node, (reads, writes)) in by_validator {
            let req = ValidateRequest {
                txn,
                kind,
                commit_ts,
                freshness_ts,
                reads,
                writes,
                participant_validators: validators.clone(),
                participant_storage: storage.clone(),
            };
            out.send(Message::new(self.id, node, Payload::Validate(req)));
            sent += 1;
            if crash_at == Some(CrashPoint::PhaseOne(sent)) {
                self.crash_here(CrashPoint::PhaseOne(sent), out);
                return;
            }
        }
    }

    fn finish(&mut self, now: TrueTime, txn: TxnId, outcome: CommitOutcome, out: &mut Outbox) {
        let Some(t) = self.active.remove(&txn) else { return };
        if self.cfg.closed_loop && self.workload.is_some() {
            out.timer(0, TimerKind::NextArrival);
        }
        let kind = t.ctx.kind();
        out.observe(Observation::TxnFinished {
            txn,
            kind,
            decision: outcome.decision,
            cause: outcome.cause,
            started: t.started,
        });
        if outcome.decision == Decision::Commit && kind == TxnKind::ReadWrite {
            let commit_ts = t.ctx.t_commit.expect("assigned");
            for (key, value) in t.ctx.write_set {
                if self.cache.apply_own_write(key, value, commit_ts) {
                    let entry = self.cache.peek(key).expect("refreshed").clone();
                    out.observe(Observation::CacheInsert { key, entry, lease_micros: None });
                }
            }
        }
        if kind == TxnKind::ReadWrite && self.log.records.contains_key(&txn) {
            self.log_decision(now, txn, outcome.decision, t.crash_at, out);
        }
    }

    fn log_decision(&mut self, _now: TrueTime, txn: TxnId, decision: Decision, crash_at: Option<CrashPoint>, out: &mut Outbox) {
        let rec = self.log.records.get_mut(&txn).expect("logged at commit start");
        rec.decision = Some(decision);
        rec.unacked = rec.validators.iter().chain(rec.storage.iter()).copied().collect();
        out.observe(Observation::CoordinatorLogged { txn, decision });
        if crash_at == Some(CrashPoint::Logged) {
            self.crash_here(CrashPoint::Logged, out);
            return;
        }
        let commit_ts = rec.commit_ts;
        let targets: Vec<NodeId> = rec.validators.iter().chain(rec.storage.iter()).copied().collect();
        for (i, node) in targets.into_iter().enumerate() {
            out.send(Message::new(self.id, node, Payload::Decision { txn, decision, commit_ts }));
            if crash_at == Some(CrashPoint::PhaseTwo(i + 1)) {
                self.crash_here(CrashPoint::PhaseTwo(i + 1), out);
                return;
            }
        }
        out.timer(self.cfg.retry_after, TimerKind::DecisionRetry(txn));
    }

    fn resend_decision(&mut self, txn: TxnId, out: &mut Outbox) {
        let Some(rec) = self.log.records.get(&txn) else { return };
        let Some(decision) = rec.decision else { return };
        for &node in &rec.unacked {
            out.send(Message::new(self.id, node, Payload::Decision { txn, decision, commit_ts: rec.commit_ts }));
        }
        out.timer(self.cfg.retry_after, TimerKind::DecisionRetry(txn));
    }

    /// Runs workload operations until the transaction blocks or commits.
    fn advance(&mut self, now: TrueTime, txn: TxnId, out: &mut Outbox) {
        loop {
            let Some(t) = self.active.get_mut(&txn) else { return };
            let Phase::Processing(p) = &mut t.phase else { return };
            if p.waiting.is_some() {
                return;
            }
            let Some(spec) = p.spec.as_ref() else { return };
            let n = spec.keys.len();
            let op = p.next_op;
            let total = match spec.kind {
                TxnKind::ReadOnly => n,
                TxnKind::ReadWrite => 2 * n,
            };
            if op >= total {
                self.commit_transaction(now, txn, out);
                return;
            }
            let key = spec.keys[op % n];
            p.next_op += 1;
            if op < n {
                if self.get(now, txn, key, out) == ReadStep::Pending {
                    return;
                }
            } else {
                let mut value = Vec::with_capacity(12);
                value.extend_from_slice(&txn.node.to_le_bytes());
                value.extend_from_slice(&txn.seq.to_le_bytes());
                self.put(txn, key, value);
            }
        }
    }

    fn on_arrival(&mut self, now: TrueTime, out: &mut Outbox) {
        let Some(w) = self.workload.as_mut() else { return };
        if self.cfg.max_txns.is_some_and(|m| self.counters.arrivals >= m) {
            return;
        }
        self.counters.arrivals += 1;
        let spec = w.next_txn();
        if !self.cfg.closed_loop {
            out.timer(w.next_gap_micros(), TimerKind::NextArrival);
        }
        if self.active.len() >= self.cfg.max_in_flight {
            self.counters.rejected += 1;
            out.observe(Observation::Rejected);
            return;
        }
        let txn = self.begin_transaction(now);
        if let Some(t) = self.active.get_mut(&txn) {
            t.phase = Phase::Processing(Processing { spec: Some(spec), next_op: 0, waiting: None });
        }
        self.advance(now, txn, out);
    }

    fn on_get_reply(
        &mut self,
        now: TrueTime,
        txn: TxnId,
        key: KeyId,
        value: Vec<u8>,
        vts: Timestamp,
        w_mean: Option<f64>,
        out: &mut Outbox,
    ) {
        let local = self.clock.now(now);
        let lease_micros = if self.cache.strategy() == CacheStrategy::Lease {
            let r = self.reads.get(&key).and_then(InterArrival::mean_secs);
            let d = self.cfg.lease_policy.duration(r, w_mean, self.cfg.max_lease_secs);
            (d * 1e6).round() as u64
        } else {
            0
        };
        let fts = vts.max(self.gw_view);
        let outcome = self.cache.insert(key, value.clone(), vts, lease_micros, self.gw_view, local);
        if let Some((victim, _)) = outcome.evicted {
            out.observe(Observation::CacheRemove { key: victim, reason: RemoveReason::Evicted });
        }
        if let Some(entry) = outcome.inserted {
            let lease = (self.cache.strategy() == CacheStrategy::Lease).then_some(lease_micros);
            out.observe(Observation::CacheInsert { key, entry, lease_micros: lease });
        }
        let Some(t) = self.active.get_mut(&txn) else { return };
        let Phase::Processing(p) = &mut t.phase else { return };
        if p.waiting != Some(key) {
            return;
        }
        p.waiting = None;
        t.ctx.read_set.entry(key).or_insert(ReadEntry { value, vts, fts });
        self.advance(now, txn, out);
    }

    fn on_validate_reply(
        &mut self,
        now: TrueTime,
        src: NodeId,
        txn: TxnId,
        decision: Decision,
        cause: Option<AbortCause>,
        stale_keys: Vec<KeyId>,
        out: &mut Outbox,
    ) {
        for key in &stale_keys {
            if self.cache.invalidate(*key, InvalidateReason::StaleAbort).is_some() {
                out.observe(Observation::CacheRemove { key: *key, reason: RemoveReason::StaleAbort });
            }
        }
        let Some(t) = self.active.get_mut(&txn) else { return };
        if !t.stale_hit && stale_keys.iter().any(|k| t.hits.contains(k)) {
            t.stale_hit = true;
            out.observe(Observation::StaleHitAbort { txn });
        }
        let Phase::Voting(v) = &mut t.phase else { return };
        if !v.validators.remove(&src) {
            return;
        }
        if decision == Decision::Abort && v.abort.is_none() {
            v.abort = Some(cause.unwrap_or(AbortCause::CoordinatorFailure));
        }
        self.try_decide(now, txn, out);
    }

    fn on_replicate_reply(&mut self, now: TrueTime, src: NodeId, txn: TxnId, ok: bool, out: &mut Outbox) {
        let Some(t) = self.active.get_mut(&txn) else { return };
        let Phase::Voting(v) = &mut t.phase else { return };
        if !v.storage.remove(&src) {
            return;
        }
        if !ok && v.abort.is_none() {
            v.abort = Some(AbortCause::ReplicationFailure);
        }
        self.try_decide(now, txn, out);
    }

    fn try_decide(&mut self, now: TrueTime, txn: TxnId, out: &mut Outbox) {
        let Some(t) = self.active.get(&txn) else { return };
        let Phase::Voting(v) = &t.phase else { return };
        let outcome = match v.abort {
            Some(cause) => CommitOutcome::abort(cause),
            None if v.validators.is_empty() && v.storage.is_empty() => CommitOutcome::commit(),
            None => return,
        };
        self.finish(now, txn, outcome, out);
    }

    fn on_decision_ack(&mut self, src: NodeId, txn: TxnId) {
        let Some(rec) = self.log.records.get_mut(&txn) else { return };
        rec.unacked.remove(&src);
        if rec.decision.is_some() && rec.unacked.is_empty() {
            self.log.records.remove(&txn);
        }
    }

    fn on_ctp_status(&mut self, now: TrueTime, src: NodeId, txn: TxnId, status: ParticipantStatus, out: &mut Outbox) {
        let Some(rec) = self.log.records.get(&txn) else { return };
        let Some(statuses) = self.recovering.get_mut(&txn) else { return };
        statuses.insert(src, status);
        if statuses.len() < rec.validators.len() {
            return;
        }
        let list: Vec<ParticipantStatus> = statuses.values().copied().collect();
        self.recovering.remove(&txn);
        let Some(decision) = ctp_decide(&list) else { return };
        self.counters.recovered_by_query += 1;
        out.observe(Observation::CtpResolved { txn, statuses: list, decision });
        self.log_decision(now, txn, decision, None, out);
    }

    fn crash_here(&mut self, point: CrashPoint, out: &mut Outbox) {
        *self.counters.boundary_crashes.entry(point).or_default() += 1;
        out.crash_self();
    }

    /// Loses volatile state. The decision log and the clock survive.
    pub fn crash(&mut self) {
        self.alive = false;
        self.counters.crashes += 1;
        self.counters.lost_on_crash += self.active.len() as u64;
        self.active.clear();
        self.recovering.clear();
        self.cache.clear();
        self.reads.clear();
    }

    /// Restarts after a crash: finishes logged transactions and resumes the
    /// workload.
    pub fn restart(&mut self, _now: TrueTime, out: &mut Outbox) {
        self.alive = true;
        let txns: Vec<TxnId> = self.log.records.keys().copied().collect();
        for txn in txns {
            let rec = &self.log.records[&txn];
            if rec.decision.is_some() {
                self.resend_decision(txn, out);
            } else {
                self.recovering.insert(txn, BTreeMap::new());
                for &v in &rec.validators {
                    out.send(Message::new(self.id, v, Payload::CtpQuery { txn }));
                }
            }
        }
        self.start(out);
    }

    pub fn crash_plan(&self) -> Option<CrashPlan> {
        self.cfg.crash
    }
}

impl Actor for ClientNode {
    fn id(&self) -> NodeId {
        self.id
    }

    fn on_message(&mut self, now: TrueTime, msg: Message, out: &mut Outbox) {
        let src = msg.src;
        match msg.payload {
            Payload::GetReply { txn, key, value, vts, w_mean_global } => {
                self.on_get_reply(now, txn, key, value, vts, w_mean_global, out)
            }
            Payload::ValidateReply { txn, decision, cause, stale_keys } => {
                self.on_validate_reply(now, src, txn, decision, cause, stale_keys, out)
            }
            Payload::ReplicateReply { txn, ok } => self.on_replicate_reply(now, src, txn, ok, out),
            Payload::DecisionAck { txn } => self.on_decision_ack(src, txn),
            Payload::Invalidate { key, vts } => {
                self.counters.callbacks += 1;
                if self.cache.callback(key, vts).is_some() {
                    out.observe(Observation::CacheRemove { key, reason: RemoveReason::Callback });
                }
            }
            Payload::FreshnessBroadcast { global_watermark, .. } => {
                self.gw_view = self.gw_view.max(global_watermark);
            }
            Payload::CtpStatus { txn, status } => self.on_ctp_status(now, src, txn, status, out),
            Payload::WrongShard { .. } => self.counters.wrong_shard += 1,
            _ => {}
        }
    }

    fn on_timer(&mut self, now: TrueTime, kind: TimerKind, out: &mut Outbox) {
        match kind {
            TimerKind::NextArrival => self.on_arrival(now, out),
            TimerKind::DecisionRetry(txn) if self.log.records.get(&txn).is_some_and(|r| !r.unacked.is_empty()) => {
                self.resend_decision(txn, out);
            }
            _ => {}
        }
    }
}
