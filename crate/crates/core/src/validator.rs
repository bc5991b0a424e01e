//! Sharded optimistic validation.
//!
//! Each validator owns the keys that map to its shard and keeps, per key,
//! the latest read timestamp, the prepared writer and the committed version
//! history. Validation is a single pass over the request; a COMMIT vote
//! reserves the write keys until the decision arrives.

use std::collections::{BTreeMap, HashMap};

use crate::client::ctp_decide;
use crate::error::{Error, Result};
use crate::message::{AbortCause, Decision, Message, ParticipantStatus, Payload, ValidateRequest};
use crate::sim::{Actor, Observation, Outbox, TimerKind, TrueTime};
use crate::types::{KeyId, NodeId, Timestamp, TxnId, TxnKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMode {
    /// Reads must match the latest committed version.
    #[default]
    Verbatim,
    /// Read-only transactions may read the latest version at or before
    /// their commit timestamp.
    TimeTravelReadOnly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatorKeyState {
    pub latest_read: Timestamp,
    pub prepared_write: Option<TxnId>,
    pub latest_committed: Timestamp,
    /// Ascending; the last element is `latest_committed`.
    pub versions: Vec<Timestamp>,
}

impl ValidatorKeyState {
    fn loaded(load_ts: Timestamp) -> Self {
        Self { latest_read: load_ts, prepared_write: None, latest_committed: load_ts, versions: vec![load_ts] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub decision: Decision,
    pub cause: Option<AbortCause>,
    /// Read keys whose cached version was superseded.
    pub stale_keys: Vec<KeyId>,
}

impl Verdict {
    fn commit() -> Self {
        Self { decision: Decision::Commit, cause: None, stale_keys: Vec::new() }
    }

    fn abort(cause: AbortCause) -> Self {
        Self { decision: Decision::Abort, cause: Some(cause), stale_keys: Vec::new() }
    }
}

#[derive(Debug, Clone)]
struct TxnRecord {
    status: ParticipantStatus,
    writes: Vec<KeyId>,
}

#[derive(Debug, Clone)]
pub struct ValidatorState {
    keys: HashMap<KeyId, ValidatorKeyState>,
    txns: HashMap<TxnId, TxnRecord>,
    ts_gc: Timestamp,
    loaded: ValidatorKeyState,
    mode: ValidationMode,
}

impl ValidatorState {
    pub fn new(load_ts: Timestamp, mode: ValidationMode) -> Self {
        Self { keys: HashMap::new(), txns: HashMap::new(), ts_gc: Timestamp::LOAD, loaded: ValidatorKeyState::loaded(load_ts), mode }
    }

    pub fn ts_gc(&self) -> Timestamp {
        self.ts_gc
    }

    pub fn key_state(&self, key: KeyId) -> Option<&ValidatorKeyState> {
        self.keys.get(&key)
    }

    fn key_mut(&mut self, key: KeyId) -> &mut ValidatorKeyState {
        let loaded = &self.loaded;
        self.keys.entry(key).or_insert_with(|| loaded.clone())
    }

    fn key_or_loaded(&self, key: KeyId) -> &ValidatorKeyState {
        self.keys.get(&key).unwrap_or(&self.loaded)
    }

    /// Seeds a key's state, e.g. for tests or a preloaded history.
    pub fn set_key_state(&mut self, key: KeyId, state: ValidatorKeyState) {
        self.keys.insert(key, state);
    }

    pub fn validate(&mut self, req: &ValidateRequest) -> Verdict {
        if let Some(rec) = self.txns.get(&req.txn) {
            // late or duplicate request for a transaction already settled here
            return match rec.status {
                ParticipantStatus::Prepared => Verdict::commit(),
                ParticipantStatus::ReceivedCommit => Verdict::commit(),
                _ => Verdict::abort(AbortCause::CoordinatorFailure),
            };
        }
        let verdict = self.check(req);
        if verdict.decision == Decision::Commit {
            for (key, _) in &req.reads {
                let st = self.key_mut(*key);
                st.latest_read = st.latest_read.max(req.commit_ts);
            }
            for key in &req.writes {
                self.key_mut(*key).prepared_write = Some(req.txn);
            }
        }
        if req.kind == TxnKind::ReadWrite {
            let status = match verdict.decision {
                Decision::Commit => ParticipantStatus::Prepared,
                Decision::Abort => ParticipantStatus::RespondedAbort,
            };
            self.txns.insert(req.txn, TxnRecord { status, writes: req.writes.clone() });
        }
        verdict
    }

    fn check(&self, req: &ValidateRequest) -> Verdict {
        if req.freshness_ts < self.ts_gc {
            return Verdict::abort(AbortCause::GcHorizon);
        }
        let time_travel = self.mode == ValidationMode::TimeTravelReadOnly && req.kind == TxnKind::ReadOnly;
        for (i, (key, version)) in req.reads.iter().enumerate() {
            let st = self.key_or_loaded(*key);
            if st.prepared_write.is_some() {
                return Verdict::abort(AbortCause::PreparedConflict);
            }
            if !self.read_is_current(st, *version, req.commit_ts, time_travel) {
                let mut verdict = Verdict::abort(AbortCause::StaleRead);
                verdict.stale_keys.push(*key);
                for (k, v) in &req.reads[i + 1..] {
                    let st = self.key_or_loaded(*k);
                    if !self.read_is_current(st, *v, req.commit_ts, time_travel) {
                        verdict.stale_keys.push(*k);
                    }
                }
                return verdict;
            }
        }
        let new_version = req.commit_ts;
        for key in &req.writes {
            let st = self.key_or_loaded(*key);
            if st.prepared_write.is_some() {
                return Verdict::abort(AbortCause::PreparedConflict);
            } else if st.latest_read >= new_version || st.latest_committed >= new_version {
                return Verdict::abort(AbortCause::WriteConflict);
            }
        }
        Verdict::commit()
    }

    fn read_is_current(&self, st: &ValidatorKeyState, version: Timestamp, commit_ts: Timestamp, time_travel: bool) -> bool {
        if time_travel {
            !st.versions.iter().any(|v| *v > version && *v <= commit_ts)
        } else {
            st.latest_committed == version
        }
    }

    /// Applies a phase-two decision. Returns `false` for duplicates and
    /// unknown transactions.
    pub fn apply_decision(&mut self, txn: TxnId, decision: Decision, commit_ts: Timestamp) -> bool {
        let writes = match self.txns.get_mut(&txn) {
            Some(rec) => match rec.status {
                ParticipantStatus::ReceivedCommit | ParticipantStatus::ReceivedAbort => return false,
                ParticipantStatus::Prepared => {
                    rec.status = match decision {
                        Decision::Commit => ParticipantStatus::ReceivedCommit,
                        Decision::Abort => ParticipantStatus::ReceivedAbort,
                    };
                    std::mem::take(&mut rec.writes)
                }
                ParticipantStatus::RespondedAbort | ParticipantStatus::NoPrepareSeen => {
                    rec.status = ParticipantStatus::ReceivedAbort;
                    return true;
                }
            },
            None => {
                // the decision overtook the request; remember it so a late
                // request cannot prepare
                let status = match decision {
                    Decision::Commit => ParticipantStatus::ReceivedCommit,
                    Decision::Abort => ParticipantStatus::ReceivedAbort,
                };
                self.txns.insert(txn, TxnRecord { status, writes: Vec::new() });
                return true;
            }
        };
        for key in writes {
            let st = self.key_mut(key);
            if st.prepared_write == Some(txn) {
                st.prepared_write = None;
            }
            if decision == Decision::Commit && commit_ts > st.latest_committed {
                st.latest_committed = commit_ts;
                st.versions.push(commit_ts);
            }
        }
        true
    }

    pub fn knows(&self, txn: TxnId) -> bool {
        self.txns.contains_key(&txn)
    }

    pub fn status(&self, txn: TxnId) -> ParticipantStatus {
        self.txns.get(&txn).map_or(ParticipantStatus::NoPrepareSeen, |r| r.status)
    }

    /// Status reported to a backup coordinator. A validator that never saw
    /// the request records the transaction as aborted so that a late
    /// request cannot prepare it.
    pub fn ctp_status(&mut self, txn: TxnId) -> ParticipantStatus {
        match self.txns.get(&txn) {
            Some(rec) => rec.status,
            None => {
                self.txns.insert(txn, TxnRecord { status: ParticipantStatus::NoPrepareSeen, writes: Vec::new() });
                ParticipantStatus::NoPrepareSeen
            }
        }
    }

    /// Discards versions older than `ts_gc`, keeping each key's latest
    /// committed version. Returns the number of versions dropped.
    pub fn gc(&mut self, ts_gc: Timestamp) -> Result<usize> {
        if ts_gc < self.ts_gc {
            return Err(Error::GcRegression { from: self.ts_gc, to: ts_gc });
        }
        self.ts_gc = ts_gc;
        let mut purged = 0;
        for st in self.keys.values_mut() {
            let keep_from = st.versions.partition_point(|v| *v < ts_gc).min(st.versions.len() - 1);
            if keep_from > 0 {
                st.versions.drain(..keep_from);
                purged += keep_from;
            }
        }
        Ok(purged)
    }

    pub fn prepared_count(&self) -> usize {
        self.txns.values().filter(|r| r.status == ParticipantStatus::Prepared).count()
    }

    pub fn decided(&self) -> impl Iterator<Item = (TxnId, ParticipantStatus)> + '_ {
        self.txns.iter().map(|(t, r)| (*t, r.status))
    }
}

#[derive(Debug, Clone)]
struct InDoubt {
    commit_ts: Timestamp,
    validators: Vec<NodeId>,
    storage: Vec<NodeId>,
}

#[derive(Debug, Clone)]
struct CtpRound {
    statuses: BTreeMap<NodeId, ParticipantStatus>,
}

/// Validator shard as a simulation actor, including the backup-coordinator
/// role for in-doubt read-write transactions.
#[derive(Debug)]
pub struct ValidatorNode {
    id: NodeId,
    pub state: ValidatorState,
    coordinator_timeout: TrueTime,
    in_doubt: HashMap<TxnId, InDoubt>,
    ctp: HashMap<TxnId, CtpRound>,
    pub ctp_runs: u64,
}

impl ValidatorNode {
    pub fn new(id: NodeId, state: ValidatorState, coordinator_timeout: TrueTime) -> Self {
        Self { id, state, coordinator_timeout, in_doubt: HashMap::new(), ctp: HashMap::new(), ctp_runs: 0 }
    }

    fn finish_ctp(&mut self, txn: TxnId, out: &mut Outbox) {
        let Some(round) = self.ctp.get(&txn) else { return };
        let Some(info) = self.in_doubt.get(&txn) else { return };
        if round.statuses.len() < info.validators.len() {
            return;
        }
        let statuses: Vec<ParticipantStatus> = round.statuses.values().copied().collect();
        let Some(decision) = ctp_decide(&statuses) else { return };
        let info = self.in_doubt.remove(&txn).expect("checked above");
        self.ctp.remove(&txn);
        self.state.apply_decision(txn, decision, info.commit_ts);
        out.observe(Observation::ValidatorApplied { txn, decision });
        out.observe(Observation::CtpResolved { txn, statuses, decision });
        for &node in info.validators.iter().chain(info.storage.iter()) {
            if node != self.id {
                out.send(Message::new(
                    self.id,
                    node,
                    Payload::Decision { txn, decision, commit_ts: info.commit_ts },
                ));
            }
        }
    }
}

impl Actor for ValidatorNode {
    fn id(&self) -> NodeId {
        self.id
    }

    fn on_message(&mut self, _now: TrueTime, msg: Message, out: &mut Outbox) {
        match msg.payload {
            Payload::Validate(req) => {
                let fresh = !self.state.knows(req.txn);
                let verdict = self.state.validate(&req);
                let backup = req.participant_validators.iter().min() == Some(&self.id);
                if req.kind == TxnKind::ReadWrite && fresh && backup {
                    self.in_doubt.insert(
                        req.txn,
                        InDoubt {
                            commit_ts: req.commit_ts,
                            validators: req.participant_validators.clone(),
                            storage: req.participant_storage.clone(),
                        },
                    );
                    out.timer(self.coordinator_timeout, TimerKind::CtpTimeout(req.txn));
                }
                out.send(Message::new(
                    self.id,
                    msg.src,
                    Payload::ValidateReply {
                        txn: req.txn,
                        decision: verdict.decision,
                        cause: verdict.cause,
                        stale_keys: verdict.stale_keys,
                    },
                ));
            }
            Payload::Decision { txn, decision, commit_ts } => {
                if self.state.apply_decision(txn, decision, commit_ts) {
                    out.observe(Observation::ValidatorApplied { txn, decision });
                }
                self.in_doubt.remove(&txn);
                self.ctp.remove(&txn);
                out.send(Message::new(self.id, msg.src, Payload::DecisionAck { txn }));
            }
            Payload::CtpQuery { txn } => {
                let status = self.state.ctp_status(txn);
                out.send(Message::new(self.id, msg.src, Payload::CtpStatus { txn, status }));
            }
            Payload::CtpStatus { txn, status } => {
                if let Some(round) = self.ctp.get_mut(&txn) {
                    round.statuses.insert(msg.src, status);
                    self.finish_ctp(txn, out);
                }
            }
            Payload::FreshnessBroadcast { ts_gc, .. } => {
                if ts_gc > self.state.ts_gc() {
                    self.state.gc(ts_gc).expect("horizon only advances");
                }
            }
            Payload::DecisionAck { .. } => {}
            _ => {}
        }
    }

    fn on_timer(&mut self, _now: TrueTime, kind: TimerKind, out: &mut Outbox) {
        let TimerKind::CtpTimeout(txn) = kind else { return };
        let Some(info) = self.in_doubt.get(&txn) else { return };
        if self.ctp.contains_key(&txn) {
            out.timer(self.coordinator_timeout, TimerKind::CtpTimeout(txn));
            return;
        }
        self.ctp_runs += 1;
        let mut statuses = BTreeMap::new();
        statuses.insert(self.id, self.state.status(txn));
        let others: Vec<NodeId> = info.validators.iter().copied().filter(|v| *v != self.id).collect();
        self.ctp.insert(txn, CtpRound { statuses });
        for v in others {
            out.send(Message::new(self.id, v, Payload::CtpQuery { txn }));
        }
        self.finish_ctp(txn, out);
    }
}
