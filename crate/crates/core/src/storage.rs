//! Sharded storage with primary/backup quorum replication.
//!
//! Primaries serve reads, stage replicated write sets until the transaction
//! decision arrives and install committed writes last-writer-wins by commit
//! timestamp. In explicit-invalidation mode a primary tracks which clients
//! cache each cacheable key and calls them back on every update.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use crate::cache::CacheStrategy;
use crate::clock::SkewedClock;
use crate::lease::InterArrival;
use crate::message::{Decision, Message, Payload};
use crate::sim::{Actor, Observation, Outbox, TimerKind, TrueTime};
use crate::types::{shard_of, KeyId, NodeId, Timestamp, TxnId};

#[derive(Debug, Clone)]
pub struct StorageConfig {
    pub shard: usize,
    pub n_shards: usize,
    /// Backup node ids; empty on backups themselves.
    pub backups: Vec<NodeId>,
    /// Backup acks required before acknowledging a replicate request.
    pub quorum: usize,
    pub is_primary: bool,
    pub strategy: CacheStrategy,
    pub cacheable: Option<Arc<HashSet<KeyId>>>,
    pub quorum_timeout: TrueTime,
}

#[derive(Debug, Clone)]
struct Pending {
    writes: Vec<(KeyId, Vec<u8>)>,
    coordinator: NodeId,
    acks: usize,
    answered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StorageCounters {
    pub gets: u64,
    pub installs: u64,
    pub stale_installs_dropped: u64,
    pub commit_without_writes: u64,
    pub invalidations_sent: u64,
    pub replicate_nacks: u64,
}

#[derive(Debug)]
pub struct StorageNode {
    id: NodeId,
    cfg: StorageConfig,
    clock: SkewedClock,
    store: HashMap<KeyId, (Vec<u8>, Timestamp)>,
    pending: HashMap<TxnId, Pending>,
    decided: HashMap<TxnId, Decision>,
    write_gaps: HashMap<KeyId, InterArrival>,
    sharers: HashMap<KeyId, BTreeSet<NodeId>>,
    start_local: Timestamp,
    pub counters: StorageCounters,
}

impl StorageNode {
    pub fn new(id: NodeId, cfg: StorageConfig, mut clock: SkewedClock, start: TrueTime) -> Self {
        let start_local = clock.now(start);
        Self {
            id,
            cfg,
            clock,
            store: HashMap::new(),
            pending: HashMap::new(),
            decided: HashMap::new(),
            write_gaps: HashMap::new(),
            sharers: HashMap::new(),
            start_local,
            counters: StorageCounters::default(),
        }
    }

    /// Latest installed version; keys never written hold the load version.
    pub fn version(&self, key: KeyId) -> Timestamp {
        self.store.get(&key).map_or(Timestamp::LOAD, |(_, v)| *v)
    }

    pub fn value(&self, key: KeyId) -> Vec<u8> {
        self.store.get(&key).map_or_else(Vec::new, |(v, _)| v.clone())
    }

    /// Mean inter-write time in seconds; `None` until the key is written.
    pub fn w_mean_global(&self, key: KeyId) -> Option<f64> {
        self.write_gaps.get(&key).and_then(InterArrival::mean_secs)
    }

    pub fn sharers(&self, key: KeyId) -> impl Iterator<Item = NodeId> + '_ {
        self.sharers.get(&key).into_iter().flatten().copied()
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    fn tracks_sharers(&self, key: KeyId) -> bool {
        self.cfg.strategy == CacheStrategy::ExplicitInvalidation
            && self.cfg.cacheable.as_ref().is_none_or(|s| s.contains(&key))
    }

    fn handle_get(&mut self, src: NodeId, txn: TxnId, key: KeyId, out: &mut Outbox) {
        if shard_of(key, self.cfg.n_shards) != self.cfg.shard {
            out.send(Message::new(self.id, src, Payload::WrongShard { key }));
            return;
        }
        self.counters.gets += 1;
        if self.tracks_sharers(key) {
            self.sharers.entry(key).or_default().insert(src);
        }
        let (value, vts) = self.store.get(&key).cloned().unwrap_or((Vec::new(), Timestamp::LOAD));
        let w_mean_global = self.w_mean_global(key);
        out.send(Message::new(self.id, src, Payload::GetReply { txn, key, value, vts, w_mean_global }));
    }

    fn handle_replicate(&mut self, src: NodeId, txn: TxnId, writes: Vec<(KeyId, Vec<u8>)>, out: &mut Outbox) {
        if !self.cfg.is_primary {
            self.pending.entry(txn).or_insert(Pending { writes, coordinator: src, acks: 0, answered: true });
            out.send(Message::new(self.id, src, Payload::ReplicateReply { txn, ok: true }));
            return;
        }
        if self.decided.contains_key(&txn) || self.pending.contains_key(&txn) {
            return;
        }
        let immediate = self.cfg.quorum == 0;
        for &b in &self.cfg.backups {
            out.send(Message::new(self.id, b, Payload::Replicate { txn, writes: writes.clone() }));
        }
        self.pending.insert(txn, Pending { writes, coordinator: src, acks: 0, answered: immediate });
        if immediate {
            out.send(Message::new(self.id, src, Payload::ReplicateReply { txn, ok: true }));
        } else {
            out.timer(self.cfg.quorum_timeout, TimerKind::QuorumTimeout(txn));
        }
    }

    fn handle_replicate_reply(&mut self, txn: TxnId, ok: bool, out: &mut Outbox) {
        let quorum = self.cfg.quorum;
        let Some(p) = self.pending.get_mut(&txn) else { return };
        if !ok || p.answered {
            return;
        }
        p.acks += 1;
        if p.acks >= quorum {
            p.answered = true;
            out.send(Message::new(self.id, p.coordinator, Payload::ReplicateReply { txn, ok: true }));
        }
    }

    fn handle_decision(&mut self, now: TrueTime, src: NodeId, txn: TxnId, decision: Decision, commit_ts: Timestamp, out: &mut Outbox) {
        let first = !self.decided.contains_key(&txn);
        if first {
            self.decided.insert(txn, decision);
            let pending = self.pending.remove(&txn);
            if decision == Decision::Commit {
                match pending {
                    Some(p) => self.install(now, txn, p.writes, commit_ts, out),
                    None => self.counters.commit_without_writes += 1,
                }
            }
            if self.cfg.is_primary {
                for &b in &self.cfg.backups {
                    out.send(Message::new(self.id, b, Payload::Decision { txn, decision, commit_ts }));
                }
            }
        }
        if self.cfg.is_primary {
            out.send(Message::new(self.id, src, Payload::DecisionAck { txn }));
        }
    }

    fn install(&mut self, now: TrueTime, txn: TxnId, writes: Vec<(KeyId, Vec<u8>)>, commit_ts: Timestamp, out: &mut Outbox) {
        let local = self.clock.now(now);
        for (key, value) in writes {
            let current = self.version(key);
            if commit_ts <= current {
                self.counters.stale_installs_dropped += 1;
                continue;
            }
            self.store.insert(key, (value, commit_ts));
            if !self.cfg.is_primary {
                continue;
            }
            self.counters.installs += 1;
            let start = self.start_local;
            let gaps = self.write_gaps.entry(key).or_insert_with(|| {
                let mut g = InterArrival::new();
                g.record(start);
                g
            });
            gaps.record(local);
            out.observe(Observation::Installed { txn, key, vts: commit_ts });
            if let Some(sharers) = self.sharers.get_mut(&key) {
                let targets: Vec<NodeId> = sharers.iter().copied().filter(|c| *c != txn.node).collect();
                sharers.retain(|c| *c == txn.node);
                for c in targets {
                    self.counters.invalidations_sent += 1;
                    out.send(Message::new(self.id, c, Payload::Invalidate { key, vts: commit_ts }));
                }
            }
        }
    }
}

impl Actor for StorageNode {
    fn id(&self) -> NodeId {
        self.id
    }

    fn on_message(&mut self, now: TrueTime, msg: Message, out: &mut Outbox) {
        match msg.payload {
            Payload::Get { txn, key } => self.handle_get(msg.src, txn, key, out),
            Payload::Replicate { txn, writes } => self.handle_replicate(msg.src, txn, writes, out),
            Payload::ReplicateReply { txn, ok } => self.handle_replicate_reply(txn, ok, out),
            Payload::Decision { txn, decision, commit_ts } => {
                self.handle_decision(now, msg.src, txn, decision, commit_ts, out)
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, _now: TrueTime, kind: TimerKind, out: &mut Outbox) {
        let TimerKind::QuorumTimeout(txn) = kind else { return };
        if let Some(p) = self.pending.get_mut(&txn) {
            if !p.answered {
                p.answered = true;
                self.counters.replicate_nacks += 1;
                out.send(Message::new(self.id, p.coordinator, Payload::ReplicateReply { txn, ok: false }));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Action;

    const CLIENT: NodeId = 1;

    fn primary(quorum: usize, strategy: CacheStrategy) -> StorageNode {
        let cfg = StorageConfig {
            shard: 0,
            n_shards: 1,
            backups: vec![50, 51],
            quorum,
            is_primary: true,
            strategy,
            cacheable: None,
            quorum_timeout: 5_000,
        };
        StorageNode::new(40, cfg, SkewedClock::new(40, 0), 10_000_000)
    }

    fn deliver(node: &mut StorageNode, now: TrueTime, src: NodeId, payload: Payload) -> Outbox {
        let mut out = Outbox::new();
        node.on_message(now, Message::new(src, 40, payload), &mut out);
        out
    }

    fn replies_to(out: &Outbox, dst: NodeId) -> Vec<Payload> {
        out.sent().filter(|m| m.dst == dst).map(|m| m.payload.clone()).collect()
    }

    fn commit_write(node: &mut StorageNode, now: TrueTime, txn: TxnId, key: u64, ts: Timestamp) -> Outbox {
        deliver(node, now, txn.node, Payload::Replicate { txn, writes: vec![(KeyId(key), vec![7])] });
        deliver(node, now, 50, Payload::ReplicateReply { txn, ok: true });
        deliver(node, now, txn.node, Payload::Decision { txn, decision: Decision::Commit, commit_ts: ts })
    }

    #[test]
    fn get_returns_version_and_write_mean() {
        let mut s = primary(0, CacheStrategy::Lease);
        let out = deliver(&mut s, 10_000_000, CLIENT, Payload::Get { txn: TxnId::new(1, 1), key: KeyId(3) });
        assert_eq!(
            replies_to(&out, CLIENT),
            vec![Payload::GetReply {
                txn: TxnId::new(1, 1),
                key: KeyId(3),
                value: vec![],
                vts: Timestamp::LOAD,
                w_mean_global: None
            }]
        );
        commit_write(&mut s, 10_019_000, TxnId::new(2, 1), 3, Timestamp::new(7, 2, 0));
        let out = deliver(&mut s, 10_020_000, CLIENT, Payload::Get { txn: TxnId::new(1, 2), key: KeyId(3) });
        match &replies_to(&out, CLIENT)[0] {
            Payload::GetReply { vts, w_mean_global, value, .. } => {
                assert_eq!(*vts, Timestamp::new(7, 2, 0));
                assert_eq!(value, &vec![7]);
                assert!((w_mean_global.unwrap() - 19e-3).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quorum_of_one_backup() {
        let mut s = primary(1, CacheStrategy::Lease);
        let txn = TxnId::new(1, 1);
        let out = deliver(&mut s, 0, CLIENT, Payload::Replicate { txn, writes: vec![(KeyId(1), vec![1])] });
        assert_eq!(out.sent().filter(|m| matches!(m.payload, Payload::Replicate { .. })).count(), 2);
        assert!(replies_to(&out, CLIENT).is_empty());
        let out = deliver(&mut s, 0, 50, Payload::ReplicateReply { txn, ok: true });
        assert_eq!(replies_to(&out, CLIENT), vec![Payload::ReplicateReply { txn, ok: true }]);
        // the second backup's ack changes nothing
        let out = deliver(&mut s, 0, 51, Payload::ReplicateReply { txn, ok: true });
        assert!(replies_to(&out, CLIENT).is_empty());
    }

    #[test]
    fn degenerate_quorum_acks_immediately() {
        let mut s = primary(0, CacheStrategy::Lease);
        let txn = TxnId::new(1, 1);
        let out = deliver(&mut s, 0, CLIENT, Payload::Replicate { txn, writes: vec![] });
        assert_eq!(replies_to(&out, CLIENT), vec![Payload::ReplicateReply { txn, ok: true }]);
    }

    #[test]
    fn quorum_timeout_nacks() {
        let mut s = primary(1, CacheStrategy::Lease);
        let txn = TxnId::new(1, 1);
        let out = deliver(&mut s, 0, CLIENT, Payload::Replicate { txn, writes: vec![] });
        assert!(out.actions().iter().any(|a| matches!(a, Action::Timer { kind: TimerKind::QuorumTimeout(_), .. })));
        let mut out = Outbox::new();
        s.on_timer(5_000, TimerKind::QuorumTimeout(txn), &mut out);
        assert_eq!(replies_to(&out, CLIENT), vec![Payload::ReplicateReply { txn, ok: false }]);
    }

    #[test]
    fn decisions_install_once() {
        let mut s = primary(0, CacheStrategy::ExplicitInvalidation);
        deliver(&mut s, 0, 2, Payload::Get { txn: TxnId::new(2, 0), key: KeyId(1) });
        deliver(&mut s, 0, 3, Payload::Get { txn: TxnId::new(3, 0), key: KeyId(1) });
        assert_eq!(s.sharers(KeyId(1)).collect::<Vec<_>>(), vec![2, 3]);
        let txn = TxnId::new(2, 1);
        let ts = Timestamp::new(100, 2, 1);
        let out = commit_write(&mut s, 10, txn, 1, ts);
        let callbacks: Vec<_> = out.sent().filter(|m| matches!(m.payload, Payload::Invalidate { .. })).collect();
        assert_eq!(callbacks.len(), 1);
        assert_eq!(callbacks[0].dst, 3);
        assert_eq!(s.version(KeyId(1)), ts);
        let again = deliver(&mut s, 11, 2, Payload::Decision { txn, decision: Decision::Commit, commit_ts: ts });
        assert!(again.sent().all(|m| !matches!(m.payload, Payload::Invalidate { .. })));
        assert_eq!(replies_to(&again, 2), vec![Payload::DecisionAck { txn }]);
        assert_eq!(s.counters.installs, 1);
    }

    #[test]
    fn abort_discards_and_old_commit_is_dropped() {
        let mut s = primary(0, CacheStrategy::Lease);
        let t1 = TxnId::new(1, 1);
        deliver(&mut s, 0, CLIENT, Payload::Replicate { txn: t1, writes: vec![(KeyId(1), vec![1])] });
        deliver(&mut s, 0, CLIENT, Payload::Decision { txn: t1, decision: Decision::Abort, commit_ts: Timestamp::new(5, 1, 0) });
        assert_eq!(s.version(KeyId(1)), Timestamp::LOAD);
        assert_eq!(s.pending_count(), 0);
        commit_write(&mut s, 0, TxnId::new(1, 2), 1, Timestamp::new(50, 1, 0));
        commit_write(&mut s, 0, TxnId::new(1, 3), 1, Timestamp::new(40, 1, 0));
        assert_eq!(s.version(KeyId(1)), Timestamp::new(50, 1, 0));
        assert_eq!(s.counters.stale_installs_dropped, 1);
    }

    #[test]
    fn wrong_shard_is_reported() {
        let cfg = StorageConfig {
            shard: 0,
            n_shards: 5,
            backups: vec![],
            quorum: 0,
            is_primary: true,
            strategy: CacheStrategy::Lease,
            cacheable: None,
            quorum_timeout: 1,
        };
        let mut s = StorageNode::new(40, cfg, SkewedClock::new(40, 0), 0);
        let key = (0..100).map(KeyId).find(|k| shard_of(*k, 5) != 0).unwrap();
        let out = deliver(&mut s, 0, CLIENT, Payload::Get { txn: TxnId::new(1, 1), key });
        assert_eq!(replies_to(&out, CLIENT), vec![Payload::WrongShard { key }]);
    }
}
