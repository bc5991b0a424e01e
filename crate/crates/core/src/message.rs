//! Protocol messages and their wire encoding.
//!
//! Every frame is
//!
//! ```text
//! version:u8 | kind:u8 | src:u32 | dst:u32 | payload_len:u32 | payload
//! ```
//!
//! with all integers little-endian. Payload fields are written in
//! declaration order using these primitives:
//!
//! | type        | encoding                                   |
//! |-------------|--------------------------------------------|
//! | `Timestamp` | micros:u64, node:u32, seq:u64              |
//! | `TxnId`     | node:u32, seq:u64                          |
//! | `KeyId`     | u64                                        |
//! | bytes       | len:u32, then `len` raw bytes              |
//! | list        | count:u32, then each element               |
//! | option      | tag:u8 (0 = none, 1 = some), then value    |
//! | `f64`       | IEEE-754 bits as u64                       |
//! | enums       | u8 discriminant (see `*_code` functions)   |
//!
//! The kind byte values are listed on [`MessageKind`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{KeyId, NodeId, Timestamp, TxnId, TxnKind};

pub const WIRE_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Commit,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortCause {
    StaleRead,
    WriteConflict,
    PreparedConflict,
    GcHorizon,
    CoordinatorFailure,
    ReplicationFailure,
}

impl AbortCause {
    pub const ALL: [AbortCause; 6] = [
        AbortCause::StaleRead,
        AbortCause::WriteConflict,
        AbortCause::PreparedConflict,
        AbortCause::GcHorizon,
        AbortCause::CoordinatorFailure,
        AbortCause::ReplicationFailure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AbortCause::StaleRead => "stale_read",
            AbortCause::WriteConflict => "write_conflict",
            AbortCause::PreparedConflict => "prepared_conflict",
            AbortCause::GcHorizon => "gc_horizon",
            AbortCause::CoordinatorFailure => "coordinator_failure",
            AbortCause::ReplicationFailure => "replication_failure",
        }
    }
}

/// What one validator knows about an in-doubt transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParticipantStatus {
    ReceivedCommit,
    ReceivedAbort,
    Prepared,
    NoPrepareSeen,
    RespondedAbort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateRequest {
    pub txn: TxnId,
    pub kind: TxnKind,
    pub commit_ts: Timestamp,
    pub freshness_ts: Timestamp,
    /// `(key, version read)` for keys owned by the receiving validator.
    pub reads: Vec<(KeyId, Timestamp)>,
    /// Written keys owned by the receiving validator.
    pub writes: Vec<KeyId>,
    pub participant_validators: Vec<NodeId>,
    /// Storage primaries holding the write set, informed by a backup coordinator.
    pub participant_storage: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Get { txn: TxnId, key: KeyId },
    GetReply { txn: TxnId, key: KeyId, value: Vec<u8>, vts: Timestamp, w_mean_global: Option<f64> },
    Validate(ValidateRequest),
    ValidateReply { txn: TxnId, decision: Decision, cause: Option<AbortCause>, stale_keys: Vec<KeyId> },
    Replicate { txn: TxnId, writes: Vec<(KeyId, Vec<u8>)> },
    ReplicateReply { txn: TxnId, ok: bool },
    Decision { txn: TxnId, decision: Decision, commit_ts: Timestamp },
    DecisionAck { txn: TxnId },
    Invalidate { key: KeyId, vts: Timestamp },
    FreshnessBroadcast { global_watermark: Timestamp, ts_gc: Timestamp },
    CtpQuery { txn: TxnId },
    CtpStatus { txn: TxnId, status: ParticipantStatus },
    WrongShard { key: KeyId },
}

/// Kind byte of each payload on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageKind {
    Get = 1,
    GetReply = 2,
    Validate = 3,
    ValidateReply = 4,
    Replicate = 5,
    ReplicateReply = 6,
    Decision = 7,
    DecisionAck = 8,
    Invalidate = 9,
    FreshnessBroadcast = 10,
    CtpQuery = 11,
    CtpStatus = 12,
    WrongShard = 13,
}

impl MessageKind {
    pub const ALL: [MessageKind; 13] = [
        MessageKind::Get,
        MessageKind::GetReply,
        MessageKind::Validate,
        MessageKind::ValidateReply,
        MessageKind::Replicate,
        MessageKind::ReplicateReply,
        MessageKind::Decision,
        MessageKind::DecisionAck,
        MessageKind::Invalidate,
        MessageKind::FreshnessBroadcast,
        MessageKind::CtpQuery,
        MessageKind::CtpStatus,
        MessageKind::WrongShard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Get => "get",
            MessageKind::GetReply => "get_reply",
            MessageKind::Validate => "validate",
            MessageKind::ValidateReply => "validate_reply",
            MessageKind::Replicate => "replicate",
            MessageKind::ReplicateReply => "replicate_reply",
            MessageKind::Decision => "decision",
            MessageKind::DecisionAck => "decision_ack",
            MessageKind::Invalidate => "invalidate",
            MessageKind::FreshnessBroadcast => "freshness_broadcast",
            MessageKind::CtpQuery => "ctp_query",
            MessageKind::CtpStatus => "ctp_status",
            MessageKind::WrongShard => "wrong_shard",
        }
    }

    fn from_u8(b: u8) -> Result<Self> {
        MessageKind::ALL
            .iter()
            .copied()
            .find(|k| *k as u8 == b)
            .ok_or_else(|| Error::Decode(format!("unknown message kind {b}")))
    }
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Get { .. } => MessageKind::Get,
            Payload::GetReply { .. } => MessageKind::GetReply,
            Payload::Validate(_) => MessageKind::Validate,
            Payload::ValidateReply { .. } => MessageKind::ValidateReply,
            Payload::Replicate { .. } => MessageKind::Replicate,
            Payload::ReplicateReply { .. } => MessageKind::ReplicateReply,
            Payload::Decision { .. } => MessageKind::Decision,
            Payload::DecisionAck { .. } => MessageKind::DecisionAck,
            Payload::Invalidate { .. } => MessageKind::Invalidate,
            Payload::FreshnessBroadcast { .. } => MessageKind::FreshnessBroadcast,
            Payload::CtpQuery { .. } => MessageKind::CtpQuery,
            Payload::CtpStatus { .. } => MessageKind::CtpStatus,
            Payload::WrongShard { .. } => MessageKind::WrongShard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: Payload,
}

impl Message {
    pub fn new(src: NodeId, dst: NodeId, payload: Payload) -> Self {
        Self { src, dst, payload }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = Writer::default();
        body.payload(&self.payload);
        let mut out = Vec::with_capacity(14 + body.buf.len());
        out.push(WIRE_VERSION);
        out.push(self.kind() as u8);
        out.extend_from_slice(&self.src.to_le_bytes());
        out.extend_from_slice(&self.dst.to_le_bytes());
        out.extend_from_slice(&(body.buf.len() as u32).to_le_bytes());
        out.extend_from_slice(&body.buf);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Message> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let version = r.u8()?;
        if version != WIRE_VERSION {
            return Err(Error::Decode(format!("unsupported wire version {version}")));
        }
        let kind = MessageKind::from_u8(r.u8()?)?;
        let src = r.u32()?;
        let dst = r.u32()?;
        let len = r.u32()? as usize;
        if r.remaining() != len {
            return Err(Error::Decode(format!("payload length {len} but {} bytes follow", r.remaining())));
        }
        let payload = r.payload(kind)?;
        if r.remaining() != 0 {
            return Err(Error::Decode("trailing bytes after payload".into()));
        }
        Ok(Message { src, dst, payload })
    }
}

fn decision_code(d: Decision) -> u8 {
    match d {
        Decision::Commit => 0,
        Decision::Abort => 1,
    }
}

fn cause_code(c: AbortCause) -> u8 {
    AbortCause::ALL.iter().position(|x| *x == c).unwrap() as u8
}

fn status_code(s: ParticipantStatus) -> u8 {
    match s {
        ParticipantStatus::ReceivedCommit => 0,
        ParticipantStatus::ReceivedAbort => 1,
        ParticipantStatus::Prepared => 2,
        ParticipantStatus::NoPrepareSeen => 3,
        ParticipantStatus::RespondedAbort => 4,
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn ts(&mut self, t: Timestamp) {
        self.u64(t.micros);
        self.u32(t.node);
        self.u64(t.seq);
    }
    fn txn(&mut self, t: TxnId) {
        self.u32(t.node);
        self.u64(t.seq);
    }
    fn key(&mut self, k: KeyId) {
        self.u64(k.0);
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }
    fn len(&mut self, n: usize) {
        self.u32(n as u32);
    }

    fn payload(&mut self, p: &Payload) {
        match p {
            Payload::Get { txn, key } => {
                self.txn(*txn);
                self.key(*key);
            }
            Payload::GetReply { txn, key, value, vts, w_mean_global } => {
                self.txn(*txn);
                self.key(*key);
                self.bytes(value);
                self.ts(*vts);
                match w_mean_global {
                    None => self.u8(0),
                    Some(w) => {
                        self.u8(1);
                        self.u64(w.to_bits());
                    }
                }
            }
            Payload::Validate(req) => {
                self.txn(req.txn);
                self.u8(match req.kind {
                    TxnKind::ReadOnly => 0,
                    TxnKind::ReadWrite => 1,
                });
                self.ts(req.commit_ts);
                self.ts(req.freshness_ts);
                self.len(req.reads.len());
                for (k, v) in &req.reads {
                    self.key(*k);
                    self.ts(*v);
                }
                self.len(req.writes.len());
                for k in &req.writes {
                    self.key(*k);
                }
                self.len(req.participant_validators.len());
                for n in &req.participant_validators {
                    self.u32(*n);
                }
                self.len(req.participant_storage.len());
                for n in &req.participant_storage {
                    self.u32(*n);
                }
            }
            Payload::ValidateReply { txn, decision, cause, stale_keys } => {
                self.txn(*txn);
                self.u8(decision_code(*decision));
                match cause {
                    None => self.u8(0),
                    Some(c) => {
                        self.u8(1);
                        self.u8(cause_code(*c));
                    }
                }
                self.len(stale_keys.len());
                for k in stale_keys {
                    self.key(*k);
                }
            }
            Payload::Replicate { txn, writes } => {
                self.txn(*txn);
                self.len(writes.len());
                for (k, v) in writes {
                    self.key(*k);
                    self.bytes(v);
                }
            }
            Payload::ReplicateReply { txn, ok } => {
                self.txn(*txn);
                self.u8(u8::from(*ok));
            }
            Payload::Decision { txn, decision, commit_ts } => {
                self.txn(*txn);
                self.u8(decision_code(*decision));
                self.ts(*commit_ts);
            }
            Payload::DecisionAck { txn } => self.txn(*txn),
            Payload::Invalidate { key, vts } => {
                self.key(*key);
                self.ts(*vts);
            }
            Payload::FreshnessBroadcast { global_watermark, ts_gc } => {
                self.ts(*global_watermark);
                self.ts(*ts_gc);
            }
            Payload::CtpQuery { txn } => self.txn(*txn),
            Payload::CtpStatus { txn, status } => {
                self.txn(*txn);
                self.u8(status_code(*status));
            }
            Payload::WrongShard { key } => self.key(*key),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Decode(format!("truncated: need {n} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn ts(&mut self) -> Result<Timestamp> {
        Ok(Timestamp::new(self.u64()?, self.u32()?, self.u64()?))
    }
    fn txn(&mut self) -> Result<TxnId> {
        Ok(TxnId::new(self.u32()?, self.u64()?))
    }
    fn key(&mut self) -> Result<KeyId> {
        Ok(KeyId(self.u64()?))
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn list<T>(&mut self, mut item: impl FnMut(&mut Self) -> Result<T>) -> Result<Vec<T>> {
        let n = self.u32()? as usize;
        if n > self.remaining() {
            return Err(Error::Decode(format!("list count {n} exceeds remaining bytes")));
        }
        (0..n).map(|_| item(self)).collect()
    }
    fn decision(&mut self) -> Result<Decision> {
        match self.u8()? {
            0 => Ok(Decision::Commit),
            1 => Ok(Decision::Abort),
            b => Err(Error::Decode(format!("bad decision {b}"))),
        }
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Decode(format!("bad flag {b}"))),
        }
    }

    fn payload(&mut self, kind: MessageKind) -> Result<Payload> {
        Ok(match kind {
            MessageKind::Get => Payload::Get { txn: self.txn()?, key: self.key()? },
            MessageKind::GetReply => Payload::GetReply {
                txn: self.txn()?,
                key: self.key()?,
                value: self.bytes()?,
                vts: self.ts()?,
                w_mean_global: if self.flag()? { Some(f64::from_bits(self.u64()?)) } else { None },
            },
            MessageKind::Validate => {
                let txn = self.txn()?;
                let kind = match self.u8()? {
                    0 => TxnKind::ReadOnly,
                    1 => TxnKind::ReadWrite,
                    b => return Err(Error::Decode(format!("bad txn kind {b}"))),
                };
                Payload::Validate(ValidateRequest {
                    txn,
                    kind,
                    commit_ts: self.ts()?,
                    freshness_ts: self.ts()?,
                    reads: self.list(|r| Ok((r.key()?, r.ts()?)))?,
                    writes: self.list(|r| r.key())?,
                    participant_validators: self.list(|r| r.u32())?,
                    participant_storage: self.list(|r| r.u32())?,
                })
            }
            MessageKind::ValidateReply => Payload::ValidateReply {
                txn: self.txn()?,
                decision: self.decision()?,
                cause: if self.flag()? {
                    let b = self.u8()? as usize;
                    Some(*AbortCause::ALL.get(b).ok_or_else(|| Error::Decode(format!("bad cause {b}")))?)
                } else {
                    None
                },
                stale_keys: self.list(|r| r.key())?,
            },
            MessageKind::Replicate => Payload::Replicate {
                txn: self.txn()?,
                writes: self.list(|r| Ok((r.key()?, r.bytes()?)))?,
            },
            MessageKind::ReplicateReply => Payload::ReplicateReply { txn: self.txn()?, ok: self.flag()? },
            MessageKind::Decision => Payload::Decision {
                txn: self.txn()?,
                decision: self.decision()?,
                commit_ts: self.ts()?,
            },
            MessageKind::DecisionAck => Payload::DecisionAck { txn: self.txn()? },
            MessageKind::Invalidate => Payload::Invalidate { key: self.key()?, vts: self.ts()? },
            MessageKind::FreshnessBroadcast => {
                Payload::FreshnessBroadcast { global_watermark: self.ts()?, ts_gc: self.ts()? }
            }
            MessageKind::CtpQuery => Payload::CtpQuery { txn: self.txn()? },
            MessageKind::CtpStatus => Payload::CtpStatus {
                txn: self.txn()?,
                status: match self.u8()? {
                    0 => ParticipantStatus::ReceivedCommit,
                    1 => ParticipantStatus::ReceivedAbort,
                    2 => ParticipantStatus::Prepared,
                    3 => ParticipantStatus::NoPrepareSeen,
                    4 => ParticipantStatus::RespondedAbort,
                    b => return Err(Error::Decode(format!("bad status {b}"))),
                },
            },
            MessageKind::WrongShard => Payload::WrongShard { key: self.key()? },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::*;

    #[test]
    fn frame_layout_is_fixed() {
        let m = Message::new(3, 7, Payload::Get { txn: TxnId::new(3, 9), key: KeyId(0x0102) });
        let bytes = m.encode();
        assert_eq!(
            bytes,
            vec![
                1, 1, 3, 0, 0, 0, 7, 0, 0, 0, 20, 0, 0, 0, // header
                3, 0, 0, 0, 9, 0, 0, 0, 0, 0, 0, 0, // txn
                2, 1, 0, 0, 0, 0, 0, 0, // key
            ]
        );
        assert_eq!(Message::decode(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_bad_frames() {
        let m = Message::new(1, 2, Payload::DecisionAck { txn: TxnId::new(1, 1) });
        let mut bytes = m.encode();
        bytes[0] = 2;
        assert!(Message::decode(&bytes).is_err());
        let bytes = m.encode();
        assert!(Message::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bytes = m.encode();
        bytes[1] = 99;
        assert!(Message::decode(&bytes).is_err());
    }

    fn arb_ts() -> impl Strategy<Value = Timestamp> {
        (any::<u64>(), any::<u32>(), any::<u64>()).prop_map(|(m, n, s)| Timestamp::new(m, n, s))
    }
    fn arb_txn() -> impl Strategy<Value = TxnId> {
        (any::<u32>(), any::<u64>()).prop_map(|(n, s)| TxnId::new(n, s))
    }
    fn arb_key() -> impl Strategy<Value = KeyId> {
        any::<u64>().prop_map(KeyId)
    }
    fn arb_decision() -> impl Strategy<Value = Decision> {
        prop_oneof![Just(Decision::Commit), Just(Decision::Abort)]
    }
    fn arb_status() -> impl Strategy<Value = ParticipantStatus> {
        prop_oneof![
            Just(ParticipantStatus::ReceivedCommit),
            Just(ParticipantStatus::ReceivedAbort),
            Just(ParticipantStatus::Prepared),
            Just(ParticipantStatus::NoPrepareSeen),
            Just(ParticipantStatus::RespondedAbort),
        ]
    }

    fn arb_payload() -> impl Strategy<Value = Payload> {
        prop_oneof![
            (arb_txn(), arb_key()).prop_map(|(txn, key)| Payload::Get { txn, key }),
            (arb_txn(), arb_key(), vec(any::<u8>(), 0..64), arb_ts(), proptest::option::of(0.0f64..1e6))
                .prop_map(|(txn, key, value, vts, w_mean_global)| Payload::GetReply {
                    txn,
                    key,
                    value,
                    vts,
                    w_mean_global
                }),
            (
                arb_txn(),
                any::<bool>(),
                arb_ts(),
                arb_ts(),
                vec((arb_key(), arb_ts()), 0..6),
                vec(arb_key(), 0..6),
                vec(any::<u32>(), 0..4),
                vec(any::<u32>(), 0..4)
            )
                .prop_map(|(txn, rw, commit_ts, freshness_ts, reads, writes, pv, ps)| {
                    Payload::Validate(ValidateRequest {
                        txn,
                        kind: if rw { TxnKind::ReadWrite } else { TxnKind::ReadOnly },
                        commit_ts,
                        freshness_ts,
                        reads,
                        writes,
                        participant_validators: pv,
                        participant_storage: ps,
                    })
                }),
            (arb_txn(), arb_decision(), proptest::option::of(0usize..6), vec(arb_key(), 0..4)).prop_map(
                |(txn, decision, cause, stale_keys)| Payload::ValidateReply {
                    txn,
                    decision,
                    cause: cause.map(|i| AbortCause::ALL[i]),
                    stale_keys
                }
            ),
            (arb_txn(), vec((arb_key(), vec(any::<u8>(), 0..32)), 0..4))
                .prop_map(|(txn, writes)| Payload::Replicate { txn, writes }),
            (arb_txn(), any::<bool>()).prop_map(|(txn, ok)| Payload::ReplicateReply { txn, ok }),
            (arb_txn(), arb_decision(), arb_ts())
                .prop_map(|(txn, decision, commit_ts)| Payload::Decision { txn, decision, commit_ts }),
            arb_txn().prop_map(|txn| Payload::DecisionAck { txn }),
            (arb_key(), arb_ts()).prop_map(|(key, vts)| Payload::Invalidate { key, vts }),
            (arb_ts(), arb_ts())
                .prop_map(|(global_watermark, ts_gc)| Payload::FreshnessBroadcast { global_watermark, ts_gc }),
            arb_txn().prop_map(|txn| Payload::CtpQuery { txn }),
            (arb_txn(), arb_status()).prop_map(|(txn, status)| Payload::CtpStatus { txn, status }),
            arb_key().prop_map(|key| Payload::WrongShard { key }),
        ]
    }

    proptest! {
        #[test]
        fn encode_decode_identity(src in any::<u32>(), dst in any::<u32>(), payload in arb_payload()) {
            let m = Message::new(src, dst, payload);
            let bytes = m.encode();
            prop_assert_eq!(bytes[0], WIRE_VERSION);
            prop_assert_eq!(Message::decode(&bytes).unwrap(), m);
        }
    }
}
