use crate::cache::CacheEntry;
use crate::message::{AbortCause, Decision, Message, ParticipantStatus};
use crate::types::{KeyId, NodeId, Timestamp, TxnId, TxnKind};

/// Simulation true time in microseconds.
pub type TrueTime = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimerKind {
    NextArrival,
    DecisionRetry(TxnId),
    CtpTimeout(TxnId),
    QuorumTimeout(TxnId),
    Restart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemoveReason {
    Expired,
    Evicted,
    Callback,
    StaleAbort,
    Restart,
}

/// Committed or submitted transaction as seen by the instrumentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnSummary {
    pub id: TxnId,
    pub kind: TxnKind,
    pub t_commit: Timestamp,
    pub reads: Vec<(KeyId, Timestamp)>,
    pub writes: Vec<KeyId>,
}

/// Instrumentation emitted by protocol code; never fed back into it.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    CacheHit { key: KeyId, vts: Timestamp },
    CacheMiss { key: KeyId },
    CacheInsert { key: KeyId, entry: CacheEntry, lease_micros: Option<u64> },
    CacheRemove { key: KeyId, reason: RemoveReason },
    TxnSubmitted(TxnSummary),
    TxnFinished { txn: TxnId, kind: TxnKind, decision: Decision, cause: Option<AbortCause>, started: TrueTime },
    CoordinatorLogged { txn: TxnId, decision: Decision },
    ValidatorApplied { txn: TxnId, decision: Decision },
    Installed { txn: TxnId, key: KeyId, vts: Timestamp },
    CtpResolved { txn: TxnId, statuses: Vec<ParticipantStatus>, decision: Decision },
    /// A validator rejected a read that the cache served.
    StaleHitAbort { txn: TxnId },
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send(Message),
    Timer { after: TrueTime, kind: TimerKind },
    Observe(Observation),
    /// Crash the emitting node now (fault injection hook).
    CrashSelf,
}

/// Side effects collected while a node handles one event.
#[derive(Debug, Default)]
pub struct Outbox {
    pub(crate) actions: Vec<Action>,
}

impl Outbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, msg: Message) {
        self.actions.push(Action::Send(msg));
    }

    pub fn timer(&mut self, after: TrueTime, kind: TimerKind) {
        self.actions.push(Action::Timer { after, kind });
    }

    pub fn observe(&mut self, obs: Observation) {
        self.actions.push(Action::Observe(obs));
    }

    pub fn crash_self(&mut self) {
        self.actions.push(Action::CrashSelf);
    }

    pub fn drain(&mut self) -> std::vec::Drain<'_, Action> {
        self.actions.drain(..)
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn sent(&self) -> impl Iterator<Item = &Message> {
        self.actions.iter().filter_map(|a| match a {
            Action::Send(m) => Some(m),
            _ => None,
        })
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.actions.iter().filter_map(|a| match a {
            Action::Observe(o) => Some(o),
            _ => None,
        })
    }
}

/// A protocol state machine driven by the event loop.
pub trait Actor {
    fn id(&self) -> NodeId;
    fn on_message(&mut self, now: TrueTime, msg: Message, out: &mut Outbox);
    fn on_timer(&mut self, now: TrueTime, kind: TimerKind, out: &mut Outbox);
}
