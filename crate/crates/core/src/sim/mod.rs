//! Deterministic discrete-event simulation of clients, validators and
//! storage replicas exchanging messages over a latency model.

mod actor;
mod metrics;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

pub use actor::{Action, Actor, Observation, Outbox, RemoveReason, TimerKind, TrueTime, TxnSummary};
pub use metrics::{AuditSummary, MetricsCore};

use crate::cache::CacheConfig;
use crate::checker::CommittedTxn;
use crate::client::{ClientConfig, ClientNode, CrashPlan, CrashPoint, Routing};
use crate::clock::{draw_skews, SkewedClock};
use crate::config::{LatencyKind, NetConfig, SimConfig};
use crate::error::Result;
use crate::message::{Message, MessageKind, Payload};
use crate::storage::{StorageConfig, StorageNode};
use crate::types::{NodeId, Timestamp};
use crate::validator::{ValidationMode, ValidatorNode, ValidatorState};
use crate::watermark::{ClientReport, WatermarkState};
use crate::workload::{KeySpace, WorkloadGen};
use metrics::Metrics;

/// True time at which every run starts, leaving room for negative skew.
pub const EPOCH: TrueTime = 10_000_000;

/// Node id of the watermark registry.
pub const REGISTRY: NodeId = 0;

/// Derives an independent stream seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Node id layout: registry 0, then clients, validators and storage replicas
/// (primary first within each shard).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub clients: Vec<NodeId>,
    pub validators: Vec<NodeId>,
    pub storage: Vec<Vec<NodeId>>,
}

impl Topology {
    pub fn new(clients: usize, validators: usize, shards: usize, replication_f: usize) -> Self {
        let mut next = 1 as NodeId;
        let mut take = |n: usize| {
            let ids: Vec<NodeId> = (next..next + n as NodeId).collect();
            next += n as NodeId;
            ids
        };
        let clients = take(clients);
        let validators = take(validators);
        let storage = (0..shards).map(|_| take(2 * replication_f + 1)).collect();
        Self { clients, validators, storage }
    }

    pub fn node_count(&self) -> usize {
        1 + self.clients.len() + self.validators.len() + self.storage.iter().map(Vec::len).sum::<usize>()
    }

    pub fn routing(&self) -> Routing {
        Routing { validators: self.validators.clone(), storage_primaries: self.storage.iter().map(|r| r[0]).collect() }
    }
}

#[derive(Debug)]
enum Node {
    Registry,
    Client(Box<ClientNode>),
    Validator(Box<ValidatorNode>),
    Storage(Box<StorageNode>),
}

impl Node {
    fn actor(&mut self) -> Option<&mut dyn Actor> {
        match self {
            Node::Registry => None,
            Node::Client(c) => Some(c.as_mut()),
            Node::Validator(v) => Some(v.as_mut()),
            Node::Storage(s) => Some(s.as_mut()),
        }
    }

    fn is_server(&self) -> bool {
        matches!(self, Node::Validator(_) | Node::Storage(_))
    }
}

#[derive(Debug)]
enum Event {
    Deliver(Message),
    Handle(Message),
    Timer { node: NodeId, epoch: u32, kind: TimerKind },
    Broadcast { generation: u64 },
    Crash { node: NodeId, down_for: Option<TrueTime> },
    Restart { node: NodeId },
}

impl Event {
    fn code(&self) -> u8 {
        match self {
            Event::Deliver(_) => 0,
            Event::Handle(_) => 1,
            Event::Timer { .. } => 2,
            Event::Broadcast { .. } => 3,
            Event::Crash { .. } => 4,
            Event::Restart { .. } => 5,
        }
    }
}

#[derive(Debug)]
struct Scheduled {
    time: TrueTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, seq)
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Pending events ordered by `(time, insertion sequence)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: TrueTime, event: Event) {
        self.heap.push(Scheduled { time, seq: self.seq, event });
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<Scheduled> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug)]
struct Latency {
    kind: LatencyKind,
    base: u64,
    max: u64,
    exp: Option<Exp<f64>>,
    min: u64,
}

impl Latency {
    fn new(cfg: &NetConfig) -> Self {
        let exp = (cfg.latency == LatencyKind::Exponential && cfg.latency_us > 0)
            .then(|| Exp::new(1.0 / cfg.latency_us as f64).expect("positive mean"));
        Self { kind: cfg.latency, base: cfg.latency_us, max: cfg.latency_max_us, exp, min: cfg.latency_min_us }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match self.kind {
            LatencyKind::Constant => self.base,
            LatencyKind::Uniform => rng.random_range(self.base..=self.max),
            LatencyKind::Exponential => match &self.exp {
                Some(e) => self.min + e.sample(rng).round() as u64,
                None => self.min,
            },
        }
    }
}

/// One traced event, kept when `sim.trace` is on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub time: TrueTime,
    pub seq: u64,
    pub event: &'static str,
    pub node: NodeId,
    pub detail: String,
}

const TRACE_LIMIT: usize = 200_000;

/// Summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub core: MetricsCore,
    pub audit: AuditSummary,
    /// Simulated time from the end of the warm-up until issuing stopped.
    pub measured_us: TrueTime,
    /// Commits after the warm-up, counted when issuing stopped.
    pub committed_measured: u64,
    pub arrivals: u64,
    pub ctp_runs: u64,
    pub storage_installs: u64,
    pub commit_without_writes: u64,
    pub replicate_nacks: u64,
    pub final_ts_gc: Timestamp,
    pub final_global_watermark: Timestamp,
    /// Coordinator crashes by the commit boundary they interrupted.
    pub boundary_crashes: BTreeMap<CrashPoint, u64>,
    pub events: u64,
    /// Hash over the processed event sequence.
    pub event_hash: u64,
}

impl SimReport {
    pub fn committed(&self) -> u64 {
        self.core.committed_ro + self.core.committed_rw
    }

    pub fn aborted(&self) -> u64 {
        self.core.aborted_ro + self.core.aborted_rw
    }

    /// Commits per simulated second over the measured interval.
    pub fn throughput(&self) -> f64 {
        if self.measured_us == 0 {
            0.0
        } else {
            self.committed_measured as f64 / (self.measured_us as f64 * 1e-6)
        }
    }

    pub fn hit_rate(&self) -> f64 {
        let total = self.core.hits + self.core.misses;
        if total == 0 {
            0.0
        } else {
            self.core.hits as f64 / total as f64
        }
    }

    pub fn stale_aborts(&self) -> u64 {
        self.core.aborts_by_cause.get("stale_read").copied().unwrap_or(0)
    }

    pub fn abort_rate(&self) -> f64 {
        let finished = self.committed() + self.aborted();
        if finished == 0 {
            0.0
        } else {
            self.aborted() as f64 / finished as f64
        }
    }

    pub fn message_count(&self, kind: MessageKind) -> u64 {
        self.core.messages[kind as usize]
    }
}

#[derive(Debug)]
pub struct SimOutput {
    pub report: SimReport,
    pub history: Vec<CommittedTxn>,
    pub trace: Option<Vec<TraceEvent>>,
}

pub struct Simulation {
    cfg: SimConfig,
    topo: Topology,
    nodes: Vec<Node>,
    alive: Vec<bool>,
    epoch: Vec<u32>,
    busy_until: Vec<TrueTime>,
    queue: EventQueue,
    rng: ChaCha8Rng,
    latency: Latency,
    metrics: Metrics,
    registry: WatermarkState,
    last_reports: HashMap<NodeId, ClientReport>,
    broadcast_generation: u64,
    issuing: bool,
    stop_time: Option<TrueTime>,
    committed_at_stop: u64,
    now: TrueTime,
    events: u64,
    hasher: std::collections::hash_map::DefaultHasher,
    trace: Option<Vec<TraceEvent>>,
    restart_after: TrueTime,
}

impl Simulation {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.clone();
        let seed = cfg.sim.seed;
        let f = cfg.storage.replication_f;
        let topo = Topology::new(cfg.sim.clients, cfg.validator.shards, cfg.storage.shards, f);
        let n = topo.node_count();

        let mut skew_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        let mut skews = draw_skews(&mut skew_rng, n, cfg.clock.max_skew());
        for (node, s) in cfg.clock.pinned()? {
            if let Some(slot) = skews.get_mut(node as usize) {
                *slot = s;
            }
        }
        skews[REGISTRY as usize] = 0;

        let space = Arc::new(KeySpace::new(&cfg.workload, derive_seed(seed, 2)));
        let cacheable = Arc::new(space.hottest(cfg.cache.cacheable_fraction));
        let capacity = (cfg.workload.n_keys as f64 * cfg.cache.capacity_fraction).round() as usize;
        let routing = Arc::new(topo.routing());
        let policy = cfg.cache.policy()?;
        let crash = (cfg.failure.coordinator_crash_every > 0).then_some(CrashPlan {
            every: cfg.failure.coordinator_crash_every,
            restart_after: cfg.failure.restart_after_ms * 1000,
        });
        let mode = if cfg.validator.timetravel_ro {
            ValidationMode::TimeTravelReadOnly
        } else {
            ValidationMode::Verbatim
        };

        let mut nodes: Vec<Node> = (0..n).map(|_| Node::Registry).collect();
        for (i, &id) in topo.clients.iter().enumerate() {
            let ccfg = ClientConfig {
                cache: CacheConfig { strategy: cfg.cache.strategy, capacity, cacheable: Some(cacheable.clone()) },
                lease_policy: policy,
                max_lease_secs: cfg.cache.max_lease_ms / 1e3,
                max_in_flight: cfg.sim.max_in_flight,
                closed_loop: cfg.sim.closed_loop,
                max_txns: (cfg.sim.max_txns_per_client > 0).then_some(cfg.sim.max_txns_per_client),
                retry_after: cfg.sim.decision_retry_us,
                crash,
            };
            let gen = WorkloadGen::new(space.clone(), cfg.workload.clone(), derive_seed(seed, 100 + i as u64));
            let client = ClientNode::new(id, ccfg, routing.clone(), SkewedClock::new(id, skews[id as usize]))
                .with_workload(gen);
            nodes[id as usize] = Node::Client(Box::new(client));
        }
        for &id in &topo.validators {
            let state = ValidatorState::new(Timestamp::LOAD, mode);
            nodes[id as usize] =
                Node::Validator(Box::new(ValidatorNode::new(id, state, cfg.sim.coordinator_timeout_us)));
        }
        for (shard, replicas) in topo.storage.iter().enumerate() {
            for (r, &id) in replicas.iter().enumerate() {
                let scfg = StorageConfig {
                    shard,
                    n_shards: cfg.storage.shards,
                    backups: if r == 0 { replicas[1..].to_vec() } else { Vec::new() },
                    quorum: f,
                    is_primary: r == 0,
                    strategy: cfg.cache.strategy,
                    cacheable: Some(cacheable.clone()),
                    quorum_timeout: cfg.storage.quorum_timeout_us,
                };
                let clock = SkewedClock::new(id, skews[id as usize]);
                nodes[id as usize] = Node::Storage(Box::new(StorageNode::new(id, scfg, clock, EPOCH)));
            }
        }

        let skew_map = skews.iter().enumerate().map(|(i, s)| (i as NodeId, *s)).collect();
        let latency = Latency::new(&cfg.net);
        let trace = cfg.sim.trace.then(Vec::new);
        let restart_after = cfg.failure.restart_after_ms * 1000;
        let mut sim = Self {
            topo,
            nodes,
            alive: vec![true; n],
            epoch: vec![0; n],
            busy_until: vec![0; n],
            queue: EventQueue::default(),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 3)),
            latency,
            metrics: Metrics::new(skew_map, EPOCH + cfg.sim.warmup_ms * 1000),
            registry: WatermarkState::default(),
            last_reports: HashMap::new(),
            broadcast_generation: 0,
            issuing: true,
            stop_time: None,
            committed_at_stop: 0,
            now: EPOCH,
            events: 0,
            hasher: Default::default(),
            trace,
            restart_after,
            cfg,
        };
        for o in sim.cfg.failure.replica_outages.clone() {
            let node = sim.topo.storage[o.shard][o.replica];
            let down_for = (o.down_ms > 0).then_some(o.down_ms * 1000);
            sim.queue.push(EPOCH + o.at_ms * 1000, Event::Crash { node, down_for });
        }
        Ok(sim)
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    fn schedule_broadcast(&mut self) {
        self.broadcast_generation += 1;
        let at = self.now + self.cfg.watermark.period_ms * 1000;
        self.queue.push(at, Event::Broadcast { generation: self.broadcast_generation });
    }

    fn apply(&mut self, node: NodeId, out: &mut Outbox) {
        for action in out.drain() {
            match action {
                Action::Send(msg) => {
                    self.metrics.count_message(self.now, msg.kind());
                    let delay = self.latency.sample(&mut self.rng);
                    self.queue.push(self.now + delay, Event::Deliver(msg));
                }
                Action::Timer { after, kind } => {
                    let epoch = self.epoch[node as usize];
                    self.queue.push(self.now + after, Event::Timer { node, epoch, kind });
                }
                Action::Observe(obs) => self.metrics.observe(self.now, node, obs),
                Action::CrashSelf => {
                    self.crash(node, Some(self.restart_after));
                    break;
                }
            }
        }
    }

    fn crash(&mut self, node: NodeId, down_for: Option<TrueTime>) {
        let i = node as usize;
        if !self.alive[i] {
            return;
        }
        self.alive[i] = false;
        self.epoch[i] += 1;
        if let Node::Client(c) = &mut self.nodes[i] {
            c.crash();
            self.metrics.client_lost_cache(self.now, node);
        }
        if let Some(d) = down_for {
            self.queue.push(self.now + d, Event::Restart { node });
        }
    }

    fn broadcast(&mut self) {
        let mut reports = Vec::with_capacity(self.topo.clients.len());
        for &c in &self.topo.clients {
            if self.alive[c as usize] {
                if let Node::Client(client) = &mut self.nodes[c as usize] {
                    let r = client.watermark_report(self.now);
                    self.last_reports.insert(c, r);
                }
            }
            if let Some(r) = self.last_reports.get(&c) {
                reports.push(*r);
            }
        }
        let (gw, gc) = self.registry.broadcast_round(reports);
        self.metrics.since_broadcast = 0;
        let targets: Vec<NodeId> = self.topo.clients.iter().chain(self.topo.validators.iter()).copied().collect();
        let mut out = Outbox::new();
        for t in targets {
            out.send(Message::new(REGISTRY, t, Payload::FreshnessBroadcast { global_watermark: gw, ts_gc: gc }));
        }
        self.apply(REGISTRY, &mut out);
    }

    fn record(&mut self, s: &Scheduled, node: NodeId) {
        self.events += 1;
        (s.time, s.seq, s.event.code(), node).hash(&mut self.hasher);
        if let Some(trace) = self.trace.as_mut() {
            if trace.len() < TRACE_LIMIT {
                let (event, detail) = match &s.event {
                    Event::Deliver(m) => ("deliver", format!("{}->{} {}", m.src, m.dst, m.kind().name())),
                    Event::Handle(m) => ("handle", format!("{}->{} {}", m.src, m.dst, m.kind().name())),
                    Event::Timer { kind, .. } => ("timer", format!("{kind:?}")),
                    Event::Broadcast { .. } => ("broadcast", String::new()),
                    Event::Crash { .. } => ("crash", String::new()),
                    Event::Restart { .. } => ("restart", String::new()),
                };
                trace.push(TraceEvent { time: s.time, seq: s.seq, event, node, detail });
            }
        }
    }

    fn handle_message(&mut self, msg: Message) {
        let dst = msg.dst;
        let mut out = Outbox::new();
        if let Some(actor) = self.nodes[dst as usize].actor() {
            actor.on_message(self.now, msg, &mut out);
        }
        self.apply(dst, &mut out);
    }

    fn arrivals_exhausted(&self) -> bool {
        let cap = self.cfg.sim.max_txns_per_client;
        cap > 0
            && self.topo.clients.iter().all(|&c| match &self.nodes[c as usize] {
                Node::Client(client) => client.counters.arrivals >= cap,
                _ => true,
            })
    }

    fn maybe_stop_issuing(&mut self) {
        if !self.issuing {
            return;
        }
        let elapsed = self.now - EPOCH;
        if self.metrics.committed >= self.cfg.sim.committed_target
            || elapsed >= (self.cfg.sim.warmup_ms + self.cfg.sim.duration_ms) * 1000
            || self.arrivals_exhausted()
        {
            self.issuing = false;
            self.stop_time = Some(self.now);
            self.committed_at_stop = self.metrics.committed;
        }
    }

    /// Runs to completion and returns the report and committed history.
    pub fn run(mut self) -> SimOutput {
        let mut out = Outbox::new();
        for &c in &self.topo.clients.clone() {
            if let Node::Client(client) = &mut self.nodes[c as usize] {
                client.start(&mut out);
            }
            self.apply(c, &mut out);
        }
        self.schedule_broadcast();

        let mut hard_stop = TrueTime::MAX;
        while let Some(s) = self.queue.pop() {
            if s.time > hard_stop {
                break;
            }
            self.now = s.time;
            match &s.event {
                Event::Deliver(m) | Event::Handle(m) => {
                    let d = m.dst;
                    self.record(&s, d);
                }
                Event::Timer { node, .. } | Event::Crash { node, .. } | Event::Restart { node } => {
                    let n = *node;
                    self.record(&s, n);
                }
                Event::Broadcast { .. } => self.record(&s, REGISTRY),
            }
            match s.event {
                Event::Deliver(msg) => {
                    let dst = msg.dst as usize;
                    if !self.alive[dst] {
                        self.metrics.dropped += 1;
                        continue;
                    }
                    let service = self.cfg.sim.service_us;
                    if service > 0 && self.nodes[dst].is_server() {
                        let start = self.now.max(self.busy_until[dst]);
                        self.busy_until[dst] = start + service;
                        self.queue.push(start + service, Event::Handle(msg));
                    } else {
                        self.handle_message(msg);
                    }
                }
                Event::Handle(msg) => {
                    if self.alive[msg.dst as usize] {
                        self.handle_message(msg);
                    } else {
                        self.metrics.dropped += 1;
                    }
                }
                Event::Timer { node, epoch, kind } => {
                    let i = node as usize;
                    if !self.alive[i] || self.epoch[i] != epoch {
                        continue;
                    }
                    if kind == TimerKind::NextArrival && !self.issuing {
                        continue;
                    }
                    let mut out = Outbox::new();
                    if let Some(actor) = self.nodes[i].actor() {
                        actor.on_timer(self.now, kind, &mut out);
                    }
                    self.apply(node, &mut out);
                }
                Event::Broadcast { generation } => {
                    if generation == self.broadcast_generation && self.issuing {
                        self.broadcast();
                        self.schedule_broadcast();
                    }
                }
                Event::Crash { node, down_for } => self.crash(node, down_for),
                Event::Restart { node } => {
                    let i = node as usize;
                    if self.alive[i] {
                        continue;
                    }
                    self.alive[i] = true;
                    let mut out = Outbox::new();
                    if let Node::Client(c) = &mut self.nodes[i] {
                        c.restart(self.now, &mut out);
                    }
                    self.apply(node, &mut out);
                }
            }
            if self.issuing && self.metrics.since_broadcast >= self.cfg.watermark.period_txns.max(1) {
                self.broadcast();
                self.schedule_broadcast();
            }
            let was_issuing = self.issuing;
            self.maybe_stop_issuing();
            if was_issuing && !self.issuing {
                hard_stop = self.now + self.cfg.sim.drain_ms * 1000;
            }
        }
        self.finish()
    }

    fn finish(self) -> SimOutput {
        let end = self.now;
        let mut stuck = 0u64;
        let mut ctp_runs = 0;
        let mut arrivals = 0;
        let mut installs = 0;
        let mut commit_without_writes = 0;
        let mut nacks = 0;
        let mut boundary_crashes: BTreeMap<CrashPoint, u64> = BTreeMap::new();
        for node in &self.nodes {
            match node {
                Node::Validator(v) => {
                    stuck += v.state.prepared_count() as u64;
                    ctp_runs += v.ctp_runs;
                }
                Node::Client(c) => {
                    arrivals += c.counters.arrivals;
                    for (p, n) in &c.counters.boundary_crashes {
                        *boundary_crashes.entry(*p).or_default() += n;
                    }
                }
                Node::Storage(s) => {
                    installs += s.counters.installs;
                    commit_without_writes += s.counters.commit_without_writes;
                    nacks += s.counters.replicate_nacks;
                }
                Node::Registry => {}
            }
        }
        let stop = self.stop_time.unwrap_or(end);
        let measure_from = EPOCH + self.cfg.sim.warmup_ms * 1000;
        let committed_at_stop = if self.stop_time.is_some() { self.committed_at_stop } else { self.metrics.committed };
        let events = self.events;
        let event_hash = self.hasher.finish();
        let dropped = self.metrics.dropped;
        let (mut core, history, audit) = self.metrics.finish(end, stuck);
        core.dropped = dropped;
        let report = SimReport {
            core,
            audit,
            measured_us: stop.saturating_sub(measure_from),
            committed_measured: committed_at_stop,
            arrivals,
            ctp_runs,
            storage_installs: installs,
            commit_without_writes,
            replicate_nacks: nacks,
            final_ts_gc: self.registry.ts_gc,
            final_global_watermark: self.registry.global_watermark,
            boundary_crashes,
            events,
            event_hash,
        };
        SimOutput { report, history, trace: self.trace }
    }
}

/// Builds and runs one simulation.
pub fn run(cfg: &SimConfig) -> Result<SimOutput> {
    Ok(Simulation::new(cfg)?.run())
}

/// Node ids that should never appear as message destinations of a run
/// without failures; used by tests.
pub fn server_ids(topo: &Topology) -> HashSet<NodeId> {
    topo.validators.iter().chain(topo.storage.iter().flatten()).copied().collect()
}
