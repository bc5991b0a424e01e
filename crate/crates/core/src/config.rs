//! Simulation configuration: TOML file plus dotted `key=value` overrides.
//!
//! Every key is documented in `docs/config.md`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::CacheStrategy;
use crate::error::{Error, Result};
use crate::lease::LeasePolicy;
use crate::types::NodeId;
use crate::workload::WorkloadConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub sim: RunConfig,
    pub net: NetConfig,
    pub clock: ClockConfig,
    pub cache: CacheSection,
    pub watermark: WatermarkConfig,
    pub storage: StorageSection,
    pub validator: ValidatorSection,
    pub workload: WorkloadConfig,
    pub failure: FailureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub clients: usize,
    /// Stop issuing once this many transactions committed.
    pub committed_target: u64,
    /// Stop issuing after this much simulated time past the warm-up.
    pub duration_ms: u64,
    /// Leading interval excluded from every reported counter, letting
    /// caches and rate trackers settle. The history still covers it.
    pub warmup_ms: u64,
    /// Per-client arrival cap; 0 disables it.
    pub max_txns_per_client: u64,
    pub max_in_flight: usize,
    /// Each client keeps `max_in_flight` transactions outstanding instead of
    /// following the Poisson arrival process.
    pub closed_loop: bool,
    /// Time allowed for in-flight work to settle after issuing stops.
    pub drain_ms: u64,
    pub coordinator_timeout_us: u64,
    pub decision_retry_us: u64,
    /// Per-message service time at validators and storage nodes.
    pub service_us: u64,
    /// Keep a bounded event trace for debugging.
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            clients: 8,
            committed_target: 100_000,
            duration_ms: 600_000,
            warmup_ms: 10_000,
            max_txns_per_client: 0,
            max_in_flight: 64,
            closed_loop: false,
            drain_ms: 2_000,
            coordinator_timeout_us: 10_000,
            decision_retry_us: 10_000,
            service_us: 0,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyKind {
    Constant,
    Uniform,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub latency: LatencyKind,
    /// Constant value, uniform lower bound or exponential mean.
    pub latency_us: u64,
    /// Uniform upper bound.
    pub latency_max_us: u64,
    /// Floor added to exponential samples.
    pub latency_min_us: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { latency: LatencyKind::Constant, latency_us: 500, latency_max_us: 500, latency_min_us: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ClockConfig {
    /// `max` draws every node's skew uniformly in `[-max, max]`; numeric
    /// keys pin the skew of that node id.
    pub skew_us: BTreeMap<String, i64>,
}

impl ClockConfig {
    pub fn max_skew(&self) -> i64 {
        self.skew_us.get("max").copied().unwrap_or(0).abs()
    }

    pub fn pinned(&self) -> Result<BTreeMap<NodeId, i64>> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.skew_us {
            if k == "max" {
                continue;
            }
            let node: NodeId = k.parse().map_err(|_| Error::Config(format!("clock.skew_us.{k}: not a node id")))?;
            out.insert(node, *v);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    pub strategy: CacheStrategy,
    /// Cache capacity as a fraction of the key count.
    pub capacity_fraction: f64,
    /// Most popular fraction of keys eligible for caching.
    pub cacheable_fraction: f64,
    pub lease_policy: String,
    pub max_lease_ms: f64,
}

impl Default for CacheSection {
    fn default() -> Self {
        Self {
            strategy: CacheStrategy::Lease,
            capacity_fraction: 0.001,
            cacheable_fraction: 0.01,
            lease_policy: "ideal".into(),
            max_lease_ms: 5_000.0,
        }
    }
}

impl CacheSection {
    pub fn policy(&self) -> Result<LeasePolicy> {
        self.lease_policy.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WatermarkConfig {
    pub period_txns: u64,
    pub period_ms: u64,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        Self { period_txns: 10_000, period_ms: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageSection {
    pub shards: usize,
    pub replication_f: usize,
    pub quorum_timeout_us: u64,
}

impl Default for StorageSection {
    fn default() -> Self {
        Self { shards: 5, replication_f: 1, quorum_timeout_us: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorSection {
    pub shards: usize,
    pub timetravel_ro: bool,
}

impl Default for ValidatorSection {
    fn default() -> Self {
        Self { shards: 5, timetravel_ro: false }
    }
}

/// One storage replica outage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaOutage {
    pub shard: usize,
    /// 0 is the primary; primaries never fail over, so use a backup.
    pub replica: usize,
    pub at_ms: u64,
    /// 0 means the replica never comes back.
    pub down_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureConfig {
    /// Crash the coordinator during every n-th read-write commit; 0 disables.
    pub coordinator_crash_every: u64,
    pub restart_after_ms: u64,
    pub replica_outages: Vec<ReplicaOutage>,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self { coordinator_crash_every: 0, restart_after_ms: 50, replica_outages: Vec::new() }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML
    /// scalars and fall back to strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            set_path(&mut root, path.trim(), parse_scalar(raw.trim()))?;
        }
        let cfg: SimConfig = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        if self.storage.shards == 0 || self.validator.shards == 0 {
            return Err(Error::Config("shard counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.cache.capacity_fraction) || !(0.0..=1.0).contains(&self.cache.cacheable_fraction) {
            return Err(Error::Config("cache fractions must lie in [0, 1]".into()));
        }
        if self.sim.max_in_flight == 0 {
            return Err(Error::Config("sim.max_in_flight must be positive".into()));
        }
        if self.watermark.period_ms == 0 {
            return Err(Error::Config("watermark.period_ms must be positive".into()));
        }
        if self.net.latency == LatencyKind::Uniform && self.net.latency_max_us < self.net.latency_us {
            return Err(Error::Config("net.latency_max_us below net.latency_us".into()));
        }
        self.cache.policy()?;
        self.clock.pinned()?;
        for o in &self.failure.replica_outages {
            if o.shard >= self.storage.shards || o.replica > 2 * self.storage.replication_f {
                return Err(Error::Config(format!("replica outage names a missing replica {}/{}", o.shard, o.replica)));
            }
        }
        Ok(())
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let (last, parents) = parts.split_last().ok_or_else(|| Error::Config("empty override key".into()))?;
    let mut table = root;
    for p in parents {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{path}`: `{p}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
