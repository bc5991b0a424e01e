//! Client-side inter-transaction cache with LRU replacement.
//!
//! Three consistency strategies share one code path: naive and explicit
//! invalidation entries carry an infinite lease end, lease entries expire on
//! the owner's local clock and are dropped lazily at lookup.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::types::{KeyId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheStrategy {
    Naive,
    #[serde(rename = "ei")]
    ExplicitInvalidation,
    Lease,
}

impl CacheStrategy {
    pub fn name(self) -> &'static str {
        match self {
            CacheStrategy::Naive => "naive",
            CacheStrategy::ExplicitInvalidation => "ei",
            CacheStrategy::Lease => "lease",
        }
    }
}

impl FromStr for CacheStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "naive" => Ok(CacheStrategy::Naive),
            "ei" | "explicit" => Ok(CacheStrategy::ExplicitInvalidation),
            "lease" => Ok(CacheStrategy::Lease),
            _ => Err(Error::Config(format!("unknown cache strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub value: Vec<u8>,
    /// Commit timestamp of the transaction that wrote this version.
    pub vts: Timestamp,
    /// Local time after which the entry must not be served.
    pub lts: Timestamp,
    /// The version is known to have no superseding write up to this time.
    pub fts: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidateReason {
    /// Server callback (explicit invalidation).
    Callback,
    /// A local transaction aborted after reading this entry stale.
    StaleAbort,
    /// Lease ran out.
    LeaseExpiry,
}

#[derive(Debug, Clone)]
pub struct CacheConfig {
    pub strategy: CacheStrategy,
    pub capacity: usize,
    /// Keys eligible for caching; `None` admits every key.
    pub cacheable: Option<Arc<HashSet<KeyId>>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Hit(CacheEntry),
    Miss,
    /// Lease ran out; the entry was removed and the lookup is a miss.
    Expired(CacheEntry),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InsertOutcome {
    pub inserted: Option<CacheEntry>,
    pub evicted: Option<(KeyId, CacheEntry)>,
}

#[derive(Debug, Clone)]
struct Slot {
    entry: CacheEntry,
    tick: u64,
}

#[derive(Debug, Clone)]
pub struct Cache {
    config: CacheConfig,
    slots: HashMap<KeyId, Slot>,
    recency: BTreeMap<u64, KeyId>,
    tick: u64,
    /// Highest version announced by a callback, per key.
    invalidated_upto: HashMap<KeyId, Timestamp>,
}

impl Cache {
    pub fn new(config: CacheConfig) -> Self {
        Self {
            config,
            slots: HashMap::new(),
            recency: BTreeMap::new(),
            tick: 0,
            invalidated_upto: HashMap::new(),
        }
    }

    pub fn strategy(&self) -> CacheStrategy {
        self.config.strategy
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_cacheable(&self, key: KeyId) -> bool {
        self.config.capacity > 0 && self.config.cacheable.as_ref().is_none_or(|set| set.contains(&key))
    }

    pub fn peek(&self, key: KeyId) -> Option<&CacheEntry> {
        self.slots.get(&key).map(|s| &s.entry)
    }

    fn touch(&mut self, key: KeyId) {
        self.tick += 1;
        let tick = self.tick;
        if let Some(slot) = self.slots.get_mut(&key) {
            self.recency.remove(&slot.tick);
            slot.tick = tick;
            self.recency.insert(tick, key);
        }
    }

    fn remove(&mut self, key: KeyId) -> Option<CacheEntry> {
        let slot = self.slots.remove(&key)?;
        self.recency.remove(&slot.tick);
        Some(slot.entry)
    }

    pub fn lookup(&mut self, key: KeyId, local_now: Timestamp) -> Lookup {
        let Some(slot) = self.slots.get(&key) else {
            return Lookup::Miss;
        };
        if self.config.strategy == CacheStrategy::Lease && slot.entry.lts < local_now {
            return Lookup::Expired(self.remove(key).expect("slot present"));
        }
        let entry = slot.entry.clone();
        self.touch(key);
        Lookup::Hit(entry)
    }

    /// Caches a fetched version.
    ///
    /// `lease_micros` is the lease length for the lease strategy (ignored by
    /// the others); a zero lease means the key is not cached. The freshness
    /// timestamp is `max(vts, global_watermark)`.
    pub fn insert(
        &mut self,
        key: KeyId,
        value: Vec<u8>,
        vts: Timestamp,
        lease_micros: u64,
        global_watermark: Timestamp,
        local_now: Timestamp,
    ) -> InsertOutcome {
        if !self.is_cacheable(key) {
            return InsertOutcome::default();
        }
        if let Some(upto) = self.invalidated_upto.get(&key) {
            if vts < *upto {
                return InsertOutcome::default();
            }
        }
        let lts = match self.config.strategy {
            CacheStrategy::Lease => {
                if lease_micros == 0 {
                    return InsertOutcome::default();
                }
                Timestamp::new(local_now.micros.saturating_add(lease_micros), local_now.node, local_now.seq)
            }
            _ => Timestamp::MAX,
        };
        let entry = CacheEntry { value, vts, lts, fts: vts.max(global_watermark) };
        self.remove(key);
        let mut evicted = None;
        if self.slots.len() >= self.config.capacity {
            if let Some((_, victim)) = self.recency.pop_first() {
                let slot = self.slots.remove(&victim).expect("recency tracks slots");
                evicted = Some((victim, slot.entry));
            }
        }
        self.tick += 1;
        self.slots.insert(key, Slot { entry: entry.clone(), tick: self.tick });
        self.recency.insert(self.tick, key);
        InsertOutcome { inserted: Some(entry), evicted }
    }

    /// Refreshes an already cached key with a version this client committed.
    pub fn apply_own_write(&mut self, key: KeyId, value: Vec<u8>, vts: Timestamp) -> bool {
        match self.slots.get_mut(&key) {
            Some(slot) if slot.entry.vts < vts => {
                slot.entry.value = value;
                slot.entry.vts = vts;
                slot.entry.fts = vts;
                true
            }
            _ => false,
        }
    }

    fn honors(&self, reason: InvalidateReason) -> bool {
        use InvalidateReason::*;
        match self.config.strategy {
            CacheStrategy::Naive => matches!(reason, StaleAbort),
            CacheStrategy::ExplicitInvalidation => matches!(reason, Callback | StaleAbort),
            CacheStrategy::Lease => matches!(reason, LeaseExpiry | StaleAbort),
        }
    }

    pub fn invalidate(&mut self, key: KeyId, reason: InvalidateReason) -> Option<CacheEntry> {
        if !self.honors(reason) {
            return None;
        }
        self.remove(key)
    }

    /// Handles a server callback announcing version `vts` of `key`.
    pub fn callback(&mut self, key: KeyId, vts: Timestamp) -> Option<CacheEntry> {
        if !self.honors(InvalidateReason::Callback) {
            return None;
        }
        let upto = self.invalidated_upto.entry(key).or_insert(vts);
        *upto = (*upto).max(vts);
        match self.slots.get(&key) {
            Some(slot) if slot.entry.vts < vts => self.remove(key),
            _ => None,
        }
    }

    /// Minimum freshness timestamp over live entries, or `local_now` when
    /// nothing live is cached.
    pub fn c_freshness(&self, local_now: Timestamp) -> Timestamp {
        let lease = self.config.strategy == CacheStrategy::Lease;
        self.slots
            .values()
            .filter(|s| !lease || s.entry.lts >= local_now)
            .map(|s| s.entry.fts)
            .min()
            .unwrap_or(local_now)
    }

    /// Drops everything (client restart).
    pub fn clear(&mut self) -> Vec<(KeyId, CacheEntry)> {
        self.recency.clear();
        self.invalidated_upto.clear();
        let mut all: Vec<_> = self.slots.drain().map(|(k, s)| (k, s.entry)).collect();
        all.sort_by_key(|(k, _)| *k);
        all
    }

    pub fn keys(&self) -> impl Iterator<Item = KeyId> + '_ {
        self.slots.keys().copied()
    }
}
