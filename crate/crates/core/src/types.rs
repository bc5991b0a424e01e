//! Shared domain vocabulary: timestamps, keys, versions, transaction identity.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a simulated node (client, validator, storage replica or the registry).
pub type NodeId = u32;

/// Physical timestamp with a `(node, seq)` tiebreak.
///
/// Ordering is lexicographic over `(micros, node, seq)`, which gives a total
/// order across all nodes without coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Timestamp {
    pub micros: u64,
    pub node: NodeId,
    pub seq: u64,
}

impl Timestamp {
    /// Version timestamp of every key at dataset load.
    pub const LOAD: Timestamp = Timestamp { micros: 0, node: 0, seq: 0 };
    pub const MAX: Timestamp = Timestamp { micros: u64::MAX, node: NodeId::MAX, seq: u64::MAX };

    pub const fn new(micros: u64, node: NodeId, seq: u64) -> Self {
        Self { micros, node, seq }
    }

    /// One logical tick (1 µs) below `self`, at the bottom of the tiebreak range.
    pub fn tick_before(self) -> Timestamp {
        if self.micros == 0 {
            Timestamp::LOAD
        } else {
            Timestamp::new(self.micros - 1, NodeId::MAX, u64::MAX)
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Timestamp::MAX
    }
}

/// Total order over timestamps: micros first, then node, then seq.
pub fn ts_compare(a: &Timestamp, b: &Timestamp) -> Ordering {
    (a.micros, a.node, a.seq).cmp(&(b.micros, b.node, b.seq))
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        ts_compare(self, other)
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}.{}.{}", self.micros, self.node, self.seq)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyId(pub u64);

impl KeyId {
    /// Shard owning this key for a fixed shard count.
    pub fn shard(self, n_shards: usize) -> usize {
        shard_of(self, n_shards)
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

/// Maps a key to a shard index in `0..n_shards`.
///
/// The key is mixed with a fixed 64-bit finalizer before reduction so that
/// sequential key ids spread evenly.
pub fn shard_of(key: KeyId, n_shards: usize) -> usize {
    assert!(n_shards >= 1, "shard count must be positive");
    let mut x = key.0;
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    (x % n_shards as u64) as usize
}

/// Default maximum value size in bytes.
pub const MAX_VALUE_LEN: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionedValue {
    pub value: Vec<u8>,
    pub vts: Timestamp,
}

impl VersionedValue {
    pub fn new(value: Vec<u8>, vts: Timestamp) -> Result<Self, crate::Error> {
        if value.len() > MAX_VALUE_LEN {
            return Err(crate::Error::ValueTooLarge { len: value.len(), max: MAX_VALUE_LEN });
        }
        Ok(Self { value, vts })
    }
}

/// Transaction identity: coordinating node plus a per-node counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TxnId {
    pub node: NodeId,
    pub seq: u64,
}

impl TxnId {
    pub const fn new(node: NodeId, seq: u64) -> Self {
        Self { node, seq }
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}.{}", self.node, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxnKind {
    ReadOnly,
    ReadWrite,
}

/// A read recorded in a transaction's read set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadEntry {
    pub value: Vec<u8>,
    pub vts: Timestamp,
    pub fts: Timestamp,
}

/// Client-side state of one transaction during its processing phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnContext {
    pub id: TxnId,
    pub read_set: BTreeMap<KeyId, ReadEntry>,
    pub write_set: BTreeMap<KeyId, Vec<u8>>,
    pub t_freshness: Option<Timestamp>,
    pub t_commit: Option<Timestamp>,
}

impl TxnContext {
    pub fn new(id: TxnId) -> Self {
        Self {
            id,
            read_set: BTreeMap::new(),
            write_set: BTreeMap::new(),
            t_freshness: None,
            t_commit: None,
        }
    }

    pub fn kind(&self) -> TxnKind {
        if self.write_set.is_empty() {
            TxnKind::ReadOnly
        } else {
            TxnKind::ReadWrite
        }
    }

    /// Assigns freshness and commit timestamps at the end of the processing phase.
    ///
    /// `t_freshness` is the minimum `fts` over the read set (or `local_now`
    /// when nothing was read). Read-only transactions commit at the maximum
    /// `fts`; read-write transactions commit at `local_now`, raised above
    /// every version they read.
    pub fn assign_timestamps(&mut self, local_now: Timestamp) {
        let min_fts = self.read_set.values().map(|r| r.fts).min();
        let max_fts = self.read_set.values().map(|r| r.fts).max();
        self.t_freshness = Some(min_fts.unwrap_or(local_now));
        self.t_commit = Some(match self.kind() {
            TxnKind::ReadOnly => max_fts.unwrap_or(local_now),
            TxnKind::ReadWrite => {
                let max_vts = self.read_set.values().map(|r| r.vts).max();
                match max_vts {
                    Some(v) if v.micros >= local_now.micros => {
                        Timestamp::new(v.micros + 1, local_now.node, local_now.seq)
                    }
                    _ => local_now,
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(m: u64, n: u32, s: u64) -> Timestamp {
        Timestamp::new(m, n, s)
    }

    #[test]
    fn compare_examples() {
        assert_eq!(ts_compare(&ts(10, 1, 0), &ts(10, 2, 0)), Ordering::Less);
        assert_eq!(ts_compare(&ts(9, 9, 9), &ts(10, 0, 0)), Ordering::Less);
        let a = ts(4, 4, 4);
        assert_eq!(ts_compare(&a, &a), Ordering::Equal);
    }

    #[test]
    fn shard_examples() {
        assert_eq!(shard_of(KeyId(0), 1), 0);
        assert_eq!(shard_of(KeyId(12345), 5), shard_of(KeyId(12345), 5));
    }

    #[test]
    fn shard_is_uniform_over_random_keys() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut buckets = [0u64; 5];
        for _ in 0..n {
            buckets[shard_of(KeyId(rng.random()), 5)] += 1;
        }
        for b in buckets {
            let frac = b as f64 / n as f64;
            assert!((frac - 0.2).abs() <= 0.01, "bucket share {frac}");
        }
        // sequential ids as used by the workload
        let mut seq = [0u64; 5];
        for k in 0..100_000u64 {
            seq[shard_of(KeyId(k), 5)] += 1;
        }
        for b in seq {
            assert!((b as f64 / 100_000.0 - 0.2).abs() <= 0.01);
        }
    }

    #[test]
    fn assign_timestamps_read_only() {
        let mut ctx = TxnContext::new(TxnId::new(1, 1));
        for (k, f) in [(1, 10), (2, 20), (3, 30)] {
            ctx.read_set.insert(
                KeyId(k),
                ReadEntry { value: vec![], vts: ts(1, 0, 0), fts: ts(f, 0, 0) },
            );
        }
        ctx.assign_timestamps(ts(99, 1, 0));
        assert_eq!(ctx.t_freshness, Some(ts(10, 0, 0)));
        assert_eq!(ctx.t_commit, Some(ts(30, 0, 0)));

        let mut single = TxnContext::new(TxnId::new(1, 2));
        single.read_set.insert(KeyId(9), ReadEntry { value: vec![], vts: ts(7, 0, 0), fts: ts(7, 0, 0) });
        single.assign_timestamps(ts(99, 1, 0));
        assert_eq!(single.t_freshness, single.t_commit);
        assert_eq!(single.t_commit, Some(ts(7, 0, 0)));
    }

    #[test]
    fn assign_timestamps_read_write() {
        let mut ctx = TxnContext::new(TxnId::new(1, 1));
        ctx.read_set.insert(KeyId(1), ReadEntry { value: vec![], vts: ts(5, 0, 0), fts: ts(8, 0, 0) });
        ctx.write_set.insert(KeyId(1), vec![1]);
        ctx.assign_timestamps(ts(99, 1, 3));
        assert_eq!(ctx.t_commit, Some(ts(99, 1, 3)));
        assert_eq!(ctx.t_freshness, Some(ts(8, 0, 0)));
    }

    #[test]
    fn read_write_commit_stays_above_versions_read() {
        let mut ctx = TxnContext::new(TxnId::new(1, 1));
        ctx.read_set.insert(KeyId(1), ReadEntry { value: vec![], vts: ts(120, 3, 0), fts: ts(120, 3, 0) });
        ctx.write_set.insert(KeyId(1), vec![1]);
        ctx.assign_timestamps(ts(100, 1, 4));
        assert_eq!(ctx.t_commit, Some(ts(121, 1, 4)));
    }

    #[test]
    fn empty_read_only_commits_at_local_now() {
        let mut ctx = TxnContext::new(TxnId::new(1, 1));
        ctx.assign_timestamps(ts(42, 1, 0));
        assert_eq!(ctx.t_freshness, Some(ts(42, 1, 0)));
        assert_eq!(ctx.t_commit, Some(ts(42, 1, 0)));
    }

    #[test]
    fn value_size_is_bounded() {
        assert!(VersionedValue::new(vec![0; MAX_VALUE_LEN], Timestamp::LOAD).is_ok());
        assert!(VersionedValue::new(vec![0; MAX_VALUE_LEN + 1], Timestamp::LOAD).is_err());
    }

    fn arb_ts() -> impl Strategy<Value = Timestamp> {
        (0u64..50, 0u32..4, 0u64..4).prop_map(|(m, n, s)| Timestamp::new(m, n, s))
    }

    proptest! {
        #[test]
        fn compare_is_a_total_order(a in arb_ts(), b in arb_ts(), c in arb_ts()) {
            prop_assert_eq!(ts_compare(&a, &b), ts_compare(&b, &a).reverse());
            prop_assert_eq!(ts_compare(&a, &b) == Ordering::Equal, a == b);
            if ts_compare(&a, &b) != Ordering::Greater && ts_compare(&b, &c) != Ordering::Greater {
                prop_assert_ne!(ts_compare(&a, &c), Ordering::Greater);
            }
        }
    }
}
