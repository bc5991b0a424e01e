//! Offline serializability checks over committed histories.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{KeyId, Timestamp, TxnId, TxnKind};

/// Largest history the exhaustive check accepts.
pub const BRUTE_FORCE_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedTxn {
    pub txn: TxnId,
    pub kind: TxnKind,
    pub t_commit: Timestamp,
    /// Versions read, by version timestamp.
    pub reads: Vec<(KeyId, Timestamp)>,
    /// Versions created; each is the transaction's commit timestamp.
    pub writes: Vec<(KeyId, Timestamp)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub txn: TxnId,
    pub key: Option<KeyId>,
    pub detail: String,
}

/// Equivalent serial order: commit timestamp, writers before readers at a
/// tie, then transaction id.
pub fn serial_order(h: &[CommittedTxn]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..h.len()).collect();
    idx.sort_by_key(|&i| {
        let t = &h[i];
        (t.t_commit, t.kind == TxnKind::ReadOnly, t.txn)
    });
    idx
}

/// Replays the history in commit-timestamp order and checks that every
/// read saw the latest version preceding its transaction and that every
/// write advances its key's version.
pub fn check_timestamp_serializable(h: &[CommittedTxn]) -> Result<(), Violation> {
    let mut latest: HashMap<KeyId, Timestamp> = HashMap::new();
    let mut last_writer_ts: Option<(Timestamp, TxnId)> = None;
    for i in serial_order(h) {
        let t = &h[i];
        if t.kind == TxnKind::ReadWrite {
            if let Some((ts, other)) = last_writer_ts {
                if ts == t.t_commit {
                    return Err(Violation {
                        txn: t.txn,
                        key: None,
                        detail: format!("commit timestamp {} shared with {other}", t.t_commit),
                    });
                }
            }
            last_writer_ts = Some((t.t_commit, t.txn));
        }
        for &(key, vts) in &t.reads {
            let current = latest.get(&key).copied().unwrap_or(Timestamp::LOAD);
            if current != vts {
                return Err(Violation {
                    txn: t.txn,
                    key: Some(key),
                    detail: format!("read version {vts} but {current} precedes commit at {}", t.t_commit),
                });
            }
        }
        for &(key, vts) in &t.writes {
            let current = latest.get(&key).copied().unwrap_or(Timestamp::LOAD);
            if vts <= current {
                return Err(Violation {
                    txn: t.txn,
                    key: Some(key),
                    detail: format!("wrote version {vts} not above {current}"),
                });
            }
            latest.insert(key, vts);
        }
    }
    Ok(())
}

/// Searches every serial order for one where each read returns the most
/// recent preceding write (or the load version). Exponential; limited to
/// [`BRUTE_FORCE_LIMIT`] transactions.
pub fn brute_force_serializable(h: &[CommittedTxn]) -> Result<bool> {
    if h.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::HistoryTooLarge(h.len()));
    }
    let mut latest: HashMap<KeyId, Timestamp> = HashMap::new();
    let mut used = vec![false; h.len()];
    Ok(search(h, &mut used, &mut latest, 0))
}

fn search(h: &[CommittedTxn], used: &mut [bool], latest: &mut HashMap<KeyId, Timestamp>, placed: usize) -> bool {
    if placed == h.len() {
        return true;
    }
    for i in 0..h.len() {
        if used[i] {
            continue;
        }
        let t = &h[i];
        let reads_ok = t
            .reads
            .iter()
            .all(|(k, v)| latest.get(k).copied().unwrap_or(Timestamp::LOAD) == *v);
        if !reads_ok {
            continue;
        }
        let saved: Vec<(KeyId, Option<Timestamp>)> = t.writes.iter().map(|(k, _)| (*k, latest.get(k).copied())).collect();
        for &(k, v) in &t.writes {
            latest.insert(k, v);
        }
        used[i] = true;
        if search(h, used, latest, placed + 1) {
            return true;
        }
        used[i] = false;
        for (k, old) in saved.into_iter().rev() {
            match old {
                Some(v) => latest.insert(k, v),
                None => latest.remove(&k),
            };
        }
    }
    false
}

/// Writes a history as JSON Lines in serial order.
pub fn write_history<W: Write>(mut w: W, h: &[CommittedTxn]) -> Result<()> {
    for i in serial_order(h) {
        let line = serde_json::to_string(&h[i]).map_err(|e| Error::Decode(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::Decode(e.to_string()))?;
    }
    Ok(())
}

pub fn read_history<R: BufRead>(r: R) -> Result<Vec<CommittedTxn>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Decode(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line).map_err(|e| Error::Decode(format!("line {}: {e}", n + 1)))?;
        out.push(t);
    }
    Ok(out)
}
