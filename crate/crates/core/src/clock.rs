//! Per-node physical clock with a fixed skew from simulation true time.

use crate::types::{NodeId, Timestamp};

/// Clock owned by one node. `now` maps true simulation time to a skewed
/// local timestamp; the sequence counter never resets, so every timestamp a
/// node issues is unique.
#[derive(Debug, Clone)]
pub struct SkewedClock {
    node: NodeId,
    skew_micros: i64,
    seq: u64,
    last_micros: u64,
}

impl SkewedClock {
    pub fn new(node: NodeId, skew_micros: i64) -> Self {
        Self { node, skew_micros, seq: 0, last_micros: 0 }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn skew_micros(&self) -> i64 {
        self.skew_micros
    }

    /// Local micros for `true_time` without issuing a timestamp.
    pub fn local_micros(&self, true_time: u64) -> u64 {
        let local = (true_time as i128 + self.skew_micros as i128).max(0) as u64;
        local.max(self.last_micros)
    }

    /// True time at which this clock reads `local_micros`.
    pub fn true_time_of(&self, local_micros: u64) -> u64 {
        (local_micros as i128 - self.skew_micros as i128).max(0) as u64
    }

    pub fn now(&mut self, true_time: u64) -> Timestamp {
        let micros = self.local_micros(true_time);
        self.last_micros = micros;
        let ts = Timestamp::new(micros, self.node, self.seq);
        self.seq += 1;
        ts
    }
}

/// Draws per-node skews uniformly in `[-max, +max]`.
pub fn draw_skews<R: rand::Rng>(rng: &mut R, nodes: usize, max_skew_micros: i64) -> Vec<i64> {
    (0..nodes)
        .map(|_| {
            if max_skew_micros == 0 {
                0
            } else {
                rng.random_range(-max_skew_micros..=max_skew_micros)
            }
        })
        .collect()
}
