//! Watermark and garbage-collection horizon bookkeeping.
//!
//! Each client reports a local watermark (every read-write transaction it
//! coordinates with a commit timestamp at or below it has finished phase
//! two) and its cache freshness. The registry folds the reports into the
//! global watermark and the GC horizon and pushes both to clients and
//! validators.

use crate::types::Timestamp;

/// Largest timestamp below every in-flight commit timestamp, or
/// `local_now` when nothing is in flight.
pub fn local_watermark<I>(in_flight_commits: I, local_now: Timestamp) -> Timestamp
where
    I: IntoIterator<Item = Timestamp>,
{
    match in_flight_commits.into_iter().min() {
        Some(t) => t.tick_before().min(local_now),
        None => local_now,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientReport {
    pub local_watermark: Timestamp,
    pub c_freshness: Timestamp,
}

/// Registry-side fold. Both outputs only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WatermarkState {
    pub global_watermark: Timestamp,
    pub ts_gc: Timestamp,
}

impl WatermarkState {
    /// Folds one round of reports. With no reports the state is unchanged.
    pub fn broadcast_round<I>(&mut self, reports: I) -> (Timestamp, Timestamp)
    where
        I: IntoIterator<Item = ClientReport>,
    {
        let mut gw: Option<Timestamp> = None;
        let mut gc: Option<Timestamp> = None;
        for r in reports {
            gw = Some(gw.map_or(r.local_watermark, |g| g.min(r.local_watermark)));
            gc = Some(gc.map_or(r.c_freshness, |g| g.min(r.c_freshness)));
        }
        if let Some(g) = gw {
            self.global_watermark = self.global_watermark.max(g);
        }
        if let Some(g) = gc {
            self.ts_gc = self.ts_gc.max(g);
        }
        (self.global_watermark, self.ts_gc)
    }
}
