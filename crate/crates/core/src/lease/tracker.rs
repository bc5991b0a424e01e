use crate::types::Timestamp;

use super::AccessStats;

/// Smoothing factor of the inter-arrival EWMA.
pub const EWMA_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

/// Exponentially weighted mean of the gaps between successive accesses.
///
/// The first gap seeds the mean; later gaps update it with weight
/// [`EWMA_ALPHA`]. The mean is undefined until two accesses are seen.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterArrival {
    mean_secs: Option<f64>,
    last_micros: Option<u64>,
    samples: u64,
    out_of_order: u64,
}

impl InterArrival {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, at: Timestamp) {
        let now = at.micros;
        match self.last_micros {
            None => {}
            Some(last) if now < last => {
                self.out_of_order += 1;
                return;
            }
            Some(last) => {
                // a zero gap would collapse the mean to zero
                let gap = (now - last).max(1) as f64 * 1e-6;
                self.mean_secs = Some(match self.mean_secs {
                    None => gap,
                    Some(m) => EWMA_ALPHA * gap + (1.0 - EWMA_ALPHA) * m,
                });
            }
        }
        self.last_micros = Some(now);
        self.samples += 1;
    }

    /// Mean gap in seconds once at least two accesses were recorded.
    pub fn mean_secs(&self) -> Option<f64> {
        self.mean_secs
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn out_of_order(&self) -> u64 {
        self.out_of_order
    }
}

/// Read and write trackers for a single key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccessRecorder {
    pub reads: InterArrival,
    pub writes: InterArrival,
}

impl AccessRecorder {
    pub fn record_access(&mut self, now: Timestamp, kind: AccessKind) {
        match kind {
            AccessKind::Read => self.reads.record(now),
            AccessKind::Write => self.writes.record(now),
        }
    }

    /// Model inputs, available once the read tracker has warmed up. A
    /// write tracker that has not warmed up reads as "never written".
    pub fn stats(&self) -> Option<AccessStats> {
        let r = self.reads.mean_secs()?;
        let w = self.writes.mean_secs().unwrap_or(f64::INFINITY);
        AccessStats::new(r, w).ok()
    }
}
