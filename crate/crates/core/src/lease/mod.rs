//! Analytical lease-duration model and the ideal-lease search.
//!
//! Reads and writes to a key are modeled as independent Poisson processes.
//! A lease of duration `d` starts at a read miss; every read inside the
//! lease is a hit, and a hit is fresh when no write has arrived since the
//! value was fetched. All durations are in seconds.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod monte_carlo;
mod tracker;

pub use monte_carlo::{monte_carlo_fresh_rate, MonteCarloResult};
pub use tracker::{AccessKind, AccessRecorder, InterArrival, EWMA_ALPHA};

use crate::error::{Error, Result};

/// Upper bound on the number of candidate durations the search evaluates.
pub const MAX_SEARCH_STEPS: u64 = 1_000_000;

/// Lease issued when the write rate is unknown or zero (seconds).
pub const DEFAULT_MAX_LEASE: f64 = 5.0;

/// Mean inter-arrival times feeding the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccessStats {
    /// Per-cache mean time between reads of the key.
    pub r_mean_cache: f64,
    /// Global mean time between writes of the key; `f64::INFINITY` when the
    /// key is never written.
    pub w_mean_global: f64,
}

impl AccessStats {
    pub fn new(r_mean_cache: f64, w_mean_global: f64) -> Result<Self> {
        let stats = Self { r_mean_cache, w_mean_global };
        stats.validate()?;
        Ok(stats)
    }

    pub fn lambda_w(&self) -> f64 {
        if self.w_mean_global.is_infinite() {
            0.0
        } else {
            1.0 / self.w_mean_global
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.r_mean_cache > 0.0 && self.r_mean_cache.is_finite()) {
            return Err(Error::Domain("mean read inter-arrival must be positive and finite"));
        }
        if !(self.w_mean_global > 0.0) {
            return Err(Error::Domain("mean write inter-arrival must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaseDecision {
    pub duration: f64,
    pub predicted_fresh_hit_rate: f64,
}

/// Expected number of reads that land inside a lease of length `d`.
pub fn expected_hits(d: f64, r_mean: f64) -> Result<f64> {
    if !(r_mean > 0.0) {
        return Err(Error::Domain("r_mean must be positive"));
    }
    if !(d >= 0.0) {
        return Err(Error::Domain("lease duration must be non-negative"));
    }
    Ok(d / r_mean)
}

/// Probability that no write arrives within `d`.
pub fn pr_no_update(d: f64, lambda_w: f64) -> Result<f64> {
    if !(d >= 0.0) || !(lambda_w >= 0.0) {
        return Err(Error::Domain("duration and write rate must be non-negative"));
    }
    Ok((-lambda_w * d).exp())
}

/// Probability that at least one write arrives within `d`.
pub fn pr_update(d: f64, lambda_w: f64) -> Result<f64> {
    if !(d >= 0.0) || !(lambda_w >= 0.0) {
        return Err(Error::Domain("duration and write rate must be non-negative"));
    }
    Ok(-(-lambda_w * d).exp_m1())
}

/// Expected time before the first write inside a lease period that does
/// see a write, i.e. `E[W | W < d]` for exponential `W`.
///
/// Evaluated as `1/λ - d/(e^{λd} - 1)`, with a series for small `λd`
/// where the two terms cancel.
pub fn expected_fresh_duration(d: f64, lambda_w: f64) -> Result<f64> {
    if !(d > 0.0) || !(lambda_w > 0.0) || !d.is_finite() {
        return Err(Error::Domain("fresh duration needs d > 0 and a positive write rate"));
    }
    let x = lambda_w * d;
    if x < 1e-2 {
        let x2 = x * x;
        Ok(d * (0.5 - x / 12.0 + x * x2 / 720.0 - x * x2 * x2 / 30240.0))
    } else {
        Ok(1.0 / lambda_w - d / x.exp_m1())
    }
}

/// Overall, fresh and stale hit rates of a lease of duration `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaseRates {
    pub hit_rate: f64,
    pub fresh_hit_rate: f64,
    pub stale_rate: f64,
}

pub fn lease_rates(d: f64, stats: &AccessStats) -> Result<LeaseRates> {
    stats.validate()?;
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::Domain("lease duration must be finite and non-negative"));
    }
    if d == 0.0 {
        return Ok(LeaseRates { hit_rate: 0.0, fresh_hit_rate: 0.0, stale_rate: 0.0 });
    }
    let r = stats.r_mean_cache;
    let lambda = stats.lambda_w();
    let hits = expected_hits(d, r)?;
    let per_lease = hits + 1.0;
    let hit_rate = hits / per_lease;
    if lambda == 0.0 {
        return Ok(LeaseRates { hit_rate, fresh_hit_rate: hit_rate, stale_rate: 0.0 });
    }
    let no_update = pr_no_update(d, lambda)?;
    let update = pr_update(d, lambda)?;
    let d_fresh = expected_fresh_duration(d, lambda)?;
    let fresh_in_stale = expected_hits(d_fresh, r)? / per_lease;
    let stale_in_stale = expected_hits(d - d_fresh, r)? / per_lease;
    Ok(LeaseRates {
        hit_rate,
        fresh_hit_rate: no_update * hit_rate + update * fresh_in_stale,
        stale_rate: stale_in_stale * update,
    })
}

/// Expected fraction of reads served as fresh hits under a lease of `d`.
pub fn fresh_hit_rate(d: f64, stats: &AccessStats) -> Result<f64> {
    Ok(lease_rates(d, stats)?.fresh_hit_rate)
}

/// Expected fraction of reads served as stale hits under a lease of `d`.
pub fn stale_rate(d: f64, stats: &AccessStats) -> Result<f64> {
    Ok(lease_rates(d, stats)?.stale_rate)
}

/// Walks candidate durations `k * r_mean_cache` for `k = 1, 2, ...` and
/// stops at the first candidate whose fresh hit rate drops below the best
/// seen so far.
///
/// A key that is never written has a monotone rate and no interior peak;
/// that case reports [`Error::SearchOverflow`] so callers can apply their
/// maximum-lease policy.
pub fn find_ideal_lease(stats: &AccessStats) -> Result<LeaseDecision> {
    stats.validate()?;
    if stats.lambda_w() == 0.0 {
        return Err(Error::SearchOverflow(MAX_SEARCH_STEPS));
    }
    let mut best = LeaseDecision { duration: 0.0, predicted_fresh_hit_rate: 0.0 };
    let mut hits_per_lease = 1u64;
    loop {
        if hits_per_lease > MAX_SEARCH_STEPS {
            return Err(Error::SearchOverflow(MAX_SEARCH_STEPS));
        }
        let duration = hits_per_lease as f64 * stats.r_mean_cache;
        let rate = fresh_hit_rate(duration, stats)?;
        if rate < best.predicted_fresh_hit_rate {
            return Ok(best);
        }
        best = LeaseDecision { duration, predicted_fresh_hit_rate: rate };
        hits_per_lease += 1;
    }
}

/// Largest duration whose probability of seeing a write is at most `x`:
/// `d = -ln(1 - x) / λ`. `None` when the write rate is unknown.
pub fn static_lease_for_p(x: f64, w_mean_global: Option<f64>) -> Result<Option<f64>> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain("P(x) needs 0 < x < 1"));
    }
    Ok(match w_mean_global {
        Some(w) if w > 0.0 && w.is_finite() => Some(-(-x).ln_1p() * w),
        _ => None,
    })
}

/// How a client sizes the lease of a freshly fetched key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeasePolicy {
    /// Peak of the fresh-hit-rate model.
    Ideal,
    /// Fixed probability `x` of a write landing inside the lease.
    Static(f64),
    /// Lease equal to the mean inter-write time.
    Mean,
}

impl LeasePolicy {
    /// Lease duration in seconds; zero means "do not cache".
    ///
    /// `r_mean` is `None` until the client's read tracker has warmed up and
    /// `w_mean` is `None` while the server has not seen enough writes.
    pub fn duration(&self, r_mean: Option<f64>, w_mean: Option<f64>, max_lease: f64) -> f64 {
        let d = match *self {
            LeasePolicy::Ideal => {
                let Some(r) = r_mean else { return 0.0 };
                let w = w_mean.unwrap_or(f64::INFINITY);
                match AccessStats::new(r, w).and_then(|s| find_ideal_lease(&s)) {
                    Ok(decision) => decision.duration,
                    Err(Error::SearchOverflow(_)) => max_lease,
                    Err(_) => 0.0,
                }
            }
            LeasePolicy::Static(x) => static_lease_for_p(x, w_mean).ok().flatten().unwrap_or(0.0),
            LeasePolicy::Mean => match w_mean {
                Some(w) if w.is_finite() => w,
                _ => 0.0,
            },
        };
        d.min(max_lease)
    }

    pub fn label(&self) -> String {
        match self {
            LeasePolicy::Ideal => "ideal".to_string(),
            LeasePolicy::Static(x) => format!("P({x})"),
            LeasePolicy::Mean => "mean".to_string(),
        }
    }
}

impl std::str::FromStr for LeasePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "ideal" => Ok(LeasePolicy::Ideal),
            "mean" => Ok(LeasePolicy::Mean),
            _ => {
                let inner = s
                    .strip_prefix("P(")
                    .or_else(|| s.strip_prefix("p("))
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Config(format!("unknown lease policy `{s}`")))?;
                let x: f64 = inner
                    .parse()
                    .map_err(|_| Error::Config(format!("bad probability in `{s}`")))?;
                if !(x > 0.0 && x < 1.0) {
                    return Err(Error::Config(format!("probability out of range in `{s}`")));
                }
                Ok(LeasePolicy::Static(x))
            }
        }
    }
}
