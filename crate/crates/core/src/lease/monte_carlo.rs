use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::par::{self, Execution};

/// Independent sub-streams per run; also the batch count for the error bars.
const BATCHES: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloResult {
    pub accesses: u64,
    pub hit_rate: f64,
    pub fresh_hit_rate: f64,
    pub stale_rate: f64,
    /// Batch-means standard error of `fresh_hit_rate`.
    pub fresh_std_err: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    reads: u64,
    hits: u64,
    fresh: u64,
}

/// Simulates exponential read and write arrivals for one key and a fixed
/// lease `d` (all in seconds). Every read miss caches the current version
/// for `d`; a hit is fresh when no write has arrived since the fetch.
///
/// `n_accesses` counts reads. The run is split into fixed sub-streams, so
/// the result for a given seed does not depend on `exec`.
pub fn monte_carlo_fresh_rate(
    r_mean: f64,
    w_mean: f64,
    d: f64,
    n_accesses: u64,
    seed: u64,
    exec: Execution,
) -> MonteCarloResult {
    let batches: Vec<u64> = (0..BATCHES).collect();
    let counts = par::map(exec, &batches, |&b| {
        let share = n_accesses / BATCHES + u64::from(b < n_accesses % BATCHES);
        run_batch(r_mean, w_mean, d, share, seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b)
    });

    let total = counts.iter().fold(Counts::default(), |acc, c| Counts {
        reads: acc.reads + c.reads,
        hits: acc.hits + c.hits,
        fresh: acc.fresh + c.fresh,
    });
    let rate = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let fresh_hit_rate = rate(total.fresh, total.reads);

    let batch_rates: Vec<f64> =
        counts.iter().filter(|c| c.reads > 0).map(|c| rate(c.fresh, c.reads)).collect();
    let fresh_std_err = if batch_rates.len() > 1 {
        let n = batch_rates.len() as f64;
        let mean = batch_rates.iter().sum::<f64>() / n;
        let var = batch_rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };

    MonteCarloResult {
        accesses: total.reads,
        hit_rate: rate(total.hits, total.reads),
        fresh_hit_rate,
        stale_rate: rate(total.hits - total.fresh, total.reads),
        fresh_std_err,
    }
}

fn run_batch(r_mean: f64, w_mean: f64, d: f64, reads: u64, seed: u64) -> Counts {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let read_gap = Exp::new(1.0 / r_mean).expect("positive read rate");
    let write_gap = if w_mean.is_finite() { Some(Exp::new(1.0 / w_mean).expect("positive write rate")) } else { None };

    let mut counts = Counts::default();
    let mut next_read = read_gap.sample(&mut rng);
    let mut next_write = write_gap.map_or(f64::INFINITY, |w| w.sample(&mut rng));
    let mut writes = 0u64;
    let mut cached_until = f64::NEG_INFINITY;
    let mut cached_version = 0u64;

    while counts.reads < reads {
        if next_write < next_read {
            writes += 1;
            next_write += write_gap.map_or(f64::INFINITY, |w| w.sample(&mut rng));
            continue;
        }
        let t = next_read;
        counts.reads += 1;
        if t < cached_until {
            counts.hits += 1;
            if cached_version == writes {
                counts.fresh += 1;
            }
        } else {
            cached_until = t + d;
            cached_version = writes;
        }
        next_read += read_gap.sample(&mut rng);
    }
    counts
}
