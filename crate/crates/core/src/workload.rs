//! Transactional YCSB-style workload: zipfian key popularity with separate
//! skew for read-only and read-write transactions, Poisson arrivals.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{KeyId, TxnKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub n_keys: u64,
    pub keys_per_txn: usize,
    pub read_only_ratio: f64,
    pub alpha_r: f64,
    pub alpha_rw: f64,
    /// Offered transactions per second per client.
    pub rate_per_client: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            n_keys: 100_000,
            keys_per_txn: 4,
            read_only_ratio: 0.9,
            alpha_r: 0.99,
            alpha_rw: 0.5,
            rate_per_client: 2000.0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_keys == 0 {
            return Err(Error::Config("workload.n_keys must be positive".into()));
        }
        if self.keys_per_txn == 0 {
            return Err(Error::Config("workload.keys_per_txn must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.read_only_ratio) {
            return Err(Error::Config("workload.read_only_ratio must lie in [0, 1]".into()));
        }
        if !(self.alpha_r >= 0.0 && self.alpha_rw >= 0.0) {
            return Err(Error::Config("zipf exponents must be non-negative".into()));
        }
        if !(self.rate_per_client > 0.0 && self.rate_per_client.is_finite()) {
            return Err(Error::Config("workload.rate_per_client must be positive".into()));
        }
        Ok(())
    }
}

/// Zipf distribution over ranks `1..=n` by inverse-CDF lookup.
#[derive(Debug, Clone)]
pub struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    pub fn new(alpha: f64, n: u64) -> Self {
        assert!(n >= 1, "zipf needs at least one rank");
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += (k as f64).powf(-alpha);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        *cdf.last_mut().expect("n >= 1") = 1.0;
        Self { cdf }
    }

    pub fn n(&self) -> u64 {
        self.cdf.len() as u64
    }

    /// Probability mass of `rank` (1-based).
    pub fn mass(&self, rank: u64) -> f64 {
        let i = (rank - 1) as usize;
        if i == 0 {
            self.cdf[0]
        } else {
            self.cdf[i] - self.cdf[i - 1]
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        self.cdf.partition_point(|c| *c <= u).min(self.cdf.len() - 1) as u64 + 1
    }
}

/// Shared key popularity: rank-to-key permutation plus both zipf tables.
#[derive(Debug)]
pub struct KeySpace {
    by_rank: Vec<KeyId>,
    zipf_r: Zipf,
    zipf_rw: Zipf,
}

impl KeySpace {
    pub fn new(cfg: &WorkloadConfig, seed: u64) -> Self {
        let mut by_rank: Vec<KeyId> = (0..cfg.n_keys).map(KeyId).collect();
        by_rank.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { by_rank, zipf_r: Zipf::new(cfg.alpha_r, cfg.n_keys), zipf_rw: Zipf::new(cfg.alpha_rw, cfg.n_keys) }
    }

    pub fn key_at_rank(&self, rank: u64) -> KeyId {
        self.by_rank[(rank - 1) as usize]
    }

    pub fn zipf(&self, kind: TxnKind) -> &Zipf {
        match kind {
            TxnKind::ReadOnly => &self.zipf_r,
            TxnKind::ReadWrite => &self.zipf_rw,
        }
    }

    /// The most popular `fraction` of keys (at least one).
    pub fn hottest(&self, fraction: f64) -> HashSet<KeyId> {
        let n = ((self.by_rank.len() as f64 * fraction).round() as usize).clamp(1, self.by_rank.len());
        self.by_rank[..n].iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.by_rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_rank.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnSpec {
    pub kind: TxnKind,
    /// Distinct keys. Read-only transactions read each; read-write
    /// transactions read and then write each.
    pub keys: Vec<KeyId>,
}

/// Per-client generator, seeded independently from the master seed.
#[derive(Debug)]
pub struct WorkloadGen {
    space: Arc<KeySpace>,
    cfg: WorkloadConfig,
    rng: ChaCha8Rng,
    gap: Exp<f64>,
}

impl WorkloadGen {
    pub fn new(space: Arc<KeySpace>, cfg: WorkloadConfig, seed: u64) -> Self {
        let gap = Exp::new(cfg.rate_per_client).expect("rate validated positive");
        Self { space, cfg, rng: ChaCha8Rng::seed_from_u64(seed), gap }
    }

    pub fn next_txn(&mut self) -> TxnSpec {
        let kind = if self.rng.random::<f64>() < self.cfg.read_only_ratio {
            TxnKind::ReadOnly
        } else {
            TxnKind::ReadWrite
        };
        let want = self.cfg.keys_per_txn.min(self.space.len());
        let mut keys = Vec::with_capacity(want);
        while keys.len() < want {
            let key = self.space.key_at_rank(self.space.zipf(kind).sample(&mut self.rng));
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        TxnSpec { kind, keys }
    }

    /// Microseconds until the next arrival (at least 1).
    pub fn next_gap_micros(&mut self) -> u64 {
        let secs = self.gap.sample(&mut self.rng);
        ((secs * 1e6).round() as u64).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rank_always_one() {
        let z = Zipf::new(0.99, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| z.sample(&mut rng) == 1));
    }

    #[test]
    fn rank_one_frequency_matches_mass() {
        let n = 100_000;
        let z = Zipf::new(0.99, n);
        let h: f64 = (1..=n).map(|k| 1.0 / (k as f64).powf(0.99)).sum();
        let mass = 1.0 / h;
        assert!((z.mass(1) - mass).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 1_000_000;
        let hits = (0..draws).filter(|_| z.sample(&mut rng) == 1).count();
        let freq = hits as f64 / draws as f64;
        assert!((freq - mass).abs() / mass < 0.02, "{freq} vs {mass}");
    }

    #[test]
    fn alpha_zero_is_uniform() {
        let n = 10u64;
        let z = Zipf::new(0.0, n);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let mut counts = vec![0u64; n as usize];
        for _ in 0..draws {
            counts[(z.sample(&mut rng) - 1) as usize] += 1;
        }
        let expect = draws as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 9 degrees of freedom, 99.9th percentile
        assert!(chi2 < 27.88, "chi2 {chi2}");
    }

    #[test]
    fn hotter_alpha_shrinks_hot_key_gap() {
        // inter-read time of the hottest key scales with 1 / mass(1)
        let n = 100_000u64;
        let harmonic = |a: f64| (1..=n).map(|k| (k as f64).powf(-a)).sum::<f64>();
        let ratio = Zipf::new(1.2, n).mass(1) / Zipf::new(0.8, n).mass(1);
        assert!((ratio - harmonic(0.8) / harmonic(1.2)).abs() < 1e-9 * ratio, "{ratio}");
        // frozen from the direct sum; grows toward ~26 at 20M keys
        assert!((ratio - 8.9486).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn read_only_ratio_extremes() {
        let space = Arc::new(KeySpace::new(&WorkloadConfig { n_keys: 1000, ..Default::default() }, 1));
        let cfg = WorkloadConfig { n_keys: 1000, read_only_ratio: 1.0, ..Default::default() };
        let mut g = WorkloadGen::new(space.clone(), cfg, 9);
        assert!((0..1000).all(|_| g.next_txn().kind == TxnKind::ReadOnly));
        let cfg = WorkloadConfig { n_keys: 1000, read_only_ratio: 0.0, ..Default::default() };
        let mut g = WorkloadGen::new(space, cfg, 9);
        assert!((0..1000).all(|_| g.next_txn().kind == TxnKind::ReadWrite));
    }

    #[test]
    fn keys_are_distinct() {
        let cfg = WorkloadConfig { n_keys: 6, keys_per_txn: 4, alpha_r: 3.0, ..Default::default() };
        let mut g = WorkloadGen::new(Arc::new(KeySpace::new(&cfg, 2)), cfg, 4);
        for _ in 0..1000 {
            let mut keys = g.next_txn().keys;
            keys.sort();
            keys.dedup();
            assert_eq!(keys.len(), 4);
        }
    }

    #[test]
    fn offered_rate_is_respected() {
        let cfg = WorkloadConfig { rate_per_client: 2000.0, n_keys: 100, ..Default::default() };
        let mut g = WorkloadGen::new(Arc::new(KeySpace::new(&cfg, 2)), cfg, 11);
        let n = 200_000;
        let total: u64 = (0..n).map(|_| g.next_gap_micros()).sum();
        let rate = n as f64 / (total as f64 * 1e-6);
        assert!((rate - 2000.0).abs() / 2000.0 < 0.01, "{rate}");
    }

    #[test]
    fn hottest_fraction_size() {
        let space = KeySpace::new(&WorkloadConfig::default(), 1);
        assert_eq!(space.hottest(0.01).len(), 1000);
        assert!(space.hottest(0.01).contains(&space.key_at_rank(1)));
    }
}
