use kairos_core::checker::{check_timestamp_serializable, read_history, write_history};
use kairos_core::config::SimConfig;
use kairos_core::message::MessageKind;
use kairos_core::sim;
use proptest::prelude::*;

fn small(extra: &[&str]) -> SimConfig {
    let mut sets = vec!["sim.committed_target=2000", "sim.warmup_ms=200", "workload.n_keys=5000"];
    sets.extend_from_slice(extra);
    SimConfig::default().with_overrides(&sets).unwrap()
}

#[test]
fn same_seed_same_run() {
    let cfg = small(&["clock.skew_us.max=400", "net.latency=\"exponential\""]);
    let a = sim::run(&cfg).unwrap();
    let b = sim::run(&cfg).unwrap();
    assert_eq!(a.report.event_hash, b.report.event_hash);
    assert_eq!(a.report.events, b.report.events);
    assert_eq!(a.history, b.history);
    assert_eq!(a.report.core, b.report.core);

    let other = sim::run(&cfg.with_overrides(&["sim.seed=2"]).unwrap()).unwrap();
    assert_ne!(a.report.event_hash, other.report.event_hash);
}

#[test]
fn reaches_target_and_checks_clean() {
    for strategy in ["naive", "ei", "lease"] {
        let out = sim::run(&small(&[&format!("cache.strategy=\"{strategy}\"")])).unwrap();
        let r = &out.report;
        assert!(r.committed_measured >= 2000, "{strategy}: {}", r.committed_measured);
        assert!(check_timestamp_serializable(&out.history).is_ok(), "{strategy}");
        assert_eq!(r.audit.split_decisions + r.audit.installed_but_aborted + r.audit.stuck_prepared, 0);
        assert!(r.hit_rate() > 0.0, "{strategy} never hit");
    }
}

#[test]
fn invalidations_only_with_ei() {
    let ei = sim::run(&small(&["cache.strategy=\"ei\""])).unwrap().report;
    let lease = sim::run(&small(&["cache.strategy=\"lease\""])).unwrap().report;
    assert!(ei.message_count(MessageKind::Invalidate) > 0);
    assert_eq!(lease.message_count(MessageKind::Invalidate), 0);
}

#[test]
fn no_cache_means_no_hits() {
    let r = sim::run(&small(&["cache.capacity_fraction=0"])).unwrap().report;
    assert_eq!(r.core.hits, 0);
    assert!(r.core.misses > 0);
    assert_eq!(r.core.stale_hit_aborts, 0);
}

#[test]
fn read_only_workload_never_aborts() {
    let r = sim::run(&small(&["workload.read_only_ratio=1.0"])).unwrap().report;
    assert_eq!(r.aborted(), 0);
    assert_eq!(r.core.committed_rw, 0);
    assert_eq!(r.storage_installs, 0);
}

#[test]
fn arrival_cap_bounds_work() {
    let out = sim::run(&small(&["sim.max_txns_per_client=25", "sim.clients=3", "sim.warmup_ms=0"])).unwrap();
    assert_eq!(out.report.arrivals, 75);
    assert!(out.report.committed() + out.report.aborted() <= 75);
}

#[test]
fn zero_clients_is_an_empty_run() {
    let out = sim::run(&small(&["sim.clients=0"])).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.report.committed(), 0);
}

#[test]
fn replica_outage_keeps_quorum() {
    let cfg = small(&[
        "sim.warmup_ms=0",
        "failure.replica_outages=[{shard=1,replica=2,at_ms=50,down_ms=0}]",
    ]);
    let out = sim::run(&cfg).unwrap();
    assert!(out.report.core.committed_rw > 0);
    assert!(out.report.core.dropped > 0);
    assert!(check_timestamp_serializable(&out.history).is_ok());
}

#[test]
fn warmup_is_excluded_from_counters() {
    let cold = sim::run(&small(&["sim.warmup_ms=0"])).unwrap();
    let warm = sim::run(&small(&["sim.warmup_ms=1000"])).unwrap();
    assert!(warm.history.len() > warm.report.committed() as usize);
    assert!(cold.history.len() as u64 >= cold.report.committed());
}

#[test]
fn history_dump_round_trips() {
    let out = sim::run(&small(&[])).unwrap();
    let mut buf = Vec::new();
    write_history(&mut buf, &out.history).unwrap();
    let back = read_history(buf.as_slice()).unwrap();
    assert_eq!(back.len(), out.history.len());
    let mut again = Vec::new();
    write_history(&mut again, &back).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn trace_is_bounded_and_ordered() {
    let out = sim::run(&small(&["sim.trace=true"])).unwrap();
    let trace = out.trace.expect("trace enabled");
    assert!(!trace.is_empty());
    assert!(trace.windows(2).all(|w| (w[0].time, w[0].seq) < (w[1].time, w[1].seq)));
    assert!(sim::run(&small(&[])).unwrap().trace.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn any_skew_stays_serializable(
        seed in 1u64..1_000,
        skew in 0i64..3_000,
        strategy in prop::sample::select(vec!["naive", "ei", "lease"]),
        alpha in 0.5f64..1.3,
    ) {
        let cfg = SimConfig::default().with_overrides(&[
            format!("sim.seed={seed}"),
            format!("clock.skew_us.max={skew}"),
            format!("cache.strategy=\"{strategy}\""),
            format!("workload.alpha_rw={alpha}"),
            "sim.committed_target=1500".to_string(),
            "sim.warmup_ms=0".to_string(),
            "workload.n_keys=2000".to_string(),
            "cache.capacity_fraction=0.01".to_string(),
            "cache.cacheable_fraction=0.05".to_string(),
        ]).unwrap();
        let out = sim::run(&cfg).unwrap();
        prop_assert!(check_timestamp_serializable(&out.history).is_ok());
        prop_assert_eq!(out.report.audit.split_decisions, 0);
    }
}
