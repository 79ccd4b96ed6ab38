use std::time::Instant;

use super::{BackendKind, FabricBackend, HashBackend, LinkKey, LinkParams, ScanBackend};
use crate::telemetry::nearest_rank;

/// Timings of individual `set_link` calls during full-mesh setup.
#[derive(Debug, Clone)]
pub struct SetupStats {
    pub kind: BackendKind,
    pub machines: usize,
    pub repetitions: usize,
    /// Every timed call across all repetitions, in call order.
    pub durations_ns: Vec<u64>,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    /// Mean total time of one complete setup.
    pub total_ns: u64,
}

fn bench_params(src: u32, dst: u32) -> LinkParams {
    let delay = (u64::from(src) * 7919 + u64::from(dst) * 104_729) % 50_000;
    LinkParams::new(delay, Some(100_000), 0).expect("valid params")
}

/// Time `set_link` for all `n * (n - 1)` ordered pairs on a fresh backend,
/// `repetitions` times. Single-threaded so timings stay comparable.
pub fn bench_setup(kind: BackendKind, n: usize, repetitions: usize) -> SetupStats {
    assert!(n >= 2, "setup benchmark needs at least two machines");
    let reps = repetitions.max(1);
    let links = n * (n - 1);
    let mut durations_ns = Vec::with_capacity(links * reps);

    for _ in 0..reps {
        let backend: Box<dyn FabricBackend> = match kind {
            BackendKind::Hash => Box::new(HashBackend::with_capacity(n, 0, n - 1)),
            BackendKind::Scan => Box::new(ScanBackend::new(n, 0)),
        };
        for src in 0..n as u32 {
            for dst in (0..n as u32).filter(|&d| d != src) {
                let key = LinkKey::new(src, dst);
                let params = bench_params(src, dst);
                let start = Instant::now();
                backend.set_link(key, params);
                durations_ns.push(start.elapsed().as_nanos() as u64);
            }
        }
        debug_assert_eq!(backend.len(), links);
    }

    let sum: u128 = durations_ns.iter().map(|&d| u128::from(d)).sum();
    let mut sorted = durations_ns.clone();
    sorted.sort_unstable();
    SetupStats {
        kind,
        machines: n,
        repetitions: reps,
        mean_ns: sum as f64 / durations_ns.len() as f64,
        p50_ns: nearest_rank(&sorted, 50.0),
        p99_ns: nearest_rank(&sorted, 99.0),
        total_ns: (sum / reps as u128) as u64,
        durations_ns,
    }
}
