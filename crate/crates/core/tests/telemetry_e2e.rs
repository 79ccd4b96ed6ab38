use orbitmesh::fabric::{new_backend, BackendKind, LinkKey, LinkParams, PacketEvent, ScheduleResult};
use orbitmesh::telemetry::{estimate_offset, sink_latency, summarize, ClockModel, Source};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-way exchange between a reference clock and `node`, with symmetric path delay.
fn exchange(node: &ClockModel, at_us: u64, one_way_us: u64, hold_us: u64) -> i64 {
    let reference = ClockModel::perfect();
    let t1 = reference.reading(at_us);
    let t2 = node.reading(at_us + one_way_us);
    let t3 = node.reading(at_us + one_way_us + hold_us);
    let t4 = reference.reading(at_us + 2 * one_way_us + hold_us);
    estimate_offset(t1, t2, t3, t4).unwrap()
}

#[test]
fn corrected_latency_matches_the_fabric() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let backend = new_backend(BackendKind::Hash, 2, 0);
    let link = LinkKey::new(0, 1);
    backend.set_link(link, LinkParams::new(12_345, Some(50_000), 0).unwrap());

    let src_clock = ClockModel::new(rng.gen_range(-1_000_000..=1_000_000), 0.0);
    let sink_clock = ClockModel::new(rng.gen_range(-1_000_000..=1_000_000), 0.0);
    let src_off = exchange(&src_clock, 0, 800, 30);
    let sink_off = exchange(&sink_clock, 0, 1_700, 5);
    assert_eq!((src_off, sink_off), (src_clock.offset_us, sink_clock.offset_us));

    let mut source = Source::new(0, src_clock);
    let mut errors = Vec::new();
    let mut now = 10_000;
    for _ in 0..500 {
        now += rng.gen_range(0..400);
        let stamp = source.next(now);
        let pkt = PacketEvent {
            link,
            size_bytes: rng.gen_range(64..1500),
            submit_time_us: now,
        };
        let ScheduleResult::Delivered { delivery_us, .. } = backend.schedule_packet(&pkt).unwrap() else {
            panic!("lossless link dropped a packet");
        };
        let sample = sink_latency(&stamp, sink_clock.reading(delivery_us), src_off, sink_off);
        errors.push(sample.corrected_latency_us - (delivery_us - now) as i64);
    }
    let s = summarize(&errors).unwrap();
    assert_eq!((s.min, s.max), (0, 0));
}

#[test]
fn uncorrected_latency_is_off_by_the_offset_difference() {
    let src = ClockModel::new(250_000, 0.0);
    let sink = ClockModel::new(-100_000, 0.0);
    let mut source = Source::new(1, src);
    let stamp = source.next(1_000);
    let s = sink_latency(&stamp, sink.reading(1_900), 0, 0);
    assert_eq!(s.raw_latency_us, 900 - 350_000);
    assert!(s.is_anomalous());
}
