//! Source-to-sink latency measurement over imperfect clocks.
//!
//! Sources stamp each message with their local clock. Sinks subtract that
//! stamp from their own reading and correct the result with offsets
//! estimated from a two-way timestamp exchange.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TelemetryError {
    #[error("exchange timestamps out of order: {0}")]
    Ordering(&'static str),
    #[error("sequence {seq} of source {source_id} is not above {last}")]
    Sequence { source_id: u32, seq: u64, last: u64 },
    #[error("no samples to summarize")]
    Empty,
}

/// Local clock with a fixed offset and a linear drift.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClockModel {
    pub offset_us: i64,
    pub drift_ppm: f64,
}

impl ClockModel {
    pub fn new(offset_us: i64, drift_ppm: f64) -> Self {
        Self { offset_us, drift_ppm }
    }

    pub fn perfect() -> Self {
        Self::default()
    }

    /// Reading of this clock at true time `true_time_us`.
    pub fn reading(&self, true_time_us: u64) -> i64 {
        let drift = (true_time_us as f64 * self.drift_ppm / 1e6).round() as i64;
        true_time_us as i64 + self.offset_us + drift
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageStamp {
    pub source: u32,
    pub seq: u64,
    pub source_timestamp_us: i64,
}

/// Timestamp a message would carry if sent at `true_time_us`.
pub fn stamp(clock: &ClockModel, true_time_us: u64) -> i64 {
    clock.reading(true_time_us)
}

/// Per-source stamper enforcing strictly increasing sequence numbers.
#[derive(Debug, Clone)]
pub struct Source {
    id: u32,
    clock: ClockModel,
    last_seq: Option<u64>,
}

impl Source {
    pub fn new(id: u32, clock: ClockModel) -> Self {
        Self {
            id,
            clock,
            last_seq: None,
        }
    }

    pub fn clock(&self) -> &ClockModel {
        &self.clock
    }

    /// Stamp the next message with the next sequence number.
    pub fn next(&mut self, true_time_us: u64) -> MessageStamp {
        let seq = self.last_seq.map_or(0, |s| s + 1);
        self.stamp_with(seq, true_time_us).expect("fresh sequence number")
    }

    pub fn stamp_with(&mut self, seq: u64, true_time_us: u64) -> Result<MessageStamp, TelemetryError> {
        if let Some(last) = self.last_seq {
            if seq <= last {
                return Err(TelemetryError::Sequence {
                    source_id: self.id,
                    seq,
                    last,
                });
            }
        }
        self.last_seq = Some(seq);
        Ok(MessageStamp {
            source: self.id,
            seq,
            source_timestamp_us: stamp(&self.clock, true_time_us),
        })
    }
}

/// Two-way offset estimate `((t2 - t1) + (t3 - t4)) / 2`, rounded toward zero.
///
/// `t1`/`t4` are the requester's send and receive times on its own clock,
/// `t2`/`t3` the responder's receive and send times on its clock. The result
/// is the responder's offset relative to the requester.
pub fn estimate_offset(t1: i64, t2: i64, t3: i64, t4: i64) -> Result<i64, TelemetryError> {
    if t4 < t1 {
        return Err(TelemetryError::Ordering("t4 precedes t1"));
    }
    if t3 < t2 {
        return Err(TelemetryError::Ordering("t3 precedes t2"));
    }
    let sum = i128::from(t2) - i128::from(t1) + i128::from(t3) - i128::from(t4);
    Ok((sum / 2) as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatencySample {
    pub source: u32,
    pub seq: u64,
    pub raw_latency_us: i64,
    pub corrected_latency_us: i64,
}

impl LatencySample {
    /// Negative corrected latency means the offset estimates are wrong.
    pub fn is_anomalous(&self) -> bool {
        self.corrected_latency_us < 0
    }
}

pub fn sink_latency(
    stamp: &MessageStamp,
    sink_reading_us: i64,
    source_offset_us: i64,
    sink_offset_us: i64,
) -> LatencySample {
    let raw = sink_reading_us - stamp.source_timestamp_us;
    LatencySample {
        source: stamp.source,
        seq: stamp.seq,
        raw_latency_us: raw,
        corrected_latency_us: raw - (sink_offset_us - source_offset_us),
    }
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p / 100 * n)`.
pub fn nearest_rank<T: Copy>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty(), "percentile of an empty set");
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub p50: i64,
    pub p95: i64,
    pub p99: i64,
    pub min: i64,
    pub max: i64,
}

pub fn summarize(values: &[i64]) -> Result<Summary, TelemetryError> {
    if values.is_empty() {
        return Err(TelemetryError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let sum: i128 = sorted.iter().map(|&v| i128::from(v)).sum();
    Ok(Summary {
        count: sorted.len(),
        mean: sum as f64 / sorted.len() as f64,
        p50: nearest_rank(&sorted, 50.0),
        p95: nearest_rank(&sorted, 95.0),
        p99: nearest_rank(&sorted, 99.0),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}

/// Write samples as `source,seq,raw_latency_us,corrected_latency_us`.
pub fn write_samples_csv<W: Write>(samples: &[LatencySample], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
