//! Per-link parameter tables with earliest-departure-time packet scheduling.
//!
//! A backend maps directed machine pairs to [`LinkParams`] and schedules
//! packets by stamping departure and delivery times instead of queueing them.
//! Two backends share the scheduling logic and differ only in how they
//! store and look up links: [`HashBackend`] upserts in expected O(1), while
//! [`ScanBackend`] checks every installed filter on each insert the way a
//! classifier chain does.

mod bench;
mod hash;
mod plan;
mod scan;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{ChangeKind, LinkUpdate, MachineId, MeshLink, MeshSnapshot};

pub use bench::{bench_setup, SetupStats};
pub use hash::HashBackend;
pub use plan::{emit_plan, sequential_addressing, Addressing};
pub use scan::ScanBackend;

pub const PPM: u32 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("invalid link parameters: {0}")]
    InvalidParams(String),
    #[error("packet size must be positive")]
    EmptyPacket,
    #[error("timestamp arithmetic overflowed for a {size_bytes}-byte packet")]
    Overflow { size_bytes: u64 },
    #[error("machine {0} has no address")]
    MissingAddress(MachineId),
    #[error("unknown backend kind `{0}`")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLinkParams", into = "RawLinkParams")]
pub struct LinkParams {
    delay_us: u64,
    rate_kbps: Option<u64>,
    loss_ppm: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinkParams {
    delay_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate_kbps: Option<u64>,
    #[serde(default)]
    loss_ppm: u32,
}

impl TryFrom<RawLinkParams> for LinkParams {
    type Error = FabricError;

    fn try_from(raw: RawLinkParams) -> Result<Self, Self::Error> {
        LinkParams::new(raw.delay_us, raw.rate_kbps, raw.loss_ppm)
    }
}

impl From<LinkParams> for RawLinkParams {
    fn from(p: LinkParams) -> Self {
        RawLinkParams {
            delay_us: p.delay_us,
            rate_kbps: p.rate_kbps,
            loss_ppm: p.loss_ppm,
        }
    }
}

impl LinkParams {
    /// `rate_kbps = None` means unlimited. `loss_ppm = 1_000_000` blackholes the link.
    pub fn new(delay_us: u64, rate_kbps: Option<u64>, loss_ppm: u32) -> Result<Self, FabricError> {
        if rate_kbps == Some(0) {
            return Err(FabricError::InvalidParams("rate must be positive".into()));
        }
        if loss_ppm > PPM {
            return Err(FabricError::InvalidParams(format!("loss_ppm {loss_ppm} exceeds {PPM}")));
        }
        Ok(Self {
            delay_us,
            rate_kbps,
            loss_ppm,
        })
    }

    pub fn delay_us(&self) -> u64 {
        self.delay_us
    }

    pub fn rate_kbps(&self) -> Option<u64> {
        self.rate_kbps
    }

    pub fn loss_ppm(&self) -> u32 {
        self.loss_ppm
    }

    pub fn with_delay(self, delay_us: u64) -> Self {
        Self { delay_us, ..self }
    }

    /// Parameters of a reachable mesh link; `None` for unreachable pairs.
    pub fn from_mesh(link: MeshLink) -> Option<Self> {
        match link {
            MeshLink::Unreachable => None,
            MeshLink::Reachable {
                latency_us,
                bandwidth_kbps,
            } => Some(Self {
                delay_us: latency_us,
                rate_kbps: (bandwidth_kbps != crate::topology::UNLIMITED_KBPS).then_some(bandwidth_kbps),
                loss_ppm: 0,
            }),
        }
    }
}

/// Directed link from `src` to destination `dst`; the key backends index by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkKey {
    pub src: MachineId,
    pub dst: MachineId,
}

impl LinkKey {
    pub const fn new(src: u32, dst: u32) -> Self {
        Self {
            src: MachineId(src),
            dst: MachineId(dst),
        }
    }

    pub fn reversed(self) -> Self {
        Self {
            src: self.dst,
            dst: self.src,
        }
    }

    pub(crate) fn packed(self) -> u64 {
        (u64::from(self.src.0) << 32) | u64::from(self.dst.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketEvent {
    pub link: LinkKey,
    pub size_bytes: u64,
    pub submit_time_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleResult {
    Delivered { departure_us: u64, delivery_us: u64 },
    Dropped,
    NoRoute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Hash,
    Scan,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Hash => "hash",
            BackendKind::Scan => "scan",
        })
    }
}

impl FromStr for BackendKind {
    type Err = FabricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hash" => Ok(BackendKind::Hash),
            "scan" => Ok(BackendKind::Scan),
            other => Err(FabricError::UnknownBackend(other.to_string())),
        }
    }
}

/// A link table that paces packets. Implementations serialize all operations
/// on the table, so one instance can be shared across threads.
pub trait FabricBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Number of machines this fabric was built for.
    fn machine_count(&self) -> usize;

    /// Install or replace the parameters of `key`.
    fn set_link(&self, key: LinkKey, params: LinkParams);

    /// Remove `key`; returns whether it was present.
    fn remove_link(&self, key: LinkKey) -> bool;

    fn get_link(&self, key: LinkKey) -> Option<LinkParams>;

    fn schedule_packet(&self, pkt: &PacketEvent) -> Result<ScheduleResult, FabricError>;

    /// Snapshot of the installed links in key order.
    fn table(&self) -> BTreeMap<LinkKey, LinkParams>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn new_backend(kind: BackendKind, machines: usize, seed: u64) -> Box<dyn FabricBackend> {
    match kind {
        BackendKind::Hash => Box::new(HashBackend::new(machines, seed)),
        BackendKind::Scan => Box::new(ScanBackend::new(machines, seed)),
    }
}

/// Apply mesh updates to a backend, installing each pair in both directions.
pub fn apply_mesh_updates(backend: &dyn FabricBackend, updates: &[LinkUpdate]) {
    for u in updates {
        let key = LinkKey { src: u.a, dst: u.b };
        match (u.kind, LinkParams::from_mesh(u.link)) {
            (ChangeKind::Created | ChangeKind::Modified, Some(params)) => {
                backend.set_link(key, params);
                backend.set_link(key.reversed(), params);
            }
            _ => {
                backend.remove_link(key);
                backend.remove_link(key.reversed());
            }
        }
    }
}

/// The table a backend should hold after applying `mesh`.
pub fn expected_table(mesh: &MeshSnapshot) -> BTreeMap<LinkKey, LinkParams> {
    let mut table = BTreeMap::new();
    for (a, b, link) in mesh.pairs() {
        if let Some(params) = LinkParams::from_mesh(link) {
            let key = LinkKey { src: a, dst: b };
            table.insert(key, params);
            table.insert(key.reversed(), params);
        }
    }
    table
}

/// Installed link plus its pacing state.
#[derive(Debug, Clone)]
pub(crate) struct LinkEntry {
    pub params: LinkParams,
    pacer: Pacer,
}

impl LinkEntry {
    pub fn new(params: LinkParams) -> Self {
        Self {
            params,
            pacer: Pacer::default(),
        }
    }

    /// Replace parameters, keeping the departure horizon so FIFO order holds
    /// across reconfiguration.
    pub fn update(&mut self, params: LinkParams) {
        if params.rate_kbps != self.params.rate_kbps {
            self.pacer.rebase();
        }
        self.params = params;
    }
}

/// Exact departure horizon `whole_us + frac / rate_kbps` microseconds.
#[derive(Debug, Clone, Copy, Default)]
struct Pacer {
    whole_us: u64,
    frac: u64,
    last_departure_us: u64,
}

impl Pacer {
    fn rebase(&mut self) {
        self.whole_us = self.last_departure_us;
        self.frac = 0;
    }
}

/// EDT scheduling shared by all backends. Loss is drawn before pacing, so a
/// dropped packet does not occupy the link.
pub(crate) fn schedule_on(
    entry: &mut LinkEntry,
    rng: &mut ChaCha8Rng,
    pkt: &PacketEvent,
) -> Result<ScheduleResult, FabricError> {
    if pkt.size_bytes == 0 {
        return Err(FabricError::EmptyPacket);
    }
    let params = entry.params;
    match params.loss_ppm {
        0 => {}
        PPM => return Ok(ScheduleResult::Dropped),
        ppm => {
            if rng.gen_range(0..PPM) < ppm {
                return Ok(ScheduleResult::Dropped);
            }
        }
    }

    let overflow = FabricError::Overflow {
        size_bytes: pkt.size_bytes,
    };
    let pacer = &mut entry.pacer;
    let departure_us = match params.rate_kbps {
        None => {
            let dep = pkt.submit_time_us.max(pacer.last_departure_us);
            pacer.whole_us = dep;
            pacer.frac = 0;
            dep
        }
        Some(rate) => {
            // start = max(submit, horizon), compared exactly
            let (start_whole, start_frac) =
                if pkt.submit_time_us > pacer.whole_us || (pkt.submit_time_us == pacer.whole_us && pacer.frac == 0) {
                    (pkt.submit_time_us, 0)
                } else {
                    (pacer.whole_us, pacer.frac)
                };
            // size * 8 bits * 1000 / rate_kbps microseconds
            let numer = pkt
                .size_bytes
                .checked_mul(8_000)
                .and_then(|n| n.checked_add(start_frac))
                .ok_or(overflow.clone())?;
            let whole = start_whole.checked_add(numer / rate).ok_or(overflow.clone())?;
            let frac = numer % rate;
            pacer.whole_us = whole;
            pacer.frac = frac;
            // rounded half-up
            let rounded = if frac.checked_mul(2).is_none_or(|f| f >= rate) {
                whole.checked_add(1).ok_or(overflow.clone())?
            } else {
                whole
            };
            rounded.max(pacer.last_departure_us)
        }
    };
    pacer.last_departure_us = departure_us;
    let delivery_us = departure_us.checked_add(params.delay_us).ok_or(overflow)?;
    Ok(ScheduleResult::Delivered {
        departure_us,
        delivery_us,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pkt(size: u64, t: u64) -> PacketEvent {
        PacketEvent {
            link: LinkKey::new(0, 1),
            size_bytes: size,
            submit_time_us: t,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn idle_link_unlimited_rate() {
        let mut e = LinkEntry::new(LinkParams::new(1000, None, 0).unwrap());
        assert_eq!(
            schedule_on(&mut e, &mut rng(), &pkt(1500, 42)).unwrap(),
            ScheduleResult::Delivered {
                departure_us: 42,
                delivery_us: 1042
            }
        );
    }

    #[test]
    fn serialization_time_and_queueing() {
        let mut e = LinkEntry::new(LinkParams::new(0, Some(8000), 0).unwrap());
        let mut r = rng();
        assert_eq!(
            schedule_on(&mut e, &mut r, &pkt(1000, 0)).unwrap(),
            ScheduleResult::Delivered {
                departure_us: 1000,
                delivery_us: 1000
            }
        );
        assert_eq!(
            schedule_on(&mut e, &mut r, &pkt(1000, 0)).unwrap(),
            ScheduleResult::Delivered {
                departure_us: 2000,
                delivery_us: 2000
            }
        );
        // link idle again by t = 5000
        assert_eq!(
            schedule_on(&mut e, &mut r, &pkt(1000, 5000)).unwrap(),
            ScheduleResult::Delivered {
                departure_us: 6000,
                delivery_us: 6000
            }
        );
    }

    #[test]
    fn fractional_serialization_rounds_half_up_without_drift() {
        // 1 byte at 3000 kbps = 8/3 us = 2.667 us per packet
        let mut e = LinkEntry::new(LinkParams::new(0, Some(3000), 0).unwrap());
        let mut r = rng();
        let deps: Vec<u64> = (0..3)
            .map(|_| match schedule_on(&mut e, &mut r, &pkt(1, 0)).unwrap() {
                ScheduleResult::Delivered { departure_us, .. } => departure_us,
                other => panic!("{other:?}"),
            })
            .collect();
        // exact horizons 2.667, 5.333, 8.0
        assert_eq!(deps, vec![3, 5, 8]);
    }

    #[test]
    fn overflow_is_reported() {
        let mut e = LinkEntry::new(LinkParams::new(0, Some(1), 0).unwrap());
        assert!(matches!(
            schedule_on(&mut e, &mut rng(), &pkt(u64::MAX / 2, 0)),
            Err(FabricError::Overflow { .. })
        ));
        let mut e = LinkEntry::new(LinkParams::new(u64::MAX, None, 0).unwrap());
        assert!(matches!(
            schedule_on(&mut e, &mut rng(), &pkt(1, 1)),
            Err(FabricError::Overflow { .. })
        ));
        assert_eq!(
            schedule_on(&mut e, &mut rng(), &pkt(0, 1)),
            Err(FabricError::EmptyPacket)
        );
    }

    #[test]
    fn full_loss_blackholes() {
        let mut e = LinkEntry::new(LinkParams::new(0, None, PPM).unwrap());
        for t in 0..100 {
            assert_eq!(
                schedule_on(&mut e, &mut rng(), &pkt(10, t)).unwrap(),
                ScheduleResult::Dropped
            );
        }
    }

    #[test]
    fn params_validation() {
        assert!(LinkParams::new(0, Some(0), 0).is_err());
        assert!(LinkParams::new(0, None, PPM + 1).is_err());
        let p: LinkParams = toml::from_str("delay_us = 5\nrate_kbps = 10").unwrap();
        assert_eq!((p.delay_us(), p.rate_kbps(), p.loss_ppm()), (5, Some(10), 0));
        assert!(toml::from_str::<LinkParams>("delay_us = 5\nrate_kbps = 0").is_err());
    }

    #[test]
    fn backend_kind_parsing() {
        assert_eq!("hash".parse::<BackendKind>().unwrap(), BackendKind::Hash);
        assert_eq!("scan".parse::<BackendKind>().unwrap(), BackendKind::Scan);
        assert!("tree".parse::<BackendKind>().is_err());
    }
}
