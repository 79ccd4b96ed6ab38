use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    schedule_on, BackendKind, FabricBackend, FabricError, LinkEntry, LinkKey, LinkParams, PacketEvent, ScheduleResult,
};
use crate::topology::MachineId;

/// Hash-map link tables with expected constant-time upserts and lookups,
/// modelled on the per-host eBPF map an egress filter consults: each source
/// machine has its own map keyed by destination.
pub struct HashBackend {
    machines: usize,
    state: Mutex<HashState>,
}

struct HashState {
    hosts: Vec<HashMap<MachineId, LinkEntry>>,
    per_host_capacity: usize,
    len: usize,
    rng: ChaCha8Rng,
}

impl HashState {
    fn host_mut(&mut self, src: MachineId) -> &mut HashMap<MachineId, LinkEntry> {
        let i = src.0 as usize;
        if i >= self.hosts.len() {
            self.hosts.resize_with(i + 1, HashMap::new);
        }
        &mut self.hosts[i]
    }
}

impl HashBackend {
    pub fn new(machines: usize, seed: u64) -> Self {
        Self::with_capacity(machines, seed, 0)
    }

    /// Preallocate room for `per_host` destinations in every host map, as a
    /// BPF hash map is sized up front.
    pub fn with_capacity(machines: usize, seed: u64, per_host: usize) -> Self {
        Self {
            machines,
            state: Mutex::new(HashState {
                hosts: (0..machines).map(|_| HashMap::with_capacity(per_host)).collect(),
                per_host_capacity: per_host,
                len: 0,
                rng: ChaCha8Rng::seed_from_u64(seed),
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl FabricBackend for HashBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Hash
    }

    fn machine_count(&self) -> usize {
        self.machines
    }

    fn set_link(&self, key: LinkKey, params: LinkParams) {
        let mut state = self.lock();
        let cap = state.per_host_capacity;
        let host = state.host_mut(key.src);
        if host.capacity() == 0 {
            host.reserve(cap);
        }
        let mut added = false;
        host.entry(key.dst).and_modify(|e| e.update(params)).or_insert_with(|| {
            added = true;
            LinkEntry::new(params)
        });
        state.len += usize::from(added);
    }

    fn remove_link(&self, key: LinkKey) -> bool {
        let mut state = self.lock();
        let removed = state
            .hosts
            .get_mut(key.src.0 as usize)
            .is_some_and(|h| h.remove(&key.dst).is_some());
        state.len -= usize::from(removed);
        removed
    }

    fn get_link(&self, key: LinkKey) -> Option<LinkParams> {
        let state = self.lock();
        state.hosts.get(key.src.0 as usize)?.get(&key.dst).map(|e| e.params)
    }

    fn schedule_packet(&self, pkt: &PacketEvent) -> Result<ScheduleResult, FabricError> {
        let mut guard = self.lock();
        let HashState { hosts, rng, .. } = &mut *guard;
        match hosts
            .get_mut(pkt.link.src.0 as usize)
            .and_then(|h| h.get_mut(&pkt.link.dst))
        {
            Some(entry) => schedule_on(entry, rng, pkt),
            None => Ok(ScheduleResult::NoRoute),
        }
    }

    fn table(&self) -> BTreeMap<LinkKey, LinkParams> {
        let state = self.lock();
        state
            .hosts
            .iter()
            .enumerate()
            .flat_map(|(src, host)| {
                host.iter()
                    .map(move |(dst, e)| (LinkKey::new(src as u32, dst.0), e.params))
            })
            .collect()
    }

    fn len(&self) -> usize {
        self.lock().len
    }
}
