use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    schedule_on, BackendKind, FabricBackend, FabricError, LinkEntry, LinkKey, LinkParams, PacketEvent, ScheduleResult,
};

/// Filter-chain link table: every insert walks all installed filters looking
/// for duplicates before it appends, and packets are classified by walking
/// the chain. All operations hold one global lock, so filters cannot be
/// created in parallel.
pub struct ScanBackend {
    machines: usize,
    state: Mutex<ScanState>,
}

struct ScanState {
    // packed keys kept contiguous so the duplicate check is a tight loop
    keys: Vec<u64>,
    entries: Vec<(LinkKey, LinkEntry)>,
    rng: ChaCha8Rng,
}

impl ScanState {
    fn find(&self, key: LinkKey) -> Option<usize> {
        let packed = key.packed();
        self.keys.iter().position(|&k| k == packed)
    }
}

impl ScanBackend {
    pub fn new(machines: usize, seed: u64) -> Self {
        Self {
            machines,
            state: Mutex::new(ScanState {
                keys: Vec::new(),
                entries: Vec::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ScanState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl FabricBackend for ScanBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scan
    }

    fn machine_count(&self) -> usize {
        self.machines
    }

    fn set_link(&self, key: LinkKey, params: LinkParams) {
        let mut state = self.lock();
        let packed = key.packed();
        // full pass over the chain, no early exit
        let duplicates = state.keys.iter().filter(|&&k| k == packed).count();
        if duplicates > 0 {
            let idx = state.find(key).expect("duplicate present");
            state.entries[idx].1.update(params);
        } else {
            state.keys.push(packed);
            state.entries.push((key, LinkEntry::new(params)));
        }
    }

    fn remove_link(&self, key: LinkKey) -> bool {
        let mut state = self.lock();
        match state.find(key) {
            Some(idx) => {
                state.keys.remove(idx);
                state.entries.remove(idx);
                true
            }
            None => false,
        }
    }

    fn get_link(&self, key: LinkKey) -> Option<LinkParams> {
        let state = self.lock();
        state.find(key).map(|i| state.entries[i].1.params)
    }

    fn schedule_packet(&self, pkt: &PacketEvent) -> Result<ScheduleResult, FabricError> {
        let mut guard = self.lock();
        let state = &mut *guard;
        match state.find(pkt.link) {
            Some(idx) => schedule_on(&mut state.entries[idx].1, &mut state.rng, pkt),
            None => Ok(ScheduleResult::NoRoute),
        }
    }

    fn table(&self) -> BTreeMap<LinkKey, LinkParams> {
        self.lock().entries.iter().map(|(k, e)| (*k, e.params)).collect()
    }

    fn len(&self) -> usize {
        self.lock().entries.len()
    }
}
