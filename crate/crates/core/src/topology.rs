//! Logical topology graphs and their full-mesh reduction.
//!
//! Emulating a multi-hop path between two machines is done with a single
//! direct link that carries the summed latency and the minimum bandwidth of
//! the chosen logical path. Successive meshes are diffed into link updates.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bandwidth reported for a path with no constraining edge.
pub const UNLIMITED_KBPS: u64 = u64::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("node {node} is not part of a snapshot with {count} nodes")]
    UnknownNode { node: usize, count: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge between {0} and {1}")]
    DuplicateEdge(usize, usize),
    #[error("edge between {0} and {1} has zero bandwidth")]
    ZeroBandwidth(usize, usize),
    #[error("machine set is empty")]
    NoMachines,
    #[error("node {0} listed twice in the machine set")]
    DuplicateMachine(usize),
    #[error("machine sets differ")]
    MachineMismatch,
    #[error("update for pair ({0}, {1}) does not apply: {2}")]
    InvalidUpdate(u32, u32, &'static str),
}

/// Index of a machine within a mesh (position in the machine list).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MachineId(pub u32);

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub latency_us: u64,
    pub bandwidth_kbps: u64,
}

/// Undirected weighted graph over dense node indices `0..node_count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopologySnapshot {
    node_count: usize,
    edges: Vec<Edge>,
    #[serde(skip)]
    adjacency: Vec<Vec<(usize, u64, u64)>>,
}

impl TopologySnapshot {
    pub fn new(node_count: usize, edges: Vec<Edge>) -> Result<Self, TopologyError> {
        let mut seen = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); node_count];
        for e in &edges {
            for n in [e.u, e.v] {
                if n >= node_count {
                    return Err(TopologyError::UnknownNode {
                        node: n,
                        count: node_count,
                    });
                }
            }
            if e.u == e.v {
                return Err(TopologyError::SelfLoop(e.u));
            }
            if e.bandwidth_kbps == 0 {
                return Err(TopologyError::ZeroBandwidth(e.u, e.v));
            }
            if !seen.insert((e.u.min(e.v), e.u.max(e.v))) {
                return Err(TopologyError::DuplicateEdge(e.u, e.v));
            }
            adjacency[e.u].push((e.v, e.latency_us, e.bandwidth_kbps));
            adjacency[e.v].push((e.u, e.latency_us, e.bandwidth_kbps));
        }
        Ok(Self {
            node_count,
            edges,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, u64, u64)] {
        &self.adjacency[node]
    }

    /// Single-source shortest paths by latency.
    ///
    /// Among equal-latency paths the one whose node sequence is
    /// lexicographically smallest wins. Labels are `(latency, path)` pairs
    /// ordered lexicographically; extending a simple path preserves that
    /// order, so Dijkstra over these labels settles each node with its
    /// optimal label.
    pub fn shortest_paths(&self, source: usize) -> Result<Vec<Option<Route>>, TopologyError> {
        if source >= self.node_count {
            return Err(TopologyError::UnknownNode {
                node: source,
                count: self.node_count,
            });
        }
        let n = self.node_count;
        let mut settled = vec![false; n];
        let mut best: Vec<Option<(u64, Vec<u32>)>> = vec![None; n];
        let mut routes: Vec<Option<Route>> = vec![None; n];
        let mut heap = BinaryHeap::new();

        let start = vec![source as u32];
        best[source] = Some((0, start.clone()));
        heap.push(Reverse((0u64, start, UNLIMITED_KBPS)));

        while let Some(Reverse((dist, path, bw))) = heap.pop() {
            let node = *path.last().expect("non-empty path") as usize;
            if settled[node] {
                continue;
            }
            settled[node] = true;
            for &(next, lat, edge_bw) in &self.adjacency[node] {
                if settled[next] {
                    continue;
                }
                let nd = dist + lat;
                let mut np = Vec::with_capacity(path.len() + 1);
                np.extend_from_slice(&path);
                np.push(next as u32);
                let better = match &best[next] {
                    None => true,
                    Some((bd, bp)) => (nd, &np) < (*bd, bp),
                };
                if better {
                    best[next] = Some((nd, np.clone()));
                    heap.push(Reverse((nd, np, bw.min(edge_bw))));
                }
            }
            routes[node] = Some(Route {
                latency_us: dist,
                bandwidth_kbps: bw,
                path: path.into_iter().map(|x| x as usize).collect(),
            });
        }
        Ok(routes)
    }
}

/// The selected path from a source to one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub latency_us: u64,
    /// Minimum edge bandwidth along `path`; [`UNLIMITED_KBPS`] for the source itself.
    pub bandwidth_kbps: u64,
    pub path: Vec<usize>,
}

/// State of one emulated machine-to-machine link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeshLink {
    Unreachable,
    Reachable { latency_us: u64, bandwidth_kbps: u64 },
}

impl MeshLink {
    pub fn is_reachable(&self) -> bool {
        matches!(self, MeshLink::Reachable { .. })
    }
}

/// Full mesh over a machine set. Links are stored once per unordered pair,
/// so the mesh is symmetric by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MeshSnapshot {
    machines: Vec<usize>,
    links: Vec<MeshLink>,
}

fn pair_count(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

fn pair_slot(m: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < m);
    i * (2 * m - i - 1) / 2 + (j - i - 1)
}

fn check_machines(machines: &[usize]) -> Result<(), TopologyError> {
    if machines.is_empty() {
        return Err(TopologyError::NoMachines);
    }
    let mut seen = BTreeSet::new();
    for &m in machines {
        if !seen.insert(m) {
            return Err(TopologyError::DuplicateMachine(m));
        }
    }
    Ok(())
}

impl MeshSnapshot {
    /// A mesh in which no pair is reachable.
    pub fn unreachable(machines: Vec<usize>) -> Result<Self, TopologyError> {
        check_machines(&machines)?;
        let links = vec![MeshLink::Unreachable; pair_count(machines.len())];
        Ok(Self { machines, links })
    }

    /// Mesh over machines `0..count` identified by position only.
    pub fn anonymous(count: usize) -> Result<Self, TopologyError> {
        Self::unreachable((0..count).collect())
    }

    pub fn machines(&self) -> &[usize] {
        &self.machines
    }

    pub fn machine_count(&self) -> usize {
        self.machines.len()
    }

    /// Link between machines `a` and `b` (order irrelevant). `None` on the diagonal
    /// or out of range.
    pub fn get(&self, a: MachineId, b: MachineId) -> Option<MeshLink> {
        let (i, j) = (a.0 as usize, b.0 as usize);
        let m = self.machines.len();
        if i == j || i >= m || j >= m {
            return None;
        }
        Some(self.links[pair_slot(m, i.min(j), i.max(j))])
    }

    pub fn set(&mut self, a: MachineId, b: MachineId, link: MeshLink) -> Result<(), TopologyError> {
        let (i, j) = (a.0 as usize, b.0 as usize);
        let m = self.machines.len();
        if i == j || i >= m || j >= m {
            return Err(TopologyError::InvalidUpdate(a.0, b.0, "pair outside the mesh"));
        }
        self.links[pair_slot(m, i.min(j), i.max(j))] = link;
        Ok(())
    }

    /// All pairs `(a, b)` with `a < b` in ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = (MachineId, MachineId, MeshLink)> + '_ {
        let m = self.machines.len() as u32;
        (0..m)
            .flat_map(move |a| (a + 1..m).map(move |b| (MachineId(a), MachineId(b))))
            .zip(self.links.iter())
            .map(|((a, b), l)| (a, b, *l))
    }
}

/// Reduce `snapshot` to a full mesh between `machines` (node indices).
///
/// For each pair the lower-positioned machine is the path source, which
/// fixes the tie-break and keeps the result symmetric.
pub fn reduce_full_mesh(snapshot: &TopologySnapshot, machines: &[usize]) -> Result<MeshSnapshot, TopologyError> {
    check_machines(machines)?;
    for &m in machines {
        if m >= snapshot.node_count() {
            return Err(TopologyError::UnknownNode {
                node: m,
                count: snapshot.node_count(),
            });
        }
    }
    let mut mesh = MeshSnapshot::unreachable(machines.to_vec())?;
    let count = machines.len();
    for i in 0..count {
        if i + 1 == count {
            break;
        }
        let routes = snapshot.shortest_paths(machines[i])?;
        for j in i + 1..count {
            let link = match &routes[machines[j]] {
                Some(r) => MeshLink::Reachable {
                    latency_us: r.latency_us,
                    bandwidth_kbps: r.bandwidth_kbps,
                },
                None => MeshLink::Unreachable,
            };
            mesh.links[pair_slot(count, i, j)] = link;
        }
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeKind {
    Created,
    Removed,
    Modified,
}

/// Incremental change to one mesh pair (`a < b`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkUpdate {
    pub a: MachineId,
    pub b: MachineId,
    pub kind: ChangeKind,
    /// New link value; `MeshLink::Unreachable` for removals.
    pub link: MeshLink,
}

/// Minimal ordered update list turning `prev` into `next`.
pub fn diff(prev: &MeshSnapshot, next: &MeshSnapshot) -> Result<Vec<LinkUpdate>, TopologyError> {
    if prev.machines != next.machines {
        return Err(TopologyError::MachineMismatch);
    }
    let updates = prev
        .pairs()
        .zip(next.links.iter())
        .filter_map(|((a, b, old), &new)| {
            let kind = match (old, new) {
                (o, n) if o == n => return None,
                (MeshLink::Unreachable, _) => ChangeKind::Created,
                (_, MeshLink::Unreachable) => ChangeKind::Removed,
                _ => ChangeKind::Modified,
            };
            Some(LinkUpdate { a, b, kind, link: new })
        })
        .collect();
    Ok(updates)
}

/// Apply `updates` to `mesh`, checking each update against the current state.
pub fn apply(mesh: &MeshSnapshot, updates: &[LinkUpdate]) -> Result<MeshSnapshot, TopologyError> {
    let mut out = mesh.clone();
    for u in updates {
        let current = out
            .get(u.a, u.b)
            .ok_or(TopologyError::InvalidUpdate(u.a.0, u.b.0, "pair outside the mesh"))?;
        let ok = match u.kind {
            ChangeKind::Created => !current.is_reachable() && u.link.is_reachable(),
            ChangeKind::Removed => current.is_reachable() && !u.link.is_reachable(),
            ChangeKind::Modified => current.is_reachable() && u.link.is_reachable(),
        };
        if !ok {
            return Err(TopologyError::InvalidUpdate(
                u.a.0,
                u.b.0,
                "change kind does not match state",
            ));
        }
        out.set(u.a, u.b, u.link)?;
    }
    Ok(out)
}
