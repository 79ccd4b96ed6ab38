//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use orbitmesh::constellation::{ConstellationConfig, GroundStation, NodeId, PhysicalConstants, Shell};
use orbitmesh::topology::{Edge, MachineId, MeshLink, MeshSnapshot, UNLIMITED_KBPS};
use orbitmesh::tracegen::Scenario;
use rand::seq::SliceRandom;
use rand::Rng;

/// Random connected graph on `n` nodes: a random spanning tree plus extra
/// edges. Latencies come from a small range so equal-latency paths are common.
pub fn random_connected_graph<R: Rng>(rng: &mut R, n: usize) -> Vec<Edge> {
    let mut edges = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut has = vec![vec![false; n]; n];
    let mut add = |u: usize, v: usize, rng: &mut R, edges: &mut Vec<Edge>| {
        if u == v || has[u][v] {
            return;
        }
        has[u][v] = true;
        has[v][u] = true;
        edges.push(Edge {
            u,
            v,
            latency_us: rng.gen_range(0..=6),
            bandwidth_kbps: rng.gen_range(1..=1000),
        });
    };
    for i in 1..n {
        let parent = order[rng.gen_range(0..i)];
        add(order[i], parent, rng, &mut edges);
    }
    let extra = rng.gen_range(0..=n * 2);
    for _ in 0..extra {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        add(u, v, rng, &mut edges);
    }
    edges
}

/// Best simple path from `s` to `t` by exhaustive enumeration: minimum total
/// latency, ties broken by the lexicographically smallest node sequence.
/// Returns `(latency, bottleneck bandwidth, path)`.
pub fn brute_force_route(n: usize, edges: &[Edge], s: usize, t: usize) -> Option<(u64, u64, Vec<usize>)> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.u].push((e.v, e.latency_us, e.bandwidth_kbps));
        adj[e.v].push((e.u, e.latency_us, e.bandwidth_kbps));
    }
    let mut best: Option<(u64, u64, Vec<usize>)> = None;
    let mut path = vec![s];
    let mut on_path = vec![false; n];
    on_path[s] = true;

    fn dfs(
        adj: &[Vec<(usize, u64, u64)>],
        t: usize,
        lat: u64,
        bw: u64,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        best: &mut Option<(u64, u64, Vec<usize>)>,
    ) {
        let here = *path.last().unwrap();
        if here == t {
            let better = match best {
                None => true,
                Some((bl, _, bp)) => (lat, &path[..]) < (*bl, &bp[..]),
            };
            if better {
                *best = Some((lat, bw, path.clone()));
            }
            return;
        }
        for &(next, l, b) in &adj[here] {
            if on_path[next] {
                continue;
            }
            on_path[next] = true;
            path.push(next);
            dfs(adj, t, lat + l, bw.min(b), path, on_path, best);
            path.pop();
            on_path[next] = false;
        }
    }

    dfs(&adj, t, 0, UNLIMITED_KBPS, &mut path, &mut on_path, &mut best);
    best
}

/// Full mesh between `machines` computed with [`brute_force_route`].
pub fn brute_force_mesh(n: usize, edges: &[Edge], machines: &[usize]) -> MeshSnapshot {
    let mut mesh = MeshSnapshot::unreachable(machines.to_vec()).unwrap();
    for i in 0..machines.len() {
        for j in i + 1..machines.len() {
            let link = match brute_force_route(n, edges, machines[i], machines[j]) {
                Some((latency_us, bandwidth_kbps, _)) => MeshLink::Reachable {
                    latency_us,
                    bandwidth_kbps,
                },
                None => MeshLink::Unreachable,
            };
            mesh.set(MachineId(i as u32), MachineId(j as u32), link).unwrap();
        }
    }
    mesh
}

/// Small random constellation with a few ground stations, and a random
/// machine subset (always at least two machines).
pub fn random_scenario<R: Rng>(rng: &mut R) -> Scenario {
    let shell_count = rng.gen_range(1..=2);
    let shells = (0..shell_count)
        .map(|_| {
            let planes = rng.gen_range(1..=4);
            Shell {
                planes,
                sats_per_plane: rng.gen_range(2..=5),
                altitude_km: rng.gen_range(400.0..1200.0),
                inclination_rad: rng.gen_range(30.0f64..98.0).to_radians(),
                phasing_factor: rng.gen_range(0..planes),
                max_isl_length_km: if rng.gen_bool(0.3) {
                    Some(rng.gen_range(2000.0..8000.0))
                } else {
                    None
                },
            }
        })
        .collect();
    let station_count = rng.gen_range(1..=3);
    let ground_stations = (0..station_count)
        .map(|i| {
            let mut gs = GroundStation::new(
                format!("gs{i}"),
                rng.gen_range(-PI / 2.5..PI / 2.5),
                rng.gen_range(-PI..PI),
            );
            gs.min_elevation_rad = rng.gen_range(5.0f64..40.0).to_radians();
            gs
        })
        .collect();
    let constellation = ConstellationConfig {
        constants: PhysicalConstants::default(),
        shells,
        ground_stations,
        isl_bandwidth_kbps: rng.gen_range(10_000..=1_000_000),
        gsl_bandwidth_kbps: rng.gen_range(10_000..=1_000_000),
    };
    let mut nodes: Vec<NodeId> = constellation.node_ids();
    nodes.shuffle(rng);
    let keep = rng.gen_range(2..=nodes.len().min(12));
    nodes.truncate(keep);
    Scenario {
        constellation,
        machines: nodes,
    }
}
