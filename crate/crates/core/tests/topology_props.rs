mod common;

use orbitmesh::topology::{apply, diff, reduce_full_mesh, MachineId, MeshLink, MeshSnapshot, TopologySnapshot};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{brute_force_mesh, brute_force_route, random_connected_graph};

fn graph(seed: u64, n: usize) -> (TopologySnapshot, Vec<orbitmesh::topology::Edge>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = random_connected_graph(&mut rng, n);
    (TopologySnapshot::new(n, edges.clone()).unwrap(), edges)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn routes_match_exhaustive_enumeration(seed in any::<u64>(), n in 2usize..=9) {
        let (snap, edges) = graph(seed, n);
        for s in 0..n {
            let routes = snap.shortest_paths(s).unwrap();
            for (t, route) in routes.iter().enumerate() {
                let expected = brute_force_route(n, &edges, s, t);
                let got = route.as_ref().map(|r| (r.latency_us, r.bandwidth_kbps, r.path.clone()));
                prop_assert_eq!(got, expected);
            }
        }
    }

    #[test]
    fn mesh_matches_oracle_for_machine_subsets(seed in any::<u64>(), n in 2usize..=10, pick in any::<u64>()) {
        let (snap, edges) = graph(seed, n);
        let mut machines: Vec<usize> = (0..n).filter(|i| pick >> (i % 64) & 1 == 1).collect();
        if machines.len() < 2 {
            machines = vec![n - 1, 0];
        }
        machines.reverse();
        let mesh = reduce_full_mesh(&snap, &machines).unwrap();
        prop_assert_eq!(mesh, brute_force_mesh(n, &edges, &machines));
    }

    #[test]
    fn mesh_latency_obeys_triangle_inequality(seed in any::<u64>(), n in 3usize..=10) {
        let (snap, _) = graph(seed, n);
        let machines: Vec<usize> = (0..n).collect();
        let mesh = reduce_full_mesh(&snap, &machines).unwrap();
        let lat = |a: usize, b: usize| match mesh.get(MachineId(a as u32), MachineId(b as u32)) {
            Some(MeshLink::Reachable { latency_us, .. }) => latency_us,
            None => 0,
            Some(MeshLink::Unreachable) => u64::MAX,
        };
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    prop_assert!(lat(a, c) <= lat(a, b).saturating_add(lat(b, c)));
                }
            }
        }
    }

    #[test]
    fn adding_an_edge_never_increases_latency(seed in any::<u64>(), n in 3usize..=9, lat in 0u64..10) {
        let (snap, mut edges) = graph(seed, n);
        let machines: Vec<usize> = (0..n).collect();
        let before = reduce_full_mesh(&snap, &machines).unwrap();
        let missing = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .find(|&(u, v)| !edges.iter().any(|e| (e.u, e.v) == (u, v) || (e.v, e.u) == (u, v)));
        if let Some((u, v)) = missing {
            edges.push(orbitmesh::topology::Edge { u, v, latency_us: lat, bandwidth_kbps: 5 });
            let after = reduce_full_mesh(&TopologySnapshot::new(n, edges).unwrap(), &machines).unwrap();
            for ((_, _, old), (_, _, new)) in before.pairs().zip(after.pairs()) {
                if let (MeshLink::Reachable { latency_us: o, .. }, MeshLink::Reachable { latency_us: nw, .. }) = (old, new) {
                    prop_assert!(nw <= o);
                }
            }
        }
    }

    #[test]
    fn diff_then_apply_round_trips(seed_a in any::<u64>(), seed_b in any::<u64>(), n in 2usize..=8) {
        let machines: Vec<usize> = (0..n).collect();
        let meshes: Vec<MeshSnapshot> = [seed_a, seed_b]
            .iter()
            .map(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let mut edges = random_connected_graph(&mut rng, n);
                // drop some edges so unreachable pairs appear
                edges.retain(|e| !(e.u + e.v + s as usize).is_multiple_of(3));
                reduce_full_mesh(&TopologySnapshot::new(n, edges).unwrap(), &machines).unwrap()
            })
            .collect();
        let updates = diff(&meshes[0], &meshes[1]).unwrap();
        prop_assert_eq!(apply(&meshes[0], &updates).unwrap(), meshes[1].clone());
        prop_assert!(diff(&meshes[1], &meshes[1]).unwrap().is_empty());
        let pairs: Vec<_> = updates.iter().map(|u| (u.a, u.b)).collect();
        let mut sorted = pairs.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(pairs, sorted);
    }
}
