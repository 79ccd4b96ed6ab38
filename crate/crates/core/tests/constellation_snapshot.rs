use std::f64::consts::{PI, TAU};

use orbitmesh::constellation::{snapshot, ConstellationConfig, GroundStation, NodeId, PhysicalConstants, Shell};
use orbitmesh::topology::Edge;

fn small_config() -> ConstellationConfig {
    ConstellationConfig {
        constants: PhysicalConstants::default(),
        shells: vec![Shell {
            planes: 2,
            sats_per_plane: 2,
            altitude_km: 550.0,
            inclination_rad: 53f64.to_radians(),
            phasing_factor: 1,
            max_isl_length_km: None,
        }],
        ground_stations: vec![GroundStation::new("equator", 0.0, 0.0)],
        isl_bandwidth_kbps: 10_000_000,
        gsl_bandwidth_kbps: 1_000_000,
    }
}

/// Independent circular-orbit position, written from the orbital elements.
fn oracle_sat(plane: u32, slot: u32, t: f64) -> [f64; 3] {
    let c = PhysicalConstants::default();
    let r = c.earth_radius_km + 550.0;
    let period = 2.0 * PI * (r.powi(3) / c.mu_km3_s2).sqrt();
    let u = 2.0 * PI * (slot as f64 / 2.0 + plane as f64 / 4.0 + t / period);
    let raan = PI * plane as f64;
    let inc = 53f64.to_radians();
    // R_z(raan) * R_x(inc) * (r cos u, r sin u, 0)
    let (x, y, z) = (r * u.cos(), r * u.sin() * inc.cos(), r * u.sin() * inc.sin());
    [x * raan.cos() - y * raan.sin(), x * raan.sin() + y * raan.cos(), z]
}

fn oracle_gs(t: f64) -> [f64; 3] {
    let c = PhysicalConstants::default();
    let lon = c.earth_rotation_rad_s * t;
    [c.earth_radius_km * lon.cos(), c.earth_radius_km * lon.sin(), 0.0]
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn us(d: f64) -> u64 {
    (d / 299_792.458 * 1e6 + 0.5).floor() as u64
}

fn normalized(mut edges: Vec<Edge>) -> Vec<Edge> {
    for e in &mut edges {
        if e.u > e.v {
            std::mem::swap(&mut e.u, &mut e.v);
        }
    }
    edges.sort_by_key(|e| (e.u, e.v));
    edges
}

#[test]
fn two_by_two_shell_enumerated_by_hand() {
    let config = small_config();
    assert_eq!(
        config.node_ids(),
        vec![
            NodeId::GroundStation { station: 0 },
            NodeId::Satellite {
                shell: 0,
                plane: 0,
                slot: 0
            },
            NodeId::Satellite {
                shell: 0,
                plane: 0,
                slot: 1
            },
            NodeId::Satellite {
                shell: 0,
                plane: 1,
                slot: 0
            },
            NodeId::Satellite {
                shell: 0,
                plane: 1,
                slot: 1
            },
        ]
    );

    for t in [0.0, 123.0, 1800.0, 4000.0] {
        let sats: Vec<[f64; 3]> = [(0, 0), (0, 1), (1, 0), (1, 1)]
            .iter()
            .map(|&(p, s)| oracle_sat(p, s, t))
            .collect();
        // with two planes and two slots every neighbour pair collapses to one edge
        let mut expected: Vec<Edge> = [(1, 2), (1, 3), (2, 4), (3, 4)]
            .iter()
            .map(|&(u, v)| Edge {
                u,
                v,
                latency_us: us(dist(sats[u - 1], sats[v - 1])),
                bandwidth_kbps: 10_000_000,
            })
            .collect();
        let gs = oracle_gs(t);
        for (i, sat) in sats.iter().enumerate() {
            let los = [sat[0] - gs[0], sat[1] - gs[1], sat[2] - gs[2]];
            let sin_el = (gs[0] * los[0] + gs[1] * los[1] + gs[2] * los[2]) / (dist(gs, [0.0; 3]) * dist(*sat, gs));
            if sin_el.asin() >= 25f64.to_radians() {
                expected.push(Edge {
                    u: 0,
                    v: i + 1,
                    latency_us: us(dist(gs, *sat)),
                    bandwidth_kbps: 1_000_000,
                });
            }
        }
        let got = snapshot(&config, t).unwrap();
        assert_eq!(normalized(got.edges().to_vec()), normalized(expected), "t = {t}");
    }
}

#[test]
fn snapshots_are_deterministic() {
    let config = small_config();
    for t in [0.0, 17.5, 5000.0] {
        assert_eq!(snapshot(&config, t).unwrap(), snapshot(&config, t).unwrap());
    }
}

#[test]
fn one_period_later_only_the_earth_has_turned() {
    let mut config = small_config();
    config.shells[0].planes = 6;
    config.shells[0].sats_per_plane = 8;
    config.ground_stations = vec![GroundStation::new("a", 0.3, 1.0), GroundStation::new("b", -0.8, -2.5)];
    let period = config.shells[0].period_s(&config.constants);
    let step = period / 573.0;
    let later = snapshot(&config, 573.0 * step).unwrap();

    let mut turned = config.clone();
    for gs in &mut turned.ground_stations {
        let lon = gs.longitude_rad + config.constants.earth_rotation_rad_s * period;
        gs.longitude_rad = (lon + PI).rem_euclid(TAU) - PI;
    }
    let now = snapshot(&turned, 0.0).unwrap();
    assert_eq!(normalized(later.edges().to_vec()), normalized(now.edges().to_vec()));
}
