//! Satellite and ground-station geometry.
//!
//! Satellites fly circular Kepler orbits arranged as Walker-delta shells in an
//! Earth-centered inertial frame. Ground stations sit on a rotating sphere.
//! Inter-satellite links follow the +grid pattern and ground-station links are
//! established to every satellite above the station's elevation mask.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Edge, TopologySnapshot};

/// Default elevation mask for ground stations (25 degrees).
pub const DEFAULT_MIN_ELEVATION_RAD: f64 = 25.0 * PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstellationError {
    #[error("satellite index out of range: shell {shell} plane {plane} slot {slot}")]
    IndexOutOfRange { shell: usize, plane: u32, slot: u32 },
    #[error("time must be finite and non-negative, got {0}")]
    InvalidTime(f64),
    #[error("ground station and satellite positions coincide")]
    CoincidentPositions,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    pub earth_radius_km: f64,
    pub mu_km3_s2: f64,
    pub earth_rotation_rad_s: f64,
    pub light_speed_km_s: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            earth_radius_km: 6371.0,
            mu_km3_s2: 398_600.441_8,
            earth_rotation_rad_s: 7.292_115_9e-5,
            light_speed_km_s: 299_792.458,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<(), ConstellationError> {
        let fields = [
            ("earth_radius_km", self.earth_radius_km),
            ("mu_km3_s2", self.mu_km3_s2),
            ("earth_rotation_rad_s", self.earth_rotation_rad_s),
            ("light_speed_km_s", self.light_speed_km_s),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConstellationError::InvalidConfig(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// A Walker-delta shell of `planes` x `sats_per_plane` satellites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub planes: u32,
    pub sats_per_plane: u32,
    pub altitude_km: f64,
    pub inclination_rad: f64,
    pub phasing_factor: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_isl_length_km: Option<f64>,
}

impl Shell {
    pub fn satellite_count(&self) -> usize {
        self.planes as usize * self.sats_per_plane as usize
    }

    pub fn orbit_radius_km(&self, consts: &PhysicalConstants) -> f64 {
        consts.earth_radius_km + self.altitude_km
    }

    /// Orbital period in seconds, from Kepler's third law.
    pub fn period_s(&self, consts: &PhysicalConstants) -> f64 {
        let a = self.orbit_radius_km(consts);
        TAU * (a.powi(3) / consts.mu_km3_s2).sqrt()
    }

    /// Circular orbital speed in km/s.
    pub fn orbital_speed_km_s(&self, consts: &PhysicalConstants) -> f64 {
        (consts.mu_km3_s2 / self.orbit_radius_km(consts)).sqrt()
    }

    pub fn validate(&self) -> Result<(), ConstellationError> {
        let bad = |msg: String| Err(ConstellationError::InvalidConfig(msg));
        if self.planes == 0 || self.sats_per_plane == 0 {
            return bad("shell needs at least one plane and one satellite per plane".into());
        }
        if !(self.altitude_km.is_finite() && self.altitude_km > 0.0) {
            return bad(format!("altitude_km must be positive, got {}", self.altitude_km));
        }
        if !(0.0..=PI).contains(&self.inclination_rad) {
            return bad(format!("inclination must lie in [0, pi], got {}", self.inclination_rad));
        }
        if self.phasing_factor >= self.planes {
            return bad(format!(
                "phasing_factor {} must be below the plane count {}",
                self.phasing_factor, self.planes
            ));
        }
        if let Some(max) = self.max_isl_length_km {
            if !(max.is_finite() && max > 0.0) {
                return bad(format!("max_isl_length_km must be positive, got {max}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStation {
    pub name: String,
    pub latitude_rad: f64,
    pub longitude_rad: f64,
    #[serde(default = "default_min_elevation")]
    pub min_elevation_rad: f64,
}

fn default_min_elevation() -> f64 {
    DEFAULT_MIN_ELEVATION_RAD
}

impl GroundStation {
    pub fn new(name: impl Into<String>, latitude_rad: f64, longitude_rad: f64) -> Self {
        Self {
            name: name.into(),
            latitude_rad,
            longitude_rad,
            min_elevation_rad: DEFAULT_MIN_ELEVATION_RAD,
        }
    }

    pub fn validate(&self) -> Result<(), ConstellationError> {
        let bad = |msg: String| Err(ConstellationError::InvalidConfig(msg));
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&self.latitude_rad) {
            return bad(format!("station {}: latitude out of range", self.name));
        }
        if !(-PI..PI).contains(&self.longitude_rad) {
            return bad(format!("station {}: longitude out of range", self.name));
        }
        if !(0.0..FRAC_PI_2).contains(&self.min_elevation_rad) {
            return bad(format!("station {}: min elevation out of range", self.name));
        }
        Ok(())
    }
}

/// Identifies a node of the simulated infrastructure.
///
/// The derived ordering puts ground stations first, then satellites by
/// `(shell, plane, slot)`, which is also the dense index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeId {
    GroundStation { station: u32 },
    Satellite { shell: u32, plane: u32, slot: u32 },
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::GroundStation { station } => write!(f, "gs{station}"),
            NodeId::Satellite { shell, plane, slot } => write!(f, "sat{shell}.{plane}.{slot}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Position) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn sub(&self, other: &Position) -> Position {
        Position::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }

    pub fn distance(&self, other: &Position) -> f64 {
        self.sub(other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationConfig {
    #[serde(default)]
    pub constants: PhysicalConstants,
    #[serde(default)]
    pub shells: Vec<Shell>,
    #[serde(default)]
    pub ground_stations: Vec<GroundStation>,
    pub isl_bandwidth_kbps: u64,
    pub gsl_bandwidth_kbps: u64,
}

impl ConstellationConfig {
    pub fn validate(&self) -> Result<(), ConstellationError> {
        self.constants.validate()?;
        for shell in &self.shells {
            shell.validate()?;
        }
        let mut names = BTreeSet::new();
        for gs in &self.ground_stations {
            gs.validate()?;
            if !names.insert(gs.name.as_str()) {
                return Err(ConstellationError::InvalidConfig(format!(
                    "duplicate ground station name {}",
                    gs.name
                )));
            }
        }
        if self.isl_bandwidth_kbps == 0 || self.gsl_bandwidth_kbps == 0 {
            return Err(ConstellationError::InvalidConfig(
                "link bandwidths must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn satellite_count(&self) -> usize {
        self.shells.iter().map(Shell::satellite_count).sum()
    }

    pub fn node_count(&self) -> usize {
        self.ground_stations.len() + self.satellite_count()
    }

    /// All node ids in dense index order.
    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut ids = Vec::with_capacity(self.node_count());
        ids.extend((0..self.ground_stations.len() as u32).map(|station| NodeId::GroundStation { station }));
        for (shell_idx, shell) in self.shells.iter().enumerate() {
            for plane in 0..shell.planes {
                for slot in 0..shell.sats_per_plane {
                    ids.push(NodeId::Satellite {
                        shell: shell_idx as u32,
                        plane,
                        slot,
                    });
                }
            }
        }
        ids
    }

    /// Dense index of a node, or `None` if the id does not exist in this config.
    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        match id {
            NodeId::GroundStation { station } => {
                ((station as usize) < self.ground_stations.len()).then_some(station as usize)
            }
            NodeId::Satellite { shell, plane, slot } => {
                let s = self.shells.get(shell as usize)?;
                if plane >= s.planes || slot >= s.sats_per_plane {
                    return None;
                }
                let before: usize = self.shells[..shell as usize].iter().map(Shell::satellite_count).sum();
                Some(self.ground_stations.len() + before + plane as usize * s.sats_per_plane as usize + slot as usize)
            }
        }
    }

    pub fn node_at(&self, index: usize) -> Option<NodeId> {
        if index < self.ground_stations.len() {
            return Some(NodeId::GroundStation { station: index as u32 });
        }
        let mut rest = index - self.ground_stations.len();
        for (shell_idx, shell) in self.shells.iter().enumerate() {
            let count = shell.satellite_count();
            if rest < count {
                let per = shell.sats_per_plane as usize;
                return Some(NodeId::Satellite {
                    shell: shell_idx as u32,
                    plane: (rest / per) as u32,
                    slot: (rest % per) as u32,
                });
            }
            rest -= count;
        }
        None
    }

    pub fn position(&self, id: NodeId, t: f64) -> Result<Position, ConstellationError> {
        match id {
            NodeId::GroundStation { station } => {
                let gs = self
                    .ground_stations
                    .get(station as usize)
                    .ok_or(ConstellationError::InvalidConfig(format!("unknown station {station}")))?;
                ground_station_position(gs, t, &self.constants)
            }
            NodeId::Satellite { shell, plane, slot } => {
                let s = self
                    .shells
                    .get(shell as usize)
                    .ok_or(ConstellationError::IndexOutOfRange {
                        shell: shell as usize,
                        plane,
                        slot,
                    })?;
                satellite_position(s, plane, slot, t, &self.constants).map_err(|e| match e {
                    ConstellationError::IndexOutOfRange { plane, slot, .. } => ConstellationError::IndexOutOfRange {
                        shell: shell as usize,
                        plane,
                        slot,
                    },
                    other => other,
                })
            }
        }
    }
}

fn check_time(t: f64) -> Result<(), ConstellationError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(ConstellationError::InvalidTime(t))
    }
}

/// Inertial position of satellite `(plane, slot)` of `shell` at time `t`.
pub fn satellite_position(
    shell: &Shell,
    plane: u32,
    slot: u32,
    t: f64,
    consts: &PhysicalConstants,
) -> Result<Position, ConstellationError> {
    if plane >= shell.planes || slot >= shell.sats_per_plane {
        return Err(ConstellationError::IndexOutOfRange { shell: 0, plane, slot });
    }
    check_time(t)?;

    let a = shell.orbit_radius_km(consts);
    let period = shell.period_s(consts);
    let planes = f64::from(shell.planes);
    let per_plane = f64::from(shell.sats_per_plane);

    // Reduce t modulo the period first so large times keep full precision.
    let phase = t.rem_euclid(period) / period;
    let anomaly = TAU * f64::from(slot) / per_plane
        + TAU * f64::from(shell.phasing_factor) * f64::from(plane) / (planes * per_plane)
        + TAU * phase;
    let raan = TAU * f64::from(plane) / planes;

    let (sin_u, cos_u) = anomaly.sin_cos();
    let (sin_i, cos_i) = shell.inclination_rad.sin_cos();
    let (sin_o, cos_o) = raan.sin_cos();

    let xp = a * cos_u;
    let yp = a * sin_u * cos_i;
    let zp = a * sin_u * sin_i;
    Ok(Position::new(xp * cos_o - yp * sin_o, xp * sin_o + yp * cos_o, zp))
}

/// Inertial position of a ground station at time `t`.
pub fn ground_station_position(
    gs: &GroundStation,
    t: f64,
    consts: &PhysicalConstants,
) -> Result<Position, ConstellationError> {
    check_time(t)?;
    let r = consts.earth_radius_km;
    let day = TAU / consts.earth_rotation_rad_s;
    let lon = gs.longitude_rad + TAU * (t.rem_euclid(day) / day);
    let (sin_lat, cos_lat) = gs.latitude_rad.sin_cos();
    let (sin_lon, cos_lon) = lon.sin_cos();
    Ok(Position::new(r * cos_lat * cos_lon, r * cos_lat * sin_lon, r * sin_lat))
}

/// A satellite within a single shell, as `(plane, slot)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotRef {
    pub plane: u32,
    pub slot: u32,
}

/// +grid inter-satellite links of a shell: each satellite connects to both
/// intra-plane neighbours and to the same slot in both adjacent planes.
/// Edges are undirected, deduplicated, and returned with the smaller endpoint first.
pub fn isl_topology(shell: &Shell) -> Vec<(SlotRef, SlotRef)> {
    let (p, s) = (shell.planes, shell.sats_per_plane);
    let mut edges = BTreeSet::new();
    let mut add = |a: SlotRef, b: SlotRef| {
        if a != b {
            edges.insert(if a < b { (a, b) } else { (b, a) });
        }
    };
    for plane in 0..p {
        for slot in 0..s {
            let me = SlotRef { plane, slot };
            add(
                me,
                SlotRef {
                    plane,
                    slot: (slot + 1) % s,
                },
            );
            add(
                me,
                SlotRef {
                    plane: (plane + 1) % p,
                    slot,
                },
            );
        }
    }
    edges.into_iter().collect()
}

/// Elevation of `sat_pos` above the local horizon of a station at `gs_pos`.
pub fn elevation_rad(gs_pos: &Position, sat_pos: &Position) -> Result<f64, ConstellationError> {
    let los = sat_pos.sub(gs_pos);
    let range = los.norm();
    let radius = gs_pos.norm();
    if range == 0.0 || radius == 0.0 {
        return Err(ConstellationError::CoincidentPositions);
    }
    let sin_el = (gs_pos.dot(&los) / (radius * range)).clamp(-1.0, 1.0);
    Ok(sin_el.asin())
}

pub fn gsl_visible(gs_pos: &Position, sat_pos: &Position, min_elevation_rad: f64) -> Result<bool, ConstellationError> {
    Ok(elevation_rad(gs_pos, sat_pos)? >= min_elevation_rad)
}

/// Free-space propagation delay, rounded half-up to whole microseconds.
pub fn link_latency_us(a: &Position, b: &Position, consts: &PhysicalConstants) -> u64 {
    let us = a.distance(b) / consts.light_speed_km_s * 1e6;
    (us + 0.5).floor() as u64
}

/// Logical topology of the whole constellation at time `t`.
pub fn snapshot(config: &ConstellationConfig, t: f64) -> Result<TopologySnapshot, ConstellationError> {
    config.validate()?;
    check_time(t)?;
    let consts = &config.constants;

    let stations: Vec<Position> = config
        .ground_stations
        .iter()
        .map(|gs| ground_station_position(gs, t, consts))
        .collect::<Result<_, _>>()?;

    let mut edges = Vec::new();
    let mut sat_positions: Vec<(usize, Position)> = Vec::with_capacity(config.satellite_count());
    let mut offset = config.ground_stations.len();

    for shell in &config.shells {
        let index = |r: SlotRef| offset + (r.plane * shell.sats_per_plane + r.slot) as usize;
        let mut positions = Vec::with_capacity(shell.satellite_count());
        for plane in 0..shell.planes {
            for slot in 0..shell.sats_per_plane {
                positions.push(satellite_position(shell, plane, slot, t, consts)?);
            }
        }
        for (a, b) in isl_topology(shell) {
            let (ia, ib) = (index(a), index(b));
            let (pa, pb) = (&positions[ia - offset], &positions[ib - offset]);
            if let Some(max) = shell.max_isl_length_km {
                if pa.distance(pb) > max {
                    continue;
                }
            }
            edges.push(Edge {
                u: ia,
                v: ib,
                latency_us: link_latency_us(pa, pb, consts),
                bandwidth_kbps: config.isl_bandwidth_kbps,
            });
        }
        sat_positions.extend(positions.into_iter().enumerate().map(|(i, p)| (offset + i, p)));
        offset += shell.satellite_count();
    }

    for (gs_idx, (gs, gs_pos)) in config.ground_stations.iter().zip(&stations).enumerate() {
        for (sat_idx, sat_pos) in &sat_positions {
            if gsl_visible(gs_pos, sat_pos, gs.min_elevation_rad)? {
                edges.push(Edge {
                    u: gs_idx,
                    v: *sat_idx,
                    latency_us: link_latency_us(gs_pos, sat_pos, consts),
                    bandwidth_kbps: config.gsl_bandwidth_kbps,
                });
            }
        }
    }

    TopologySnapshot::new(config.node_count(), edges).map_err(|e| ConstellationError::InvalidConfig(e.to_string()))
}
