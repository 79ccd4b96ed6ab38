//! The main TOML configuration. Angles are given in degrees here and
//! converted to radians for the core library.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::path::Path;

use orbitmesh::constellation::{
    ConstellationConfig, GroundStation, NodeId, PhysicalConstants, Shell, DEFAULT_MIN_ELEVATION_RAD,
};
use orbitmesh::fabric::{sequential_addressing, Addressing, BackendKind};
use orbitmesh::topology::MachineId;
use orbitmesh::tracegen::Scenario;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainConfig {
    #[serde(default)]
    pub constants: PhysicalConstants,
    #[serde(default)]
    pub shells: Vec<ShellConfig>,
    #[serde(default)]
    pub ground_stations: Vec<StationConfig>,
    pub isl_bandwidth_kbps: u64,
    pub gsl_bandwidth_kbps: u64,
    #[serde(default)]
    pub machines: MachineSelection,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub fabric: FabricConfig,
    #[serde(default)]
    pub addressing: AddressingConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellConfig {
    pub planes: u32,
    pub sats_per_plane: u32,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    #[serde(default)]
    pub phasing_factor: u32,
    pub max_isl_length_km: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub name: String,
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub min_elevation_deg: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Select {
    #[default]
    All,
    /// Every ground station plus the listed satellites.
    Subset,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSelection {
    #[serde(default)]
    pub select: Select,
    /// `shell.plane.slot` references, only with `select = "subset"`.
    #[serde(default)]
    pub satellites: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub step_s: f64,
    pub duration_s: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            step_s: 60.0,
            duration_s: 3600.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FabricConfig {
    pub seed: u64,
    pub backend: BackendKind,
    pub device: String,
}

impl Default for FabricConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backend: BackendKind::Hash,
            device: "eth0".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AddressingConfig {
    /// First address; machine `i` gets `base + i` unless overridden.
    pub base: Ipv4Addr,
    /// Explicit addresses keyed by machine index.
    pub hosts: BTreeMap<String, Ipv4Addr>,
}

impl Default for AddressingConfig {
    fn default() -> Self {
        Self {
            base: Ipv4Addr::new(10, 0, 0, 1),
            hosts: BTreeMap::new(),
        }
    }
}

fn parse_satellite(text: &str) -> Option<NodeId> {
    let mut parts = text.split('.').map(str::parse::<u32>);
    let (Some(Ok(shell)), Some(Ok(plane)), Some(Ok(slot)), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return None;
    };
    Some(NodeId::Satellite { shell, plane, slot })
}

impl MainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let config: MainConfig = toml::from_str(text).map_err(|e| CliError::config(e.message()))?;
        config.constellation()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn constellation(&self) -> Result<ConstellationConfig, CliError> {
        let config = ConstellationConfig {
            constants: self.constants,
            shells: self
                .shells
                .iter()
                .map(|s| Shell {
                    planes: s.planes,
                    sats_per_plane: s.sats_per_plane,
                    altitude_km: s.altitude_km,
                    inclination_rad: s.inclination_deg.to_radians(),
                    phasing_factor: s.phasing_factor,
                    max_isl_length_km: s.max_isl_length_km,
                })
                .collect(),
            ground_stations: self
                .ground_stations
                .iter()
                .map(|g| GroundStation {
                    name: g.name.clone(),
                    latitude_rad: g.latitude_deg.to_radians(),
                    longitude_rad: g.longitude_deg.to_radians(),
                    min_elevation_rad: g.min_elevation_deg.map_or(DEFAULT_MIN_ELEVATION_RAD, f64::to_radians),
                })
                .collect(),
            isl_bandwidth_kbps: self.isl_bandwidth_kbps,
            gsl_bandwidth_kbps: self.gsl_bandwidth_kbps,
        };
        config.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(config)
    }

    /// The emulated machines, in machine order.
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let constellation = self.constellation()?;
        let machines = match self.machines.select {
            Select::All => {
                if !self.machines.satellites.is_empty() {
                    return Err(CliError::config("machines.satellites requires select = \"subset\""));
                }
                constellation.node_ids()
            }
            Select::Subset => {
                let mut ids: Vec<NodeId> = (0..constellation.ground_stations.len() as u32)
                    .map(|station| NodeId::GroundStation { station })
                    .collect();
                let mut seen = BTreeSet::new();
                for text in &self.machines.satellites {
                    let id = parse_satellite(text)
                        .filter(|id| constellation.index_of(*id).is_some())
                        .ok_or_else(|| CliError::config(format!("machines.satellites: no satellite `{text}`")))?;
                    if !seen.insert(id) {
                        return Err(CliError::config(format!("machines.satellites: `{text}` listed twice")));
                    }
                    ids.push(id);
                }
                ids
            }
        };
        if machines.is_empty() {
            return Err(CliError::config("configuration selects no machines"));
        }
        Ok(Scenario {
            constellation,
            machines,
        })
    }

    /// Addresses for `count` machines.
    pub fn addressing(&self, count: usize) -> Result<Addressing, CliError> {
        build_addressing(&self.addressing, count)
    }
}

pub fn build_addressing(cfg: &AddressingConfig, count: usize) -> Result<Addressing, CliError> {
    if u64::from(u32::from(cfg.base)) + count as u64 > u64::from(u32::MAX) + 1 {
        return Err(CliError::config("addressing.base leaves too few addresses"));
    }
    let mut map = sequential_addressing(count, cfg.base);
    for (key, ip) in &cfg.hosts {
        let idx: u32 = key
            .parse()
            .ok()
            .filter(|&i: &u32| (i as usize) < count)
            .ok_or_else(|| CliError::config(format!("addressing.hosts: no machine `{key}`")))?;
        map.insert(MachineId(idx), *ip);
    }
    let mut seen = BTreeSet::new();
    for ip in map.values() {
        if !seen.insert(*ip) {
            return Err(CliError::config(format!("addressing: {ip} assigned twice")));
        }
    }
    Ok(map)
}
