//! Offline trace generation and trace-driven replay.
//!
//! A trace stores the full mesh state of every epoch as CSV. Generation is a
//! pure function of the scenario, so identical inputs produce byte-identical
//! files. Replay diffs consecutive epochs and pushes only the changes into a
//! fabric backend.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constellation::{self, ConstellationConfig, ConstellationError, NodeId};
use crate::fabric::{apply_mesh_updates, FabricBackend};
use crate::topology::{self, ChangeKind, LinkUpdate, MachineId, MeshLink, MeshSnapshot, TopologyError};

pub const TRACE_MAGIC: &str = "#orbitmesh-trace v1";
pub const COLUMN_HEADER: &str = "epoch,source,target,reachable,latency_us,bandwidth_kbps";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid trace parameters: {0}")]
    InvalidParams(String),
    #[error("scenario selects no machines")]
    NoMachines,
    #[error("machine {0} is not part of the constellation")]
    UnknownMachine(NodeId),
    #[error("trace has {trace} machines but the backend has {backend}")]
    MachineMismatch { trace: usize, backend: usize },
    #[error("trace failed validation with {} violation(s)", .0.len())]
    Invalid(Vec<Violation>),
}

/// Constellation plus the nodes that are emulated as machines, in machine order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub constellation: ConstellationConfig,
    pub machines: Vec<NodeId>,
}

impl Scenario {
    /// Every node of the constellation is a machine.
    pub fn all_nodes(constellation: ConstellationConfig) -> Self {
        let machines = constellation.node_ids();
        Self {
            constellation,
            machines,
        }
    }

    fn machine_indices(&self) -> Result<Vec<usize>, TraceError> {
        if self.machines.is_empty() {
            return Err(TraceError::NoMachines);
        }
        self.machines
            .iter()
            .map(|&id| self.constellation.index_of(id).ok_or(TraceError::UnknownMachine(id)))
            .collect()
    }

    /// Hex SHA-256 of the scenario and trace timing.
    pub fn config_hash(&self, duration_s: f64, step_s: f64) -> String {
        #[derive(Serialize)]
        struct Bound<'a> {
            scenario: &'a Scenario,
            duration_s: f64,
            step_s: f64,
        }
        let bytes = serde_json::to_vec(&Bound {
            scenario: self,
            duration_s,
            step_s,
        })
        .expect("scenario serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub config_hash: String,
    pub machines: usize,
    pub step_s: f64,
    pub epochs: usize,
}

impl fmt::Display for TraceHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{TRACE_MAGIC} config={} machines={} step_s={} epochs={}",
            self.config_hash, self.machines, self.step_s, self.epochs
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkRecord {
    pub epoch: u64,
    pub source: u32,
    pub target: u32,
    pub link: MeshLink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    /// Records of each epoch, sorted by `(source, target)`.
    pub epochs: Vec<Vec<LinkRecord>>,
}

/// Number of epochs `t = k * step` with `t < duration`.
pub fn epoch_count(duration_s: f64, step_s: f64) -> usize {
    ((duration_s / step_s) - 1e-9).ceil().max(1.0) as usize
}

pub fn generate_trace(scenario: &Scenario, duration_s: f64, step_s: f64) -> Result<Trace, TraceError> {
    if !(step_s.is_finite() && step_s > 0.0) {
        return Err(TraceError::InvalidParams(format!(
            "step_s must be positive, got {step_s}"
        )));
    }
    if !(duration_s.is_finite() && duration_s >= step_s) {
        return Err(TraceError::InvalidParams(format!(
            "duration_s ({duration_s}) must be at least step_s ({step_s})"
        )));
    }
    scenario.constellation.validate()?;
    let machines = scenario.machine_indices()?;
    let count = epoch_count(duration_s, step_s);

    let mut epochs = Vec::with_capacity(count);
    for k in 0..count {
        let t = k as f64 * step_s;
        let snap = constellation::snapshot(&scenario.constellation, t)?;
        let mesh = topology::reduce_full_mesh(&snap, &machines)?;
        epochs.push(records_of(k as u64, &mesh));
    }
    Ok(Trace {
        header: TraceHeader {
            config_hash: scenario.config_hash(duration_s, step_s),
            machines: machines.len(),
            step_s,
            epochs: count,
        },
        epochs,
    })
}

fn records_of(epoch: u64, mesh: &MeshSnapshot) -> Vec<LinkRecord> {
    mesh.pairs()
        .map(|(a, b, link)| LinkRecord {
            epoch,
            source: a.0,
            target: b.0,
            link,
        })
        .collect()
}

impl Trace {
    /// Mesh state of epoch `k`.
    pub fn mesh(&self, k: usize) -> Result<MeshSnapshot, TraceError> {
        let mut mesh = MeshSnapshot::anonymous(self.header.machines)?;
        for r in &self.epochs[k] {
            mesh.set(MachineId(r.source), MachineId(r.target), r.link)?;
        }
        Ok(mesh)
    }

    pub fn write_to<W: Write>(&self, out: W) -> io::Result<()> {
        let mut out = io::BufWriter::new(out);
        writeln!(out, "{}", self.header)?;
        writeln!(out, "{COLUMN_HEADER}")?;
        for rec in self.epochs.iter().flatten() {
            match rec.link {
                MeshLink::Reachable {
                    latency_us,
                    bandwidth_kbps,
                } => writeln!(
                    out,
                    "{},{},{},1,{latency_us},{bandwidth_kbps}",
                    rec.epoch, rec.source, rec.target
                )?,
                MeshLink::Unreachable => writeln!(out, "{},{},{},0,,", rec.epoch, rec.source, rec.target)?,
            }
        }
        out.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn write_file(&self, path: &Path) -> io::Result<()> {
        self.write_to(fs::File::create(path)?)
    }

    /// Parse and validate a trace; any violation is an error.
    pub fn read_from<R: BufRead>(input: R) -> Result<Trace, TraceError> {
        let (trace, violations) = parse(input)?;
        match trace {
            Some(t) if violations.is_empty() => Ok(t),
            _ => Err(TraceError::Invalid(violations)),
        }
    }

    pub fn read_file(path: &Path) -> Result<Trace, TraceError> {
        Self::read_from(io::BufReader::new(fs::File::open(path)?))
    }
}

/// One problem found while validating a trace file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub code: &'static str,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: line {}: {}", self.code, self.line, self.message)
    }
}

/// Validate a trace file. I/O failures are errors; format problems are
/// returned as violations (empty when the file is valid).
pub fn validate_trace(path: &Path) -> Result<Vec<Violation>, io::Error> {
    let file = fs::File::open(path)?;
    validate_reader(io::BufReader::new(file))
}

pub fn validate_reader<R: BufRead>(input: R) -> Result<Vec<Violation>, io::Error> {
    parse(input).map(|(_, v)| v)
}

fn parse_header(line: &str) -> Result<TraceHeader, String> {
    let rest = line
        .strip_prefix(TRACE_MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| format!("expected `{TRACE_MAGIC} ...`"))?;
    let fields: Vec<&str> = rest.split(' ').collect();
    let keys = ["config", "machines", "step_s", "epochs"];
    if fields.len() != keys.len() {
        return Err(format!("expected fields {keys:?}"));
    }
    let mut values = Vec::new();
    for (field, key) in fields.iter().zip(keys) {
        let v = field
            .strip_prefix(key)
            .and_then(|f| f.strip_prefix('='))
            .ok_or_else(|| format!("expected `{key}=` but found `{field}`"))?;
        values.push(v);
    }
    let config_hash = values[0];
    if config_hash.len() != 64
        || !config_hash
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    {
        return Err("config must be 64 lowercase hex digits".into());
    }
    let machines: usize = values[1]
        .parse()
        .map_err(|_| "machines is not an integer".to_string())?;
    let step_s: f64 = values[2].parse().map_err(|_| "step_s is not a number".to_string())?;
    let epochs: usize = values[3].parse().map_err(|_| "epochs is not an integer".to_string())?;
    if machines == 0 {
        return Err("machines must be at least 1".into());
    }
    if !(step_s.is_finite() && step_s > 0.0) {
        return Err("step_s must be positive".into());
    }
    if epochs == 0 {
        return Err("epochs must be at least 1".into());
    }
    Ok(TraceHeader {
        config_hash: config_hash.to_string(),
        machines,
        step_s,
        epochs,
    })
}

fn parse_opt(field: &str) -> Result<Option<u64>, ()> {
    if field.is_empty() {
        Ok(None)
    } else {
        field.parse().map(Some).map_err(|_| ())
    }
}

fn parse<R: BufRead>(mut input: R) -> Result<(Option<Trace>, Vec<Violation>), io::Error> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;

    let mut violations = Vec::new();
    fn push(v: &mut Vec<Violation>, code: &'static str, line: usize, message: String) {
        v.push(Violation { code, line, message });
    }

    let body = match text.strip_suffix('\n') {
        Some(b) => b,
        None => {
            push(
                &mut violations,
                "missing_final_newline",
                0,
                "file must end with LF".into(),
            );
            text.as_str()
        }
    };
    let lines: Vec<&str> = body.split('\n').collect();

    for (i, l) in lines.iter().enumerate() {
        if l.ends_with('\r') {
            push(&mut violations, "crlf", i + 1, "CR before LF".into());
        } else if l.ends_with(' ') || l.ends_with('\t') {
            push(&mut violations, "trailing_space", i + 1, "trailing whitespace".into());
        }
    }

    let header = match lines.first().map(|l| parse_header(l.trim_end_matches('\r'))) {
        Some(Ok(h)) => Some(h),
        Some(Err(msg)) => {
            push(&mut violations, "header", 1, msg);
            None
        }
        None => None,
    };
    if lines.get(1).map(|l| l.trim_end_matches('\r')) != Some(COLUMN_HEADER) {
        push(
            &mut violations,
            "column_header",
            2,
            format!("expected `{COLUMN_HEADER}`"),
        );
    }

    let mut records: Vec<LinkRecord> = Vec::new();
    let mut last_key: Option<(u64, u32, u32)> = None;
    for (i, raw) in lines.iter().enumerate().skip(2) {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            push(
                &mut violations,
                "malformed_row",
                lineno,
                format!("expected 6 cells, found {}", cells.len()),
            );
            continue;
        }
        let (Ok(epoch), Ok(source), Ok(target)) = (
            cells[0].parse::<u64>(),
            cells[1].parse::<u32>(),
            cells[2].parse::<u32>(),
        ) else {
            push(
                &mut violations,
                "malformed_row",
                lineno,
                "epoch, source and target must be integers".into(),
            );
            continue;
        };
        let (Ok(latency), Ok(bandwidth)) = (parse_opt(cells[4]), parse_opt(cells[5])) else {
            push(
                &mut violations,
                "malformed_row",
                lineno,
                "latency and bandwidth must be integers or empty".into(),
            );
            continue;
        };
        let link = match (cells[3], latency, bandwidth) {
            ("0", None, None) => MeshLink::Unreachable,
            ("0", _, _) => {
                push(
                    &mut violations,
                    "unreachable_with_values",
                    lineno,
                    "reachable=0 but latency or bandwidth present".into(),
                );
                continue;
            }
            ("1", Some(latency_us), Some(bandwidth_kbps)) => {
                if bandwidth_kbps == 0 {
                    push(
                        &mut violations,
                        "zero_bandwidth",
                        lineno,
                        "bandwidth must be positive".into(),
                    );
                }
                MeshLink::Reachable {
                    latency_us,
                    bandwidth_kbps,
                }
            }
            ("1", _, _) => {
                push(
                    &mut violations,
                    "reachable_missing_values",
                    lineno,
                    "reachable=1 needs latency and bandwidth".into(),
                );
                continue;
            }
            (flag, _, _) => {
                push(
                    &mut violations,
                    "reachable_flag",
                    lineno,
                    format!("reachable must be 0 or 1, found `{flag}`"),
                );
                continue;
            }
        };
        if source >= target {
            push(
                &mut violations,
                "pair_order",
                lineno,
                format!("source {source} must be below target {target}"),
            );
        }
        if let Some(h) = &header {
            if target as usize >= h.machines {
                push(
                    &mut violations,
                    "machine_range",
                    lineno,
                    format!("target {target} outside {} machines", h.machines),
                );
            }
            if epoch as usize >= h.epochs {
                push(
                    &mut violations,
                    "epoch_range",
                    lineno,
                    format!("epoch {epoch} outside {} epochs", h.epochs),
                );
            }
        }
        let key = (epoch, source, target);
        if last_key.is_some_and(|last| key <= last) {
            push(
                &mut violations,
                "record_order",
                lineno,
                "records must be strictly increasing by (epoch, source, target)".into(),
            );
        }
        last_key = Some(last_key.map_or(key, |l| l.max(key)));
        records.push(LinkRecord {
            epoch,
            source,
            target,
            link,
        });
    }

    let Some(header) = header else {
        return Ok((None, violations));
    };
    let pairs = header.machines * (header.machines - 1) / 2;
    let mut epochs: Vec<Vec<LinkRecord>> = vec![Vec::new(); header.epochs];
    for r in records {
        if let Some(e) = epochs.get_mut(r.epoch as usize) {
            e.push(r);
        }
    }
    for (k, e) in epochs.iter().enumerate() {
        if e.len() != pairs {
            push(
                &mut violations,
                "epoch_incomplete",
                0,
                format!("epoch {k} has {} of {pairs} pair records", e.len()),
            );
        }
    }
    Ok((Some(Trace { header, epochs }), violations))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayClock {
    /// Apply epochs back to back without waiting.
    Simulated,
    /// Apply epoch `k` at `k * step_s` after replay start.
    Wallclock,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochReport {
    pub epoch: usize,
    pub created: usize,
    pub removed: usize,
    pub modified: usize,
    pub apply_ns: u64,
    /// Wallclock mode only: applying took longer than one step.
    pub overrun: bool,
}

impl EpochReport {
    pub fn updates(&self) -> usize {
        self.created + self.removed + self.modified
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub epochs: Vec<EpochReport>,
}

impl ReplayReport {
    pub fn overruns(&self) -> usize {
        self.epochs.iter().filter(|e| e.overrun).count()
    }
}

/// Incremental trace application against one backend.
pub struct Replayer<'a> {
    trace: &'a Trace,
    applied: MeshSnapshot,
}

impl<'a> Replayer<'a> {
    pub fn new(trace: &'a Trace, backend: &dyn FabricBackend) -> Result<Self, TraceError> {
        if backend.machine_count() != trace.header.machines {
            return Err(TraceError::MachineMismatch {
                trace: trace.header.machines,
                backend: backend.machine_count(),
            });
        }
        Ok(Self {
            trace,
            applied: MeshSnapshot::anonymous(trace.header.machines)?,
        })
    }

    /// Bring the backend to epoch `k`, returning the updates issued.
    pub fn apply_epoch(&mut self, k: usize, backend: &dyn FabricBackend) -> Result<Vec<LinkUpdate>, TraceError> {
        let next = self.trace.mesh(k)?;
        let updates = topology::diff(&self.applied, &next)?;
        apply_mesh_updates(backend, &updates);
        self.applied = next;
        Ok(updates)
    }

    pub fn applied(&self) -> &MeshSnapshot {
        &self.applied
    }
}

pub fn replay(trace: &Trace, backend: &dyn FabricBackend, clock: ReplayClock) -> Result<ReplayReport, TraceError> {
    replay_with(trace, backend, clock, |_, _| Ok(()))
}

/// Replay with a callback that sees each epoch's updates after they are applied.
pub fn replay_with<F>(
    trace: &Trace,
    backend: &dyn FabricBackend,
    clock: ReplayClock,
    mut on_epoch: F,
) -> Result<ReplayReport, TraceError>
where
    F: FnMut(usize, &[LinkUpdate]) -> Result<(), TraceError>,
{
    let mut replayer = Replayer::new(trace, backend)?;
    let step = Duration::from_secs_f64(trace.header.step_s);
    let start = Instant::now();
    let mut report = ReplayReport::default();

    for k in 0..trace.epochs.len() {
        if clock == ReplayClock::Wallclock {
            let due = step * k as u32;
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let began = Instant::now();
        let updates = replayer.apply_epoch(k, backend)?;
        let took = began.elapsed();
        let count = |kind| updates.iter().filter(|u| u.kind == kind).count();
        report.epochs.push(EpochReport {
            epoch: k,
            created: count(ChangeKind::Created),
            removed: count(ChangeKind::Removed),
            modified: count(ChangeKind::Modified),
            apply_ns: took.as_nanos() as u64,
            overrun: clock == ReplayClock::Wallclock && took > step,
        });
        on_epoch(k, &updates)?;
    }
    Ok(report)
}
