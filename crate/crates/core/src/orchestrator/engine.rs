use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::plan::{seconds_to_us, validate_plan, Action, ExperimentPlan, PlanViolation, Trigger, PLAN_STARTED};
use crate::fabric::{FabricBackend, LinkKey, LinkParams};
use crate::topology::MachineId;
use crate::tracegen::{Replayer, Trace, TraceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Logical time jumps from item to item.
    Simulated,
    /// Items wait for their wall-clock due time.
    Wallclock,
}

/// Receives application commands from the plan.
pub trait AppHook {
    fn command(&mut self, now_us: u64, target: &str, command: &str) -> Result<(), String>;
}

/// Accepts every command.
#[derive(Debug, Default)]
pub struct NoopHook;

impl AppHook for NoopHook {
    fn command(&mut self, _: u64, _: &str, _: &str) -> Result<(), String> {
        Ok(())
    }
}

/// Records every command it receives.
#[derive(Debug, Default)]
pub struct RecordingHook {
    pub calls: Vec<(u64, String, String)>,
}

impl AppHook for RecordingHook {
    fn command(&mut self, now_us: u64, target: &str, command: &str) -> Result<(), String> {
        self.calls.push((now_us, target.to_string(), command.to_string()));
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("plan is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidPlan(Vec<PlanViolation>),
    #[error(transparent)]
    Inject(#[from] InjectError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("strict run aborted: {} failed at {} us", .record.action, .record.logical_time_us)]
    Aborted { record: Box<LogRecord>, log: EventLog },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InjectError {
    #[error("event `{0}` is not declared external")]
    Undeclared(String),
    #[error("run is not active")]
    NotRunning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Failed,
    Injected,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Ok => "ok",
            Outcome::Failed => "failed",
            Outcome::Injected => "injected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub logical_time_us: u64,
    pub event: String,
    pub rule: String,
    pub action: String,
    pub outcome: Outcome,
    #[serde(skip)]
    pub applied: Option<Action>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub records: Vec<LogRecord>,
    /// Wallclock mode: largest lateness of any processed item.
    pub max_drift_us: u64,
}

impl EventLog {
    /// Write the log as `logical_time_us,event,rule,action,outcome` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["logical_time_us", "event", "rule", "action", "outcome"])?;
        for r in &self.records {
            w.write_record([
                r.logical_time_us.to_string(),
                r.event.clone(),
                r.rule.clone(),
                r.action.clone(),
                r.outcome.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("utf-8 csv")
    }

    /// Re-apply the successful fabric actions of this log, in order, to `backend`.
    pub fn replay_onto(&self, backend: &dyn FabricBackend) {
        let mut ctl = FabricController::new(backend);
        for r in &self.records {
            if let (Outcome::Ok, Some(action)) = (r.outcome, &r.applied) {
                let _ = ctl.apply(action);
            }
        }
    }

    /// Time of the first record whose action starts with `prefix`.
    pub fn first_time_of(&self, prefix: &str) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.action.starts_with(prefix))
            .map(|r| r.logical_time_us)
    }
}

/// Applies link-level actions to a backend, remembering what was removed so
/// it can be restored.
pub struct FabricController<'a> {
    backend: &'a dyn FabricBackend,
    dropped: BTreeMap<LinkKey, LinkParams>,
    off: BTreeMap<u32, Vec<(LinkKey, LinkParams)>>,
}

impl<'a> FabricController<'a> {
    pub fn new(backend: &'a dyn FabricBackend) -> Self {
        Self {
            backend,
            dropped: BTreeMap::new(),
            off: BTreeMap::new(),
        }
    }

    fn check_machine(&self, m: u32) -> Result<(), String> {
        if (m as usize) < self.backend.machine_count() {
            Ok(())
        } else {
            Err(format!("machine {m} outside {} machines", self.backend.machine_count()))
        }
    }

    fn pair(&self, a: u32, b: u32) -> Result<LinkKey, String> {
        self.check_machine(a)?;
        self.check_machine(b)?;
        if a == b {
            return Err("a link needs two distinct machines".into());
        }
        Ok(LinkKey::new(a, b))
    }

    /// Apply a fabric action; application actions are rejected.
    pub fn apply(&mut self, action: &Action) -> Result<(), String> {
        match action {
            Action::SetLink { a, b, .. } => {
                let key = self.pair(*a, *b)?;
                let params = action.link_params().expect("set_link has params")?;
                self.backend.set_link(key, params);
                self.backend.set_link(key.reversed(), params);
                self.dropped.remove(&key);
                self.dropped.remove(&key.reversed());
                Ok(())
            }
            Action::DropLink { a, b } => {
                let key = self.pair(*a, *b)?;
                let fwd = self.backend.get_link(key);
                let rev = self.backend.get_link(key.reversed());
                if fwd.is_none() && rev.is_none() {
                    return Err(format!("no link between {a} and {b}"));
                }
                for (k, p) in [(key, fwd), (key.reversed(), rev)] {
                    if let Some(p) = p {
                        self.backend.remove_link(k);
                        self.dropped.insert(k, p);
                    }
                }
                Ok(())
            }
            Action::RestoreLink { a, b } => {
                let key = self.pair(*a, *b)?;
                let saved: Vec<_> = [key, key.reversed()]
                    .into_iter()
                    .filter_map(|k| self.dropped.remove(&k).map(|p| (k, p)))
                    .collect();
                if saved.is_empty() {
                    return Err(format!("link between {a} and {b} was not dropped"));
                }
                for (k, p) in saved {
                    self.backend.set_link(k, p);
                }
                Ok(())
            }
            Action::NodeOff { node } => {
                self.check_machine(*node)?;
                if self.off.contains_key(node) {
                    return Err(format!("node {node} is already off"));
                }
                let me = MachineId(*node);
                let links: Vec<_> = self
                    .backend
                    .table()
                    .into_iter()
                    .filter(|(k, _)| k.src == me || k.dst == me)
                    .collect();
                for (k, _) in &links {
                    self.backend.remove_link(*k);
                }
                self.off.insert(*node, links);
                Ok(())
            }
            Action::NodeOn { node } => {
                self.check_machine(*node)?;
                let links = self.off.remove(node).ok_or_else(|| format!("node {node} is not off"))?;
                for (k, p) in links {
                    self.backend.set_link(k, p);
                }
                Ok(())
            }
            Action::AppCommand { .. } | Action::Emit { .. } => Err(format!("{} is not a fabric action", action.kind())),
        }
    }
}

#[derive(Debug)]
struct InjectState {
    active: bool,
    pending: Vec<(String, Option<String>)>,
}

/// Thread-safe handle for injecting external events into a running plan.
#[derive(Debug, Clone)]
pub struct Injector {
    external: Arc<BTreeSet<String>>,
    state: Arc<Mutex<InjectState>>,
}

impl Injector {
    /// Queue `name` at the engine's current logical time.
    pub fn inject(&self, name: &str, payload: Option<&str>) -> Result<(), InjectError> {
        if !self.external.contains(name) {
            return Err(InjectError::Undeclared(name.to_string()));
        }
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if !state.active {
            return Err(InjectError::NotRunning);
        }
        state.pending.push((name.to_string(), payload.map(str::to_string)));
        Ok(())
    }

    fn drain(&self) -> Vec<(String, Option<String>)> {
        std::mem::take(&mut self.state.lock().unwrap_or_else(|e| e.into_inner()).pending)
    }

    fn close(&self) {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).active = false;
    }
}

#[derive(Debug)]
enum Item {
    Event { name: String },
    Injected { name: String, payload: Option<String> },
    Fire { rule: usize, trigger: String },
    TraceEpoch(usize),
}

#[derive(Debug)]
struct Queued {
    time_us: u64,
    /// Trace epochs sort before plan items due at the same time.
    class: u8,
    seq: u64,
    item: Item,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time_us, self.class, self.seq) == (other.time_us, other.class, other.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time_us, self.class, self.seq).cmp(&(other.time_us, other.class, other.seq))
    }
}

/// Discrete-event executor for one plan.
///
/// Items at the same logical time run in the order they were queued, which
/// is emission order; rules triggered by one event are queued in declaration
/// order. A trace epoch due at some time is applied before any plan item at
/// that time.
pub struct Engine<'a> {
    plan: &'a ExperimentPlan,
    mode: RunMode,
    fabric: FabricController<'a>,
    hook: &'a mut dyn AppHook,
    queue: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    now_us: u64,
    horizon_us: Option<u64>,
    log: EventLog,
    injector: Injector,
    trace: Option<(&'a Trace, Replayer<'a>)>,
    started: Instant,
}

impl<'a> Engine<'a> {
    pub fn new(
        plan: &'a ExperimentPlan,
        mode: RunMode,
        backend: &'a dyn FabricBackend,
        hook: &'a mut dyn AppHook,
    ) -> Result<Self, RunError> {
        validate_plan(plan).map_err(RunError::InvalidPlan)?;
        let injector = Injector {
            external: Arc::new(plan.external_events.iter().cloned().collect()),
            state: Arc::new(Mutex::new(InjectState {
                active: true,
                pending: Vec::new(),
            })),
        };
        let mut engine = Self {
            plan,
            mode,
            fabric: FabricController::new(backend),
            hook,
            queue: BinaryHeap::new(),
            seq: 0,
            now_us: 0,
            horizon_us: plan.horizon_us(),
            log: EventLog::default(),
            injector,
            trace: None,
            started: Instant::now(),
        };
        engine.push(
            0,
            Item::Event {
                name: PLAN_STARTED.to_string(),
            },
        );
        for (idx, rule) in plan.rules.iter().enumerate() {
            if let Ok(Trigger::AtTime { time_us }) = rule.trigger() {
                engine.push(
                    time_us,
                    Item::Fire {
                        rule: idx,
                        trigger: "timer".into(),
                    },
                );
            }
        }
        Ok(engine)
    }

    /// Replay `trace` into the fabric alongside the plan, one epoch per step.
    pub fn with_trace(mut self, trace: &'a Trace) -> Result<Self, RunError> {
        let replayer = Replayer::new(trace, self.fabric.backend)?;
        let step_us = seconds_to_us(trace.header.step_s).map_err(TraceError::InvalidParams)?;
        for k in 0..trace.epochs.len() {
            self.push(k as u64 * step_us, Item::TraceEpoch(k));
        }
        self.trace = Some((trace, replayer));
        Ok(self)
    }

    pub fn injector(&self) -> Injector {
        self.injector.clone()
    }

    /// Queue an external event at a fixed logical time.
    pub fn schedule_injection(&mut self, time_us: u64, name: &str, payload: Option<&str>) -> Result<(), InjectError> {
        if !self.injector.external.contains(name) {
            return Err(InjectError::Undeclared(name.to_string()));
        }
        self.push(
            time_us.max(self.now_us),
            Item::Injected {
                name: name.to_string(),
                payload: payload.map(str::to_string),
            },
        );
        Ok(())
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    fn push(&mut self, time_us: u64, item: Item) {
        if self.horizon_us.is_some_and(|h| time_us > h) {
            return;
        }
        let class = u8::from(!matches!(item, Item::TraceEpoch(_)));
        self.queue.push(Reverse(Queued {
            time_us,
            class,
            seq: self.seq,
            item,
        }));
        self.seq += 1;
    }

    fn take_injections(&mut self) {
        for (name, payload) in self.injector.drain() {
            self.push(self.now_us, Item::Injected { name, payload });
        }
    }

    fn wait_until(&mut self, time_us: u64) {
        if self.mode != RunMode::Wallclock {
            return;
        }
        let due = Duration::from_micros(time_us);
        if let Some(wait) = due.checked_sub(self.started.elapsed()) {
            std::thread::sleep(wait);
        }
        let late = self.started.elapsed().saturating_sub(due).as_micros() as u64;
        self.log.max_drift_us = self.log.max_drift_us.max(late);
    }

    /// Process one queued item. Returns `false` when nothing is queued.
    pub fn step(&mut self) -> Result<bool, RunError> {
        self.take_injections();
        let Some(Reverse(next)) = self.queue.pop() else {
            return Ok(false);
        };
        self.wait_until(next.time_us);
        self.now_us = self.now_us.max(next.time_us);
        self.process(next.item)?;
        Ok(true)
    }

    /// Process every item due at or before `time_us`, then advance to it.
    pub fn run_until(&mut self, time_us: u64) -> Result<(), RunError> {
        loop {
            self.take_injections();
            match self.queue.peek() {
                Some(Reverse(q)) if q.time_us <= time_us => {
                    self.step()?;
                }
                _ => break,
            }
        }
        self.wait_until(time_us);
        self.now_us = self.now_us.max(time_us);
        Ok(())
    }

    /// Run to completion and close injection.
    pub fn finish(mut self) -> Result<EventLog, RunError> {
        loop {
            if self.step()? {
                continue;
            }
            // wallclock runs with a horizon stay open for external events
            match (self.mode, self.horizon_us) {
                (RunMode::Wallclock, Some(h)) if (self.started.elapsed().as_micros() as u64) < h => {
                    std::thread::sleep(Duration::from_millis(1));
                }
                _ => break,
            }
        }
        self.injector.close();
        Ok(self.log)
    }

    fn process(&mut self, item: Item) -> Result<(), RunError> {
        match item {
            Item::Event { name } => self.dispatch(&name),
            Item::Injected { name, payload } => {
                self.log.records.push(LogRecord {
                    logical_time_us: self.now_us,
                    event: name.clone(),
                    rule: String::new(),
                    action: match payload {
                        Some(p) => format!("inject({p})"),
                        None => "inject".into(),
                    },
                    outcome: Outcome::Injected,
                    applied: None,
                });
                self.dispatch(&name);
            }
            Item::TraceEpoch(k) => {
                let (_, replayer) = self.trace.as_mut().expect("trace items need a trace");
                let updates = replayer.apply_epoch(k, self.fabric.backend)?;
                self.log.records.push(LogRecord {
                    logical_time_us: self.now_us,
                    event: "trace_epoch".into(),
                    rule: String::new(),
                    action: format!("apply_epoch({k},updates={})", updates.len()),
                    outcome: Outcome::Ok,
                    applied: None,
                });
            }
            Item::Fire { rule, trigger } => self.fire(rule, &trigger)?,
        }
        Ok(())
    }

    fn dispatch(&mut self, event: &str) {
        let now = self.now_us;
        let plan = self.plan;
        for (idx, rule) in plan.rules.iter().enumerate() {
            if let Ok(Trigger::OnEvent { event: e, delay_us }) = rule.trigger() {
                if e == event {
                    self.push(
                        now + delay_us,
                        Item::Fire {
                            rule: idx,
                            trigger: event.to_string(),
                        },
                    );
                }
            }
        }
    }

    fn fire(&mut self, rule_idx: usize, trigger: &str) -> Result<(), RunError> {
        let plan = self.plan;
        let rule = &plan.rules[rule_idx];
        for action in &rule.actions {
            let result = match action {
                Action::AppCommand { target, command } => self.hook.command(self.now_us, target, command),
                Action::Emit { .. } => Ok(()),
                fabric => self.fabric.apply(fabric),
            };
            let outcome = if result.is_ok() { Outcome::Ok } else { Outcome::Failed };
            let record = LogRecord {
                logical_time_us: self.now_us,
                event: trigger.to_string(),
                rule: rule.id.clone(),
                action: action.to_string(),
                outcome,
                applied: action.touches_fabric().then(|| action.clone()),
            };
            self.log.records.push(record.clone());
            let now = self.now_us;
            match result {
                Ok(()) => {
                    if let Action::Emit { event } = action {
                        self.push(now, Item::Event { name: event.clone() });
                    }
                    self.push(
                        now,
                        Item::Event {
                            name: action.done_event(),
                        },
                    );
                }
                Err(_) => {
                    if plan.strict {
                        self.injector.close();
                        return Err(RunError::Aborted {
                            record: Box::new(record),
                            log: std::mem::take(&mut self.log),
                        });
                    }
                    self.push(
                        now,
                        Item::Event {
                            name: action.failed_event(),
                        },
                    );
                }
            }
        }
        Ok(())
    }
}

/// Run `plan` to completion.
pub fn run(
    plan: &ExperimentPlan,
    mode: RunMode,
    backend: &dyn FabricBackend,
    hook: &mut dyn AppHook,
) -> Result<EventLog, RunError> {
    Engine::new(plan, mode, backend, hook)?.finish()
}

/// Run `plan` with external events injected at fixed logical times.
pub fn run_scripted(
    plan: &ExperimentPlan,
    mode: RunMode,
    backend: &dyn FabricBackend,
    hook: &mut dyn AppHook,
    script: &[(u64, &str)],
) -> Result<EventLog, RunError> {
    let mut engine = Engine::new(plan, mode, backend, hook)?;
    for &(time_us, name) in script {
        engine.schedule_injection(time_us, name, None)?;
    }
    engine.finish()
}
