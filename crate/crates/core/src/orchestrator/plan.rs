use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::LinkParams;

/// Event emitted once when a run starts.
pub const PLAN_STARTED: &str = "plan_started";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Events that may only arrive through injection.
    #[serde(default)]
    pub external_events: Vec<String>,
    /// Logical end of the run; items scheduled later are discarded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_s: Option<f64>,
    /// Abort on the first failed action.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_event: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_s: Option<f64>,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trigger<'a> {
    AtTime { time_us: u64 },
    OnEvent { event: &'a str, delay_us: u64 },
}

impl Rule {
    /// Resolved trigger, or a description of why the rule has none.
    pub fn trigger(&self) -> Result<Trigger<'_>, String> {
        match (&self.at_time_s, &self.on_event) {
            (Some(t), None) => {
                if self.delay_s.is_some() {
                    return Err("delay_s only applies to on_event triggers".into());
                }
                Ok(Trigger::AtTime {
                    time_us: seconds_to_us(*t)?,
                })
            }
            (None, Some(event)) => Ok(Trigger::OnEvent {
                event,
                delay_us: seconds_to_us(self.delay_s.unwrap_or(0.0))?,
            }),
            (Some(_), Some(_)) => Err("rule has both at_time_s and on_event".into()),
            (None, None) => Err("rule needs at_time_s or on_event".into()),
        }
    }
}

pub(crate) fn seconds_to_us(s: f64) -> Result<u64, String> {
    if s.is_finite() && s >= 0.0 && s * 1e6 < u64::MAX as f64 {
        Ok((s * 1e6).round() as u64)
    } else {
        Err(format!("time {s} must be finite and non-negative"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    SetLink {
        a: u32,
        b: u32,
        delay_us: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate_kbps: Option<u64>,
        #[serde(default)]
        loss_ppm: u32,
    },
    DropLink {
        a: u32,
        b: u32,
    },
    RestoreLink {
        a: u32,
        b: u32,
    },
    NodeOff {
        node: u32,
    },
    NodeOn {
        node: u32,
    },
    AppCommand {
        target: String,
        command: String,
    },
    Emit {
        event: String,
    },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::SetLink { .. } => "set_link",
            Action::DropLink { .. } => "drop_link",
            Action::RestoreLink { .. } => "restore_link",
            Action::NodeOff { .. } => "node_off",
            Action::NodeOn { .. } => "node_on",
            Action::AppCommand { .. } => "app_command",
            Action::Emit { .. } => "emit",
        }
    }

    pub fn done_event(&self) -> String {
        format!("{}_done", self.kind())
    }

    pub fn failed_event(&self) -> String {
        format!("{}_failed", self.kind())
    }

    pub fn set_link(a: u32, b: u32, params: LinkParams) -> Self {
        Action::SetLink {
            a,
            b,
            delay_us: params.delay_us(),
            rate_kbps: params.rate_kbps(),
            loss_ppm: params.loss_ppm(),
        }
    }

    pub(crate) fn link_params(&self) -> Option<Result<LinkParams, String>> {
        match self {
            Action::SetLink {
                delay_us,
                rate_kbps,
                loss_ppm,
                ..
            } => Some(LinkParams::new(*delay_us, *rate_kbps, *loss_ppm).map_err(|e| e.to_string())),
            _ => None,
        }
    }

    pub(crate) fn touches_fabric(&self) -> bool {
        !matches!(self, Action::AppCommand { .. } | Action::Emit { .. })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::SetLink {
                a,
                b,
                delay_us,
                rate_kbps,
                loss_ppm,
            } => {
                let rate = rate_kbps.map_or_else(|| "unlimited".to_string(), |r| r.to_string());
                write!(
                    f,
                    "set_link({a},{b},delay_us={delay_us},rate_kbps={rate},loss_ppm={loss_ppm})"
                )
            }
            Action::DropLink { a, b } => write!(f, "drop_link({a},{b})"),
            Action::RestoreLink { a, b } => write!(f, "restore_link({a},{b})"),
            Action::NodeOff { node } => write!(f, "node_off({node})"),
            Action::NodeOn { node } => write!(f, "node_on({node})"),
            Action::AppCommand { target, command } => write!(f, "app_command({target},{command})"),
            Action::Emit { event } => write!(f, "emit({event})"),
        }
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("plan does not parse: {0}")]
    Parse(String),
    #[error("plan has {} violation(s)", .0.len())]
    Invalid(Vec<PlanViolation>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanViolation {
    pub code: &'static str,
    pub rule: Option<String>,
    pub message: String,
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.rule {
            Some(r) => write!(f, "{}: rule {r}: {}", self.code, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml_str(text: &str) -> Result<Self, PlanError> {
        toml::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))
    }

    /// Parse and validate.
    pub fn load(text: &str) -> Result<Self, PlanError> {
        let plan = Self::from_toml_str(text)?;
        validate_plan(&plan).map_err(PlanError::Invalid)?;
        Ok(plan)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    pub fn horizon_us(&self) -> Option<u64> {
        self.horizon_s.and_then(|h| seconds_to_us(h).ok())
    }

    /// Every event name some source can produce.
    pub fn producible_events(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> = self.external_events.iter().cloned().collect();
        names.insert(PLAN_STARTED.to_string());
        for action in self.rules.iter().flat_map(|r| &r.actions) {
            names.extend(emissions(action));
        }
        names
    }
}

/// Events an action can emit when it completes.
fn emissions(action: &Action) -> Vec<String> {
    let mut out = vec![action.done_event(), action.failed_event()];
    if let Action::Emit { event } = action {
        out.push(event.clone());
    }
    out
}

/// Semantic checks on a parsed plan.
pub fn validate_plan(plan: &ExperimentPlan) -> Result<(), Vec<PlanViolation>> {
    let mut out = Vec::new();
    let mut v = |code, rule: Option<&str>, message: String| {
        out.push(PlanViolation {
            code,
            rule: rule.map(str::to_string),
            message,
        })
    };

    if let Some(h) = plan.horizon_s {
        if let Err(msg) = seconds_to_us(h) {
            v("invalid_time", None, format!("horizon_s: {msg}"));
        }
    }

    let producible = plan.producible_events();
    let mut ids = BTreeSet::new();
    // event -> (emitted event, delay) edges for cycle detection
    let mut graph: BTreeMap<&str, Vec<(String, u64)>> = BTreeMap::new();

    for rule in &plan.rules {
        let id = Some(rule.id.as_str());
        if !ids.insert(rule.id.as_str()) {
            v("duplicate_rule", id, "rule id used more than once".into());
        }
        if rule.actions.is_empty() {
            v("empty_actions", id, "action list is empty".into());
        }
        for action in &rule.actions {
            match action {
                Action::SetLink { a, b, .. } | Action::DropLink { a, b } | Action::RestoreLink { a, b } if a == b => {
                    v("self_link", id, format!("{action} links a machine to itself"));
                }
                _ => {}
            }
            if let Some(Err(msg)) = action.link_params() {
                v("invalid_link_params", id, format!("{action}: {msg}"));
            }
        }
        match rule.trigger() {
            Err(msg) => v("invalid_trigger", id, msg),
            Ok(Trigger::AtTime { .. }) => {}
            Ok(Trigger::OnEvent { event, delay_us }) => {
                if !producible.contains(event) {
                    v(
                        "unreachable_trigger",
                        id,
                        format!("event `{event}` is never emitted and not declared external"),
                    );
                }
                let edges = graph.entry(event).or_default();
                for action in &rule.actions {
                    edges.extend(emissions(action).into_iter().map(|e| (e, delay_us)));
                }
            }
        }
    }

    if let Some(cycle) = find_cycle(&graph, true) {
        v(
            "zero_delay_cycle",
            None,
            format!("events {} trigger each other without delay", cycle.join(" -> ")),
        );
    } else if plan.horizon_s.is_none() {
        if let Some(cycle) = find_cycle(&graph, false) {
            v(
                "unbounded_cycle",
                None,
                format!("events {} repeat forever; set horizon_s", cycle.join(" -> ")),
            );
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Depth-first search for a cycle, optionally restricted to zero-delay edges.
fn find_cycle(graph: &BTreeMap<&str, Vec<(String, u64)>>, zero_only: bool) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn visit(
        node: &str,
        graph: &BTreeMap<&str, Vec<(String, u64)>>,
        zero_only: bool,
        marks: &mut BTreeMap<String, Mark>,
        stack: &mut Vec<String>,
    ) -> Option<Vec<String>> {
        marks.insert(node.to_string(), Mark::Active);
        stack.push(node.to_string());
        for (next, delay) in graph.get(node).into_iter().flatten() {
            if zero_only && *delay != 0 {
                continue;
            }
            match marks.get(next.as_str()) {
                Some(Mark::Active) => {
                    let start = stack.iter().position(|s| s == next).expect("active node on stack");
                    let mut cycle = stack[start..].to_vec();
                    cycle.push(next.clone());
                    return Some(cycle);
                }
                Some(Mark::Done) => {}
                None => {
                    if let Some(c) = visit(next, graph, zero_only, marks, stack) {
                        return Some(c);
                    }
                }
            }
        }
        stack.pop();
        marks.insert(node.to_string(), Mark::Done);
        None
    }

    let mut marks = BTreeMap::new();
    for &node in graph.keys() {
        if !marks.contains_key(node) {
            if let Some(c) = visit(node, graph, zero_only, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}
