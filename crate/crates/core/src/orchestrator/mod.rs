//! Event-driven experiment plans and their executor.

mod engine;
mod plan;

pub use engine::{
    run, run_scripted, AppHook, Engine, EventLog, FabricController, InjectError, Injector, LogRecord, NoopHook,
    Outcome, RecordingHook, RunError, RunMode,
};
pub use plan::{validate_plan, Action, ExperimentPlan, PlanError, PlanViolation, Rule, Trigger, PLAN_STARTED};
