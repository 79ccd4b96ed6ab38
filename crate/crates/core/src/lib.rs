//! Emulation of dynamic satellite networks on a fixed pool of machines.
//!
//! Orbital geometry drives a time-varying link graph, which is reduced to
//! end-to-end link state between emulated machines, recorded as a trace,
//! and replayed into a per-destination link fabric.

pub mod constellation;
pub mod fabric;
pub mod orchestrator;
pub mod telemetry;
pub mod topology;
pub mod tracegen;
