//! Benchmark sweeps of LLM workloads on edge devices: phase-marked runs,
//! power and memory telemetry, per-configuration metrics and
//! constraint-based configuration selection.

pub mod analysis;
pub mod cli;
pub mod clock;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod recommender;
pub mod sampler;
