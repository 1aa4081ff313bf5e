//! Sequential execution of phase-marked workload runs.
//!
//! Every run spawns one workload process, reads its marker stream, and
//! samples telemetry for the whole lifetime of the process. Latency comes
//! from the workload's own timestamps; telemetry windows use the receipt
//! timestamps taken on the sampler's clock.

mod marker;
mod run;
mod workload;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::ConfigPoint;
use crate::sampler::TelemetrySample;

pub use marker::{
    format_event, format_tokens, parse_marker_line, Marker, MarkerError, MARKER_PREFIX,
};
pub use run::{
    run_single, run_single_observed, run_sweep, NoopObserver, RunSettings, SweepError,
    SweepObserver, DEFAULT_TIMEOUT,
};
pub use workload::{RunParams, TemplateError, WorkloadTemplate, PLACEHOLDERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    ModelLoad,
    Generate,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Idle, Phase::ModelLoad, Phase::Generate];

    pub fn marker_name(self) -> &'static str {
        match self {
            Phase::Idle => "IDLE",
            Phase::ModelLoad => "MODEL_LOAD",
            Phase::Generate => "GENERATE",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.marker_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Start,
    End,
}

impl Boundary {
    pub fn marker_name(self) -> &'static str {
        match self {
            Boundary::Start => "START",
            Boundary::End => "END",
        }
    }
}

/// The six boundaries of a complete run, in protocol order.
pub const EVENT_SEQUENCE: [(Phase, Boundary); 6] = [
    (Phase::Idle, Boundary::Start),
    (Phase::Idle, Boundary::End),
    (Phase::ModelLoad, Boundary::Start),
    (Phase::ModelLoad, Boundary::End),
    (Phase::Generate, Boundary::Start),
    (Phase::Generate, Boundary::End),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub phase: Phase,
    pub boundary: Boundary,
    /// Seconds on the workload's own monotonic clock, when reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_workload: Option<f64>,
    /// Seconds on the run clock when the orchestrator received the marker.
    pub t_receipt: f64,
}

/// Reason strings recorded for failed runs.
pub mod failure {
    pub const SPAWN: &str = "spawn";
    pub const TIMEOUT: &str = "timeout";
    pub const CRASH: &str = "crash";
    pub const PROTOCOL: &str = "protocol";
    pub const SAMPLER: &str = "sampler";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed(String),
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Completed => f.write_str("completed"),
            RunStatus::Failed(reason) => write!(f, "failed ({reason})"),
        }
    }
}

/// Everything recorded for one iteration of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: ConfigPoint,
    pub iteration: u32,
    pub events: Vec<PhaseEvent>,
    pub samples: Vec<TelemetrySample>,
    pub tokens_generated: u64,
    pub status: RunStatus,
}

impl RunLog {
    pub fn event(&self, phase: Phase, boundary: Boundary) -> Option<&PhaseEvent> {
        self.events
            .iter()
            .find(|e| e.phase == phase && e.boundary == boundary)
    }

    /// Receipt-clock window of `phase`, if both boundaries were seen.
    pub fn window(&self, phase: Phase) -> Option<(f64, f64)> {
        let start = self.event(phase, Boundary::Start)?;
        let end = self.event(phase, Boundary::End)?;
        Some((start.t_receipt, end.t_receipt))
    }

    /// Checks the structural invariants of a log; returns the first
    /// violation found.
    pub fn check(&self) -> Result<(), String> {
        for w in self.events.windows(2) {
            if w[1].t_receipt < w[0].t_receipt {
                return Err("events are not ordered by receipt time".into());
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            match EVENT_SEQUENCE.get(i) {
                Some(&(p, b)) if p == e.phase && b == e.boundary => {}
                _ => {
                    return Err(format!(
                        "event {i} ({} {:?}) is out of order",
                        e.phase, e.boundary
                    ))
                }
            }
        }
        for phase in Phase::ALL {
            if let (Some(s), Some(e)) = (
                self.event(phase, Boundary::Start),
                self.event(phase, Boundary::End),
            ) {
                if let (Some(a), Some(b)) = (s.t_workload, e.t_workload) {
                    if b < a {
                        return Err(format!(
                            "{phase} ends before it starts on the workload clock"
                        ));
                    }
                }
            }
        }
        for w in self.samples.windows(2) {
            if w[1].t <= w[0].t {
                return Err("sample times do not strictly increase".into());
            }
        }
        for s in &self.samples {
            if !(s.power_w >= 0.0 && s.gpu_mem_mb >= 0.0 && s.ram_mb >= 0.0) {
                return Err(format!("negative or NaN telemetry at t={}", s.t));
            }
        }
        if self.status.is_completed() {
            if self.events.len() != EVENT_SEQUENCE.len() {
                return Err("completed run is missing phase events".into());
            }
            if self.tokens_generated == 0 {
                return Err("completed run generated no tokens".into());
            }
        }
        Ok(())
    }
}
