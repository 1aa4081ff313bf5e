//! Toolkit configuration file (TOML).
//!
//! ```toml
//! [sweep]
//! iterations = 5
//! token_target = 512
//! idle_seconds = 15.0
//! timeout_s = 600
//! quantizations = ["int4", "none"]
//!
//! [sampler]
//! backend = "mock"          # or the name of a device adapter
//! interval_s = 0.25
//! trace = "ramp.trace"      # relative to this file
//! virtual_seed = 7          # mock only: reproducible virtual clock
//!
//! [workload]
//! command = "python shim.py --model {model} --tokens {tokens}"
//!
//! [[devices]]
//! name = "AGX Orin Devkit"
//! cuda_cores = 2048
//! memory_mb = 32768
//! power_models = ["MAXN", "50W", "30W", "15W"]
//!
//! [[models]]
//! id = "pythia-70m-deduped"
//! parameter_count = 70000000
//! aliases = ["70m"]
//! ```
//!
//! Without `[[devices]]` and `[[models]]` the built-in Jetson Orin and
//! Pythia matrix is used.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{
    reference_plan, DeviceProfile, ModelSpec, Quantization, SweepPlan, DEFAULT_IDLE_SECONDS,
    DEFAULT_ITERATIONS, DEFAULT_TOKEN_TARGET,
};
use crate::orchestrator::{WorkloadTemplate, DEFAULT_TIMEOUT};
use crate::sampler::{Backend, MockTrace, SamplerSpec, DEFAULT_INTERVAL_S};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    sampler: RawSampler,
    workload: Option<RawWorkload>,
    devices: Option<Vec<DeviceProfile>>,
    models: Option<Vec<ModelSpec>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    iterations: Option<u32>,
    token_target: Option<u32>,
    idle_seconds: Option<f64>,
    timeout_s: Option<f64>,
    quantizations: Option<Vec<Quantization>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampler {
    backend: Option<String>,
    interval_s: Option<f64>,
    trace: Option<PathBuf>,
    virtual_seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkload {
    command: String,
}

#[derive(Debug, Clone)]
pub struct ToolConfig {
    pub plan: SweepPlan,
    pub sampler: SamplerSpec,
    /// Absent when the file only describes a matrix.
    pub workload: Option<WorkloadTemplate>,
    pub timeout: Duration,
}

impl ToolConfig {
    pub fn workload(&self) -> Result<&WorkloadTemplate, ConfigError> {
        self.workload
            .as_ref()
            .ok_or_else(|| invalid("workload.command", "required to run a sweep"))
    }
}

pub fn load_config(path: &Path) -> Result<ToolConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Parses configuration text; relative trace paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ToolConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;

    let mut plan = match (raw.devices, raw.models) {
        (None, None) => reference_plan(),
        (Some(devices), Some(models)) => SweepPlan::new(devices, models),
        (None, Some(_)) => return Err(invalid("devices", "required when models are given")),
        (Some(_), None) => return Err(invalid("models", "required when devices are given")),
    };
    plan.iterations = raw.sweep.iterations.unwrap_or(DEFAULT_ITERATIONS);
    plan.token_target = raw.sweep.token_target.unwrap_or(DEFAULT_TOKEN_TARGET);
    plan.idle_seconds = raw.sweep.idle_seconds.unwrap_or(DEFAULT_IDLE_SECONDS);
    if let Some(q) = raw.sweep.quantizations {
        plan.quantizations = q;
    }
    plan.validate()
        .map_err(|e| ConfigError::Parse(e.to_string()))?;

    let timeout = match raw.sweep.timeout_s {
        None => DEFAULT_TIMEOUT,
        Some(s) if s.is_finite() && s > 0.0 => Duration::from_secs_f64(s),
        Some(s) => {
            return Err(invalid(
                "sweep.timeout_s",
                format!("must be a positive number, got {s}"),
            ))
        }
    };

    let backend = match raw.sampler.backend.as_deref().unwrap_or("mock") {
        "mock" => {
            let trace = match &raw.sampler.trace {
                None => MockTrace::constant(5.0, 0.0, 0.0),
                Some(rel) => {
                    let path = base.join(rel);
                    let text = fs::read_to_string(&path).map_err(|e| {
                        invalid("sampler.trace", format!("{}: {e}", path.display()))
                    })?;
                    MockTrace::parse(&text)
                        .map_err(|e| invalid("sampler.trace", format!("{}: {e}", path.display())))?
                }
            };
            Backend::Mock {
                trace,
                virtual_seed: raw.sampler.virtual_seed,
            }
        }
        other => {
            if raw.sampler.trace.is_some() || raw.sampler.virtual_seed.is_some() {
                return Err(invalid(
                    "sampler.trace",
                    "only valid with backend = \"mock\"",
                ));
            }
            Backend::External(other.to_string())
        }
    };
    let sampler = SamplerSpec {
        interval_s: raw.sampler.interval_s.unwrap_or(DEFAULT_INTERVAL_S),
        backend,
    };
    sampler
        .validate()
        .map_err(|e| invalid("sampler.interval_s", e))?;

    let workload = raw
        .workload
        .map(|w| WorkloadTemplate::parse(&w.command).map_err(|e| invalid("workload.command", e)))
        .transpose()?;

    Ok(ToolConfig {
        plan,
        sampler,
        workload,
        timeout,
    })
}
