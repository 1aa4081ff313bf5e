//! Configuration matrix types and sweep enumeration.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One device configuration that can be targeted by a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub cuda_cores: u32,
    pub memory_mb: u32,
    /// Power model names, most permissive first.
    pub power_models: Vec<String>,
}

impl DeviceProfile {
    pub fn new(name: &str, cuda_cores: u32, memory_mb: u32, power_models: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            cuda_cores,
            memory_mb,
            power_models: power_models.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The power model listed first, treated as the device's maximum.
    pub fn max_power_model(&self) -> Option<&str> {
        self.power_models.first().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantization {
    /// 4-bit parameter precision.
    Int4,
    /// Native precision.
    None,
}

impl Quantization {
    pub const ALL: [Quantization; 2] = [Quantization::Int4, Quantization::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Quantization::Int4 => "int4",
            Quantization::None => "none",
        }
    }

    /// Long-form label used in human-readable reports.
    pub fn describe(self) -> &'static str {
        match self {
            Quantization::Int4 => "4-bit quantization",
            Quantization::None => "no quantization",
        }
    }
}

impl fmt::Display for Quantization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown quantization '{0}' (expected int4 or none)")]
pub struct ParseQuantizationError(pub String);

impl FromStr for Quantization {
    type Err = ParseQuantizationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "int4" | "4bit" | "4-bit" | "q4" => Ok(Quantization::Int4),
            "none" | "no-quant" | "noquant" | "no_quant" | "fp16" => Ok(Quantization::None),
            _ => Err(ParseQuantizationError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub parameter_count: u64,
    /// Short names accepted when reading hand-written tables (e.g. "70m").
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl ModelSpec {
    pub fn new(id: &str, parameter_count: u64) -> Self {
        Self {
            id: id.to_string(),
            parameter_count,
            aliases: Vec::new(),
        }
    }

    pub fn with_alias(mut self, alias: &str) -> Self {
        self.aliases.push(alias.to_string());
        self
    }

    pub fn answers_to(&self, label: &str) -> bool {
        self.id == label || self.aliases.iter().any(|a| a == label)
    }
}

/// One cell of the sweep matrix. The 4-tuple is the join key for every
/// downstream table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub device: String,
    pub power_model: String,
    pub model: String,
    pub quantization: Quantization,
}

impl ConfigPoint {
    pub fn new(device: &str, power_model: &str, model: &str, quantization: Quantization) -> Self {
        Self {
            device: device.to_string(),
            power_model: power_model.to_string(),
            model: model.to_string(),
            quantization,
        }
    }

    /// "AGX Orin Devkit, 50W NV power model, pythia-1.4b-deduped, no quantization"
    pub fn describe(&self) -> String {
        format!(
            "{}, {} NV power model, {}, {}",
            self.device,
            self.power_model,
            self.model,
            self.quantization.describe()
        )
    }
}

impl fmt::Display for ConfigPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.device, self.power_model, self.model, self.quantization
        )
    }
}

pub const DEFAULT_ITERATIONS: u32 = 5;
pub const DEFAULT_TOKEN_TARGET: u32 = 512;
pub const DEFAULT_IDLE_SECONDS: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub devices: Vec<DeviceProfile>,
    pub models: Vec<ModelSpec>,
    pub quantizations: Vec<Quantization>,
    pub iterations: u32,
    pub token_target: u32,
    pub idle_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("devices: at least one device is required")]
    NoDevices,
    #[error("models: at least one model is required")]
    NoModels,
    #[error("quantizations: at least one quantization is required")]
    NoQuantizations,
    #[error("quantizations: '{0}' listed more than once")]
    DuplicateQuantization(Quantization),
    #[error("devices: duplicate device name '{0}'")]
    DuplicateDevice(String),
    #[error("devices[{index}].{field}: {reason}")]
    Device {
        index: usize,
        field: &'static str,
        reason: String,
    },
    #[error("models[{index}].{field}: {reason}")]
    Model {
        index: usize,
        field: &'static str,
        reason: String,
    },
    #[error("iterations: must be at least 1")]
    Iterations,
    #[error("token_target: must be at least 1")]
    TokenTarget,
    #[error("idle_seconds: must be a finite non-negative number, got {0}")]
    IdleSeconds(f64),
}

impl SweepPlan {
    /// A plan with default iteration count, token target and idle period.
    pub fn new(devices: Vec<DeviceProfile>, models: Vec<ModelSpec>) -> Self {
        Self {
            devices,
            models,
            quantizations: Quantization::ALL.to_vec(),
            iterations: DEFAULT_ITERATIONS,
            token_target: DEFAULT_TOKEN_TARGET,
            idle_seconds: DEFAULT_IDLE_SECONDS,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.devices.is_empty() {
            return Err(PlanError::NoDevices);
        }
        if self.models.is_empty() {
            return Err(PlanError::NoModels);
        }
        if self.quantizations.is_empty() {
            return Err(PlanError::NoQuantizations);
        }
        let mut seen_q = HashSet::new();
        for q in &self.quantizations {
            if !seen_q.insert(*q) {
                return Err(PlanError::DuplicateQuantization(*q));
            }
        }
        let mut names = HashSet::new();
        for (index, d) in self.devices.iter().enumerate() {
            let bad = |field, reason: &str| PlanError::Device {
                index,
                field,
                reason: reason.to_string(),
            };
            if d.name.trim().is_empty() {
                return Err(bad("name", "must not be empty"));
            }
            if !names.insert(d.name.as_str()) {
                return Err(PlanError::DuplicateDevice(d.name.clone()));
            }
            if d.cuda_cores == 0 {
                return Err(bad("cuda_cores", "must be positive"));
            }
            if d.memory_mb == 0 {
                return Err(bad("memory_mb", "must be positive"));
            }
            if d.power_models.is_empty() {
                return Err(bad("power_models", "must not be empty"));
            }
            let mut pms = HashSet::new();
            for pm in &d.power_models {
                if pm.trim().is_empty() {
                    return Err(bad("power_models", "names must not be empty"));
                }
                if !pms.insert(pm.as_str()) {
                    return Err(bad("power_models", &format!("duplicate '{pm}'")));
                }
            }
        }
        let mut labels = HashSet::new();
        for (index, m) in self.models.iter().enumerate() {
            let bad = |field, reason: String| PlanError::Model {
                index,
                field,
                reason,
            };
            if m.id.trim().is_empty() {
                return Err(bad("id", "must not be empty".into()));
            }
            if m.parameter_count == 0 {
                return Err(bad("parameter_count", "must be positive".into()));
            }
            for label in std::iter::once(&m.id).chain(&m.aliases) {
                if !labels.insert(label.as_str()) {
                    return Err(bad("id", format!("'{label}' is not unique")));
                }
            }
        }
        if self.iterations == 0 {
            return Err(PlanError::Iterations);
        }
        if self.token_target == 0 {
            return Err(PlanError::TokenTarget);
        }
        if !self.idle_seconds.is_finite() || self.idle_seconds < 0.0 {
            return Err(PlanError::IdleSeconds(self.idle_seconds));
        }
        Ok(())
    }

    pub fn device(&self, name: &str) -> Option<&DeviceProfile> {
        self.devices.iter().find(|d| d.name == name)
    }

    /// Looks a model up by id or alias.
    pub fn resolve_model(&self, label: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.answers_to(label))
    }

    /// Models in sweep order: ascending parameter count, plan order on ties.
    pub fn models_by_size(&self) -> Vec<&ModelSpec> {
        let mut models: Vec<&ModelSpec> = self.models.iter().collect();
        models.sort_by_key(|m| m.parameter_count);
        models
    }
}

/// Every (device, power model, model, quantization) combination of `plan`.
///
/// Order: device order in the plan, power-model order in each profile,
/// ascending parameter count, then `Int4` before `None`.
pub fn enumerate_sweep(plan: &SweepPlan) -> Result<Vec<ConfigPoint>, PlanError> {
    plan.validate()?;
    let models = plan.models_by_size();
    let mut quants = plan.quantizations.clone();
    quants.sort();

    let mut points = Vec::new();
    for device in &plan.devices {
        for pm in &device.power_models {
            for model in &models {
                for &q in &quants {
                    points.push(ConfigPoint::new(&device.name, pm, &model.id, q));
                }
            }
        }
    }
    Ok(points)
}

/// Why a configuration point is not part of a plan.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigViolation {
    #[error("unknown device '{0}'")]
    UnknownDevice(String),
    #[error("power model '{power_model}' is not defined for device '{device}'")]
    UnknownPowerModel { device: String, power_model: String },
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("quantization '{0}' is not part of the plan")]
    Quantization(Quantization),
}

/// `Ok` iff `point` is a member of `enumerate_sweep(plan)`.
pub fn validate_config(point: &ConfigPoint, plan: &SweepPlan) -> Result<(), ConfigViolation> {
    let device = plan
        .device(&point.device)
        .ok_or_else(|| ConfigViolation::UnknownDevice(point.device.clone()))?;
    if !device.power_models.contains(&point.power_model) {
        return Err(ConfigViolation::UnknownPowerModel {
            device: point.device.clone(),
            power_model: point.power_model.clone(),
        });
    }
    if !plan.models.iter().any(|m| m.id == point.model) {
        return Err(ConfigViolation::UnknownModel(point.model.clone()));
    }
    if !plan.quantizations.contains(&point.quantization) {
        return Err(ConfigViolation::Quantization(point.quantization));
    }
    Ok(())
}

/// Position of each configuration point in sweep order, used to order
/// datasets and break ties deterministically.
#[derive(Debug, Clone, Default)]
pub struct SweepOrder {
    index: HashMap<ConfigPoint, usize>,
}

impl SweepOrder {
    pub fn new(plan: &SweepPlan) -> Result<Self, PlanError> {
        let index = enumerate_sweep(plan)?
            .into_iter()
            .enumerate()
            .map(|(i, p)| (p, i))
            .collect();
        Ok(Self { index })
    }

    pub fn position(&self, point: &ConfigPoint) -> Option<usize> {
        self.index.get(point).copied()
    }

    /// Sort key placing known points in sweep order and unknown points after
    /// them in lexical order.
    pub fn sort_key<'a>(&self, point: &'a ConfigPoint) -> (usize, &'a ConfigPoint) {
        (self.position(point).unwrap_or(usize::MAX), point)
    }
}

/// The Jetson Orin device matrix and Pythia model family used as the
/// built-in default.
pub fn reference_plan() -> SweepPlan {
    let devices = vec![
        DeviceProfile::new(
            "AGX Orin Devkit",
            2048,
            32 * 1024,
            &["MAXN", "50W", "30W", "15W"],
        ),
        DeviceProfile::new(
            "AGX Orin 32GB",
            1792,
            32 * 1024,
            &["MAXN", "40W", "30W", "15W"],
        ),
        DeviceProfile::new(
            "Orin NX 16GB",
            1024,
            16 * 1024,
            &["MAXN", "25W", "15W", "10W"],
        ),
        DeviceProfile::new(
            "Orin NX 8GB",
            1024,
            8 * 1024,
            &["MAXN", "20W", "15W", "10W"],
        ),
        DeviceProfile::new("Orin Nano 8GB", 1024, 8 * 1024, &["15W", "7W"]),
        DeviceProfile::new("Orin Nano 4GB", 512, 4 * 1024, &["10W", "7W-AI", "7W-CPU"]),
    ];
    let models = [
        ("70m", 70_000_000),
        ("160m", 160_000_000),
        ("410m", 410_000_000),
        ("1b", 1_000_000_000),
        ("1.4b", 1_400_000_000),
    ]
    .into_iter()
    .map(|(size, params)| {
        ModelSpec::new(&format!("pythia-{size}-deduped"), params).with_alias(size)
    })
    .collect();
    SweepPlan::new(devices, models)
}
