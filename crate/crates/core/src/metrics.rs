use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A queryable metric. Units: seconds, watts, joules, megabytes, percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    LoadLatency,
    GenLatency,
    /// Load plus generation latency.
    TotalLatency,
    BaselinePower,
    PeakPowerGen,
    EnergyLoad,
    EnergyGen,
    PeakGpuMem,
    PeakRam,
    TimePerToken,
    Accuracy,
}

impl MetricId {
    pub const ALL: [MetricId; 11] = [
        MetricId::LoadLatency,
        MetricId::GenLatency,
        MetricId::TotalLatency,
        MetricId::BaselinePower,
        MetricId::PeakPowerGen,
        MetricId::EnergyLoad,
        MetricId::EnergyGen,
        MetricId::PeakGpuMem,
        MetricId::PeakRam,
        MetricId::TimePerToken,
        MetricId::Accuracy,
    ];

    /// Metrics stored per configuration; the rest are derived or joined.
    pub const STORED: [MetricId; 9] = [
        MetricId::LoadLatency,
        MetricId::GenLatency,
        MetricId::BaselinePower,
        MetricId::PeakPowerGen,
        MetricId::EnergyLoad,
        MetricId::EnergyGen,
        MetricId::PeakGpuMem,
        MetricId::PeakRam,
        MetricId::TimePerToken,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::LoadLatency => "load_latency",
            MetricId::GenLatency => "gen_latency",
            MetricId::TotalLatency => "total_latency",
            MetricId::BaselinePower => "baseline_power",
            MetricId::PeakPowerGen => "peak_power_gen",
            MetricId::EnergyLoad => "energy_load",
            MetricId::EnergyGen => "energy_gen",
            MetricId::PeakGpuMem => "peak_gpu_mem",
            MetricId::PeakRam => "peak_ram",
            MetricId::TimePerToken => "time_per_token",
            MetricId::Accuracy => "accuracy",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            MetricId::LoadLatency | MetricId::GenLatency | MetricId::TotalLatency => "s",
            MetricId::BaselinePower | MetricId::PeakPowerGen => "W",
            MetricId::EnergyLoad | MetricId::EnergyGen => "J",
            MetricId::PeakGpuMem | MetricId::PeakRam => "MB",
            MetricId::TimePerToken => "s/token",
            MetricId::Accuracy => "%",
        }
    }

    /// Column label for human-readable tables.
    pub fn label(self) -> &'static str {
        match self {
            MetricId::LoadLatency => "Load Latency",
            MetricId::GenLatency => "Gen. Latency",
            MetricId::TotalLatency => "Latency",
            MetricId::BaselinePower => "Baseline Power",
            MetricId::PeakPowerGen => "Power",
            MetricId::EnergyLoad => "Load Energy",
            MetricId::EnergyGen => "Energy",
            MetricId::PeakGpuMem => "Pk. GPU Memory",
            MetricId::PeakRam => "Pk. Memory",
            MetricId::TimePerToken => "Time per Token",
            MetricId::Accuracy => "Accuracy",
        }
    }

    pub fn allowed_names() -> String {
        MetricId::ALL.map(MetricId::name).join(", ")
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown metric '{0}' (allowed: {allowed})", allowed = MetricId::allowed_names())]
pub struct UnknownMetric(pub String);

impl FromStr for MetricId {
    type Err = UnknownMetric;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        MetricId::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| UnknownMetric(s.to_string()))
    }
}

/// Per-configuration metric values; absent values were not measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub load_latency_s: Option<f64>,
    pub gen_latency_s: Option<f64>,
    pub baseline_power_w: Option<f64>,
    pub peak_power_gen_w: Option<f64>,
    pub energy_load_j: Option<f64>,
    pub energy_gen_j: Option<f64>,
    pub peak_gpu_mem_mb: Option<f64>,
    pub peak_ram_mb: Option<f64>,
    pub time_per_token_s: Option<f64>,
}

impl MetricValues {
    /// Stored or derived value. Accuracy is never stored here.
    pub fn get(&self, metric: MetricId) -> Option<f64> {
        match metric {
            MetricId::TotalLatency => Some(self.load_latency_s? + self.gen_latency_s?),
            MetricId::Accuracy => None,
            m => *self.slot(m),
        }
    }

    /// Sets a stored metric. Derived metrics cannot be set.
    pub fn set(&mut self, metric: MetricId, value: Option<f64>) -> bool {
        if !MetricId::STORED.contains(&metric) {
            return false;
        }
        *self.slot_mut(metric) = value;
        true
    }

    pub fn is_empty(&self) -> bool {
        MetricId::STORED.iter().all(|&m| self.get(m).is_none())
    }

    fn slot(&self, metric: MetricId) -> &Option<f64> {
        match metric {
            MetricId::LoadLatency => &self.load_latency_s,
            MetricId::GenLatency => &self.gen_latency_s,
            MetricId::BaselinePower => &self.baseline_power_w,
            MetricId::PeakPowerGen => &self.peak_power_gen_w,
            MetricId::EnergyLoad => &self.energy_load_j,
            MetricId::EnergyGen => &self.energy_gen_j,
            MetricId::PeakGpuMem => &self.peak_gpu_mem_mb,
            MetricId::PeakRam => &self.peak_ram_mb,
            MetricId::TimePerToken => &self.time_per_token_s,
            MetricId::TotalLatency | MetricId::Accuracy => unreachable!("derived metric"),
        }
    }

    fn slot_mut(&mut self, metric: MetricId) -> &mut Option<f64> {
        match metric {
            MetricId::LoadLatency => &mut self.load_latency_s,
            MetricId::GenLatency => &mut self.gen_latency_s,
            MetricId::BaselinePower => &mut self.baseline_power_w,
            MetricId::PeakPowerGen => &mut self.peak_power_gen_w,
            MetricId::EnergyLoad => &mut self.energy_load_j,
            MetricId::EnergyGen => &mut self.energy_gen_j,
            MetricId::PeakGpuMem => &mut self.peak_gpu_mem_mb,
            MetricId::PeakRam => &mut self.peak_ram_mb,
            MetricId::TimePerToken => &mut self.time_per_token_s,
            MetricId::TotalLatency | MetricId::Accuracy => unreachable!("derived metric"),
        }
    }
}
