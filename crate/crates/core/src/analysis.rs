//! Per-run metric derivation and per-configuration aggregation.
//!
//! Latencies come from workload-clock timestamps when present. Power,
//! energy and memory statistics are computed over receipt-clock phase
//! windows of the telemetry samples.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricId, MetricValues};
use crate::model::ConfigPoint;
use crate::orchestrator::{Boundary, Phase, RunLog, RunStatus};
use crate::sampler::TelemetrySample;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("phase {0} is missing a boundary event")]
    IncompletePhase(Phase),
    #[error("no telemetry samples in the idle phase; no baseline available")]
    NoBaseline,
    #[error("fewer than two usable samples for the {0} window")]
    InsufficientSamples(Phase),
    #[error("run generated zero tokens")]
    ZeroTokens,
    #[error("run did not complete: {0}")]
    NotCompleted(RunStatus),
    #[error("no run logs given")]
    Empty,
    #[error("logs belong to different configurations ({0} and {1})")]
    MixedConfigs(ConfigPoint, ConfigPoint),
    #[error("need at least two completed runs, found {0}")]
    TooFewRuns(usize),
}

/// Median; an even count averages the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

/// Elapsed time of `phase`: End − Start on the workload clock when both
/// events carry it, else on the receipt clock.
pub fn phase_latency(log: &RunLog, phase: Phase) -> Result<f64, AnalysisError> {
    let start = log.event(phase, Boundary::Start);
    let end = log.event(phase, Boundary::End);
    let (Some(start), Some(end)) = (start, end) else {
        return Err(AnalysisError::IncompletePhase(phase));
    };
    Ok(match (start.t_workload, end.t_workload) {
        (Some(a), Some(b)) => b - a,
        _ => end.t_receipt - start.t_receipt,
    })
}

fn window(log: &RunLog, phase: Phase) -> Result<(f64, f64), AnalysisError> {
    log.window(phase)
        .ok_or(AnalysisError::IncompletePhase(phase))
}

fn in_window(
    samples: &[TelemetrySample],
    (a, b): (f64, f64),
) -> impl Iterator<Item = &TelemetrySample> {
    samples.iter().filter(move |s| s.t >= a && s.t <= b)
}

/// Median board power over the idle window.
pub fn baseline_power(log: &RunLog) -> Result<f64, AnalysisError> {
    let idle = window(log, Phase::Idle)?;
    let powers: Vec<f64> = in_window(&log.samples, idle).map(|s| s.power_w).collect();
    median(&powers).ok_or(AnalysisError::NoBaseline)
}

/// Trapezoidal integral of `power − baseline` over `phase`'s window.
pub fn excess_energy(log: &RunLog, phase: Phase, baseline: f64) -> Result<f64, AnalysisError> {
    let w = window(log, phase)?;
    integrate_excess(&log.samples, w, baseline).ok_or(AnalysisError::InsufficientSamples(phase))
}

/// Integrates `power − baseline` over `[a, b]` with the trapezoid rule.
///
/// Uses the samples inside the window plus linearly interpolated points at
/// the window edges when samples exist on both sides of an edge. Negative
/// excess is kept. `None` when fewer than two points are usable.
pub fn integrate_excess(
    samples: &[TelemetrySample],
    (a, b): (f64, f64),
    baseline: f64,
) -> Option<f64> {
    let interpolate = |x: f64| -> Option<(f64, f64)> {
        let after = samples.partition_point(|s| s.t <= x);
        let before = samples[..after].iter().rposition(|s| s.t < x)?;
        let hi = samples.get(after)?;
        let lo = &samples[before];
        let w = (x - lo.t) / (hi.t - lo.t);
        Some((x, lo.power_w + (hi.power_w - lo.power_w) * w))
    };

    let mut points: Vec<(f64, f64)> = Vec::new();
    let inside: Vec<(f64, f64)> = in_window(samples, (a, b))
        .map(|s| (s.t, s.power_w))
        .collect();
    if inside.first().map_or(true, |&(t, _)| t > a) {
        points.extend(interpolate(a));
    }
    points.extend_from_slice(&inside);
    if inside.last().map_or(true, |&(t, _)| t < b) {
        points.extend(interpolate(b));
    }
    if points.len() < 2 {
        return None;
    }
    Some(
        points
            .windows(2)
            .map(|p| (p[1].0 - p[0].0) * ((p[0].1 - baseline) + (p[1].1 - baseline)) / 2.0)
            .sum(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakStats {
    pub peak_power_gen_w: f64,
    pub peak_gpu_mem_mb: f64,
    pub peak_ram_mb: f64,
}

/// Peak power over the generate window; peak memory over the load and
/// generate windows together.
pub fn peak_stats(log: &RunLog) -> Result<PeakStats, AnalysisError> {
    let gen = window(log, Phase::Generate)?;
    let load = window(log, Phase::ModelLoad)?;
    let peak_power_gen_w = in_window(&log.samples, gen)
        .map(|s| s.power_w)
        .reduce(f64::max)
        .ok_or(AnalysisError::InsufficientSamples(Phase::Generate))?;
    let busy = log
        .samples
        .iter()
        .filter(|s| (s.t >= load.0 && s.t <= load.1) || (s.t >= gen.0 && s.t <= gen.1));
    let (gpu, ram) = busy.fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |(g, r), s| {
        (g.max(s.gpu_mem_mb), r.max(s.ram_mb))
    });
    if gpu == f64::NEG_INFINITY {
        return Err(AnalysisError::InsufficientSamples(Phase::ModelLoad));
    }
    Ok(PeakStats {
        peak_power_gen_w,
        peak_gpu_mem_mb: gpu,
        peak_ram_mb: ram,
    })
}

/// `total / tokens`, nudged by at most a few ulps so that multiplying the
/// result by `tokens` rounds back to exactly `total`.
pub fn per_token(total: f64, tokens: u64) -> f64 {
    let n = tokens as f64;
    let q = total / n;
    if q * n == total {
        return q;
    }
    let (mut up, mut down) = (q, q);
    for _ in 0..16 {
        up = up.next_up();
        if up * n == total {
            return up;
        }
        down = down.next_down();
        if down * n == total {
            return down;
        }
    }
    q
}

/// Time per token together with the generation latency it reconstructs
/// exactly. Some latencies cannot be reached by any product `q × tokens`;
/// those snap to the nearest reachable value, at most an ulp or two away.
pub fn split_per_token(gen_latency: f64, tokens: u64) -> (f64, f64) {
    let q = per_token(gen_latency, tokens);
    (q * tokens as f64, q)
}

pub fn time_per_token(log: &RunLog) -> Result<f64, AnalysisError> {
    if log.tokens_generated == 0 {
        return Err(AnalysisError::ZeroTokens);
    }
    Ok(per_token(
        phase_latency(log, Phase::Generate)?,
        log.tokens_generated,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub load_latency_s: f64,
    pub gen_latency_s: f64,
    pub time_per_token_s: f64,
    /// Telemetry-derived values are absent when the samples do not cover
    /// the window they need.
    pub baseline_power_w: Option<f64>,
    pub peak_power_gen_w: Option<f64>,
    pub energy_load_j: Option<f64>,
    pub energy_gen_j: Option<f64>,
    pub peak_gpu_mem_mb: Option<f64>,
    pub peak_ram_mb: Option<f64>,
}

impl RunMetrics {
    pub fn values(&self) -> MetricValues {
        MetricValues {
            load_latency_s: Some(self.load_latency_s),
            gen_latency_s: Some(self.gen_latency_s),
            baseline_power_w: self.baseline_power_w,
            peak_power_gen_w: self.peak_power_gen_w,
            energy_load_j: self.energy_load_j,
            energy_gen_j: self.energy_gen_j,
            peak_gpu_mem_mb: self.peak_gpu_mem_mb,
            peak_ram_mb: self.peak_ram_mb,
            time_per_token_s: Some(self.time_per_token_s),
        }
    }
}

/// Derives every metric of one completed run.
pub fn run_metrics(log: &RunLog) -> Result<RunMetrics, AnalysisError> {
    if !log.status.is_completed() {
        return Err(AnalysisError::NotCompleted(log.status.clone()));
    }
    let load_latency_s = phase_latency(log, Phase::ModelLoad)?;
    if log.tokens_generated == 0 {
        return Err(AnalysisError::ZeroTokens);
    }
    let (gen_latency_s, time_per_token_s) =
        split_per_token(phase_latency(log, Phase::Generate)?, log.tokens_generated);
    let baseline = baseline_power(log).ok();
    let energy = |phase| baseline.and_then(|b| excess_energy(log, phase, b).ok());
    let peaks = peak_stats(log).ok();
    Ok(RunMetrics {
        load_latency_s,
        gen_latency_s,
        time_per_token_s,
        baseline_power_w: baseline,
        peak_power_gen_w: peaks.map(|p| p.peak_power_gen_w),
        energy_load_j: energy(Phase::ModelLoad),
        energy_gen_j: energy(Phase::Generate),
        peak_gpu_mem_mb: peaks.map(|p| p.peak_gpu_mem_mb),
        peak_ram_mb: peaks.map(|p| p.peak_ram_mb),
    })
}

/// Aggregated metrics of one configuration point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMetrics {
    pub config: ConfigPoint,
    /// Per-metric medians across completed iterations.
    pub medians: MetricValues,
    /// Unknown for entries ingested from published tables.
    pub iteration_count: Option<u32>,
    pub first_iteration: Option<MetricValues>,
}

impl ConfigMetrics {
    pub fn new(config: ConfigPoint) -> Self {
        Self {
            config,
            medians: MetricValues::default(),
            iteration_count: None,
            first_iteration: None,
        }
    }

    /// Median value of `metric`. Accuracy lives in the dataset's join table.
    pub fn get(&self, metric: MetricId) -> Option<f64> {
        self.medians.get(metric)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Aggregate {
    Included(ConfigMetrics),
    /// At least one iteration failed; reasons by iteration.
    Excluded {
        config: ConfigPoint,
        failures: Vec<(u32, String)>,
    },
}

fn check_same_config(logs: &[RunLog]) -> Result<&ConfigPoint, AnalysisError> {
    let first = &logs.first().ok_or(AnalysisError::Empty)?.config;
    if let Some(other) = logs.iter().find(|l| &l.config != first) {
        return Err(AnalysisError::MixedConfigs(
            first.clone(),
            other.config.clone(),
        ));
    }
    Ok(first)
}

fn by_iteration(logs: &[RunLog]) -> Vec<&RunLog> {
    let mut sorted: Vec<&RunLog> = logs.iter().collect();
    sorted.sort_by_key(|l| l.iteration);
    sorted
}

fn metric_medians(runs: &[MetricValues]) -> MetricValues {
    let mut out = MetricValues::default();
    for metric in MetricId::STORED {
        let values: Vec<f64> = runs.iter().filter_map(|r| r.get(metric)).collect();
        out.set(metric, median(&values));
    }
    out
}

/// Aggregates all iterations of one configuration. Any failed iteration
/// excludes the configuration.
pub fn aggregate(logs: &[RunLog]) -> Result<Aggregate, AnalysisError> {
    let config = check_same_config(logs)?.clone();
    let sorted = by_iteration(logs);
    let failures: Vec<(u32, String)> = sorted
        .iter()
        .filter_map(|l| match &l.status {
            RunStatus::Failed(reason) => Some((l.iteration, reason.clone())),
            RunStatus::Completed => None,
        })
        .collect();
    if !failures.is_empty() {
        return Ok(Aggregate::Excluded { config, failures });
    }
    let runs = sorted
        .iter()
        .map(|l| run_metrics(l).map(|m| m.values()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Aggregate::Included(ConfigMetrics {
        config,
        medians: metric_medians(&runs),
        iteration_count: Some(runs.len() as u32),
        first_iteration: runs.first().copied(),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drift {
    pub first: f64,
    pub rest_median: f64,
}

/// First-iteration value against the median of the remaining iterations,
/// for every metric measured in all of them.
pub fn iteration_drift(logs: &[RunLog]) -> Result<BTreeMap<MetricId, Drift>, AnalysisError> {
    check_same_config(logs)?;
    let completed: Vec<&RunLog> = by_iteration(logs)
        .into_iter()
        .filter(|l| l.status.is_completed())
        .collect();
    if completed.len() < 2 {
        return Err(AnalysisError::TooFewRuns(completed.len()));
    }
    let runs = completed
        .iter()
        .map(|l| run_metrics(l).map(|m| m.values()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = BTreeMap::new();
    for metric in MetricId::STORED {
        let Some(first) = runs[0].get(metric) else {
            continue;
        };
        let rest: Option<Vec<f64>> = runs[1..].iter().map(|r| r.get(metric)).collect();
        if let Some(rest_median) = rest.as_deref().and_then(median) {
            out.insert(metric, Drift { first, rest_median });
        }
    }
    Ok(out)
}
