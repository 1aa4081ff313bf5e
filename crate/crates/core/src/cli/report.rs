//! Plot-ready series, one CSV per figure family. Every family is taken at
//! each device's maximum power model (the first one listed in the plan).
//! Excluded configurations appear with empty cells so plotters can show
//! them as gaps.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::analysis::per_token;
use crate::metrics::MetricId;
use crate::model::{ConfigPoint, Quantization, SweepPlan};
use crate::recommender::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Latency,
    Memory,
    Power,
    Energy,
    TimePerToken,
    QuantComp,
}

impl Figure {
    pub const ALL: [Figure; 6] = [
        Figure::Latency,
        Figure::Memory,
        Figure::Power,
        Figure::Energy,
        Figure::TimePerToken,
        Figure::QuantComp,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Figure::Latency => "latency",
            Figure::Memory => "memory",
            Figure::Power => "power",
            Figure::Energy => "energy",
            Figure::TimePerToken => "time-per-token",
            Figure::QuantComp => "quant-comp",
        }
    }

    fn metrics(self) -> &'static [MetricId] {
        match self {
            Figure::Latency => &[MetricId::LoadLatency, MetricId::GenLatency],
            Figure::Memory => &[MetricId::PeakGpuMem, MetricId::PeakRam],
            Figure::Power => &[MetricId::PeakPowerGen],
            Figure::Energy => &[MetricId::EnergyLoad, MetricId::EnergyGen],
            Figure::TimePerToken => &[MetricId::TimePerToken],
            Figure::QuantComp => &[MetricId::GenLatency],
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error(
    "unknown figure '{0}' (known: latency, memory, power, energy, time-per-token, quant-comp, all)"
)]
pub struct UnknownFigure(pub String);

impl FromStr for Figure {
    type Err = UnknownFigure;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Figure::ALL
            .into_iter()
            .find(|f| f.id() == key)
            .ok_or_else(|| UnknownFigure(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("dataset is empty")]
    Empty,
    #[error("figure {figure} needs metric {metric}, which the dataset does not contain")]
    MissingMetric { figure: Figure, metric: MetricId },
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn at_max_power(plan: &SweepPlan, c: &ConfigPoint) -> bool {
    plan.device(&c.device).and_then(|d| d.max_power_model()) == Some(c.power_model.as_str())
}

/// CSV text of one figure family. `token_target` derives time per token
/// from generation latency when the dataset does not store it.
pub fn figure_series(
    dataset: &Dataset,
    figure: Figure,
    plan: &SweepPlan,
    token_target: u32,
) -> Result<String, ReportError> {
    if dataset.is_empty() {
        return Err(ReportError::Empty);
    }
    // every config in the dataset, measured or excluded, in dataset order
    let points: Vec<&ConfigPoint> = dataset
        .entries
        .keys()
        .chain(dataset.excluded.keys())
        .filter(|c| at_max_power(plan, c))
        .collect();
    let value = |c: &ConfigPoint, m: MetricId| -> Option<f64> {
        let e = dataset.entries.get(c)?;
        match (m, e.get(m)) {
            (MetricId::TimePerToken, None) => e
                .get(MetricId::GenLatency)
                .map(|g| per_token(g, token_target.into())),
            (_, v) => v,
        }
    };
    for &metric in figure.metrics() {
        if !points.iter().any(|c| value(c, metric).is_some()) {
            return Err(ReportError::MissingMetric { figure, metric });
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let ok = "in-memory write";
    if figure == Figure::QuantComp {
        w.write_record([
            "device",
            "power_model",
            "model",
            "gen_latency_int4_s",
            "gen_latency_none_s",
            "int4_over_none",
        ])
        .expect(ok);
        let mut seen: Vec<(&str, &str, &str)> = Vec::new();
        for c in &points {
            let key = (c.device.as_str(), c.power_model.as_str(), c.model.as_str());
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            let at = |q| {
                value(
                    &ConfigPoint {
                        quantization: q,
                        ..(*c).clone()
                    },
                    MetricId::GenLatency,
                )
            };
            let (int4, none) = (at(Quantization::Int4), at(Quantization::None));
            let ratio = int4.zip(none).map(|(a, b)| a / b);
            w.write_record([key.0, key.1, key.2, &cell(int4), &cell(none), &cell(ratio)])
                .expect(ok);
        }
    } else {
        let mut header = vec![
            "device".to_string(),
            "power_model".into(),
            "model".into(),
            "quantization".into(),
        ];
        header.extend(
            figure
                .metrics()
                .iter()
                .map(|m| format!("{}_{}", m.name(), unit_suffix(*m))),
        );
        w.write_record(&header).expect(ok);
        for c in &points {
            let mut row = vec![
                c.device.clone(),
                c.power_model.clone(),
                c.model.clone(),
                c.quantization.to_string(),
            ];
            row.extend(figure.metrics().iter().map(|&m| cell(value(c, m))));
            w.write_record(&row).expect(ok);
        }
    }
    Ok(String::from_utf8(w.into_inner().expect(ok)).expect("utf-8 fields"))
}

fn unit_suffix(m: MetricId) -> &'static str {
    match m.unit() {
        "s" | "s/token" => "s",
        "W" => "w",
        "J" => "j",
        "MB" => "mb",
        _ => "pct",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::ConfigMetrics;
    use crate::model::reference_plan;

    fn dataset() -> Dataset {
        let mut d = Dataset::new();
        for (pm, gen) in [("MAXN", 7.033), ("50W", 7.5)] {
            let mut e = ConfigMetrics::new(ConfigPoint::new(
                "AGX Orin Devkit",
                pm,
                "pythia-70m-deduped",
                Quantization::None,
            ));
            e.medians.gen_latency_s = Some(gen);
            e.medians.load_latency_s = Some(2.0);
            d.merge(e).unwrap();
        }
        let mut e = ConfigMetrics::new(ConfigPoint::new(
            "AGX Orin Devkit",
            "MAXN",
            "pythia-70m-deduped",
            Quantization::Int4,
        ));
        e.medians.gen_latency_s = Some(8.0);
        d.merge(e).unwrap();
        d.exclude(
            ConfigPoint::new(
                "Orin Nano 4GB",
                "10W",
                "pythia-1b-deduped",
                Quantization::None,
            ),
            "oom",
        )
        .unwrap();
        d
    }

    #[test]
    fn time_per_token_is_derived() {
        let text = figure_series(&dataset(), Figure::TimePerToken, &reference_plan(), 512).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "device,power_model,model,quantization,time_per_token_s"
        );
        assert_eq!(
            lines[1],
            "AGX Orin Devkit,MAXN,pythia-70m-deduped,none,0.013736328125"
        );
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "Orin Nano 4GB,10W,pythia-1b-deduped,none,");
    }

    #[test]
    fn quant_comparison() {
        let text = figure_series(&dataset(), Figure::QuantComp, &reference_plan(), 512).unwrap();
        assert!(
            text.contains("AGX Orin Devkit,MAXN,pythia-70m-deduped,8,7.033,"),
            "{text}"
        );
    }

    #[test]
    fn errors() {
        let plan = reference_plan();
        assert_eq!(
            figure_series(&dataset(), Figure::Memory, &plan, 512),
            Err(ReportError::MissingMetric {
                figure: Figure::Memory,
                metric: MetricId::PeakGpuMem
            })
        );
        assert_eq!(
            figure_series(&Dataset::new(), Figure::Latency, &plan, 512),
            Err(ReportError::Empty)
        );
        assert!("fig9".parse::<Figure>().is_err());
        assert_eq!(
            "time_per_token".parse::<Figure>().unwrap(),
            Figure::TimePerToken
        );
    }
}
