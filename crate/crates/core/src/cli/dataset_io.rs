//! Flat dataset files: one row per (configuration, statistic, metric).
//!
//! CSV files start with `#` manifest lines, then the header
//! `device,power_model,model,quantization,statistic,metric,value`.
//! Statistics are `median`, `first` (first iteration), `count` (metric
//! `iterations`, empty when unknown), `excluded` (metric `reason`, value is
//! the reason) and `accuracy` (device and power model empty).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::ConfigMetrics;
use crate::metrics::{MetricId, MetricValues};
use crate::model::{ConfigPoint, Quantization};
use crate::recommender::{Dataset, DatasetError};

pub const HEADER: [&str; 7] = [
    "device",
    "power_model",
    "model",
    "quantization",
    "statistic",
    "metric",
    "value",
];

pub const MANIFEST: [&str; 2] = [
    "edgebench dataset v1",
    "units: latency s, power W, energy J, memory MB, time_per_token s/token, accuracy %",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetFileError {
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
    #[error("missing or wrong header; expected {}", HEADER.join(","))]
    Header,
    #[error("line {line}: {source}")]
    Merge { line: usize, source: DatasetError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    device: String,
    power_model: String,
    model: String,
    quantization: String,
    statistic: String,
    metric: String,
    value: String,
}

fn rows(dataset: &Dataset) -> Vec<Row> {
    let mut out = Vec::new();
    let row = |c: &ConfigPoint, statistic: &str, metric: &str, value: String| Row {
        device: c.device.clone(),
        power_model: c.power_model.clone(),
        model: c.model.clone(),
        quantization: c.quantization.to_string(),
        statistic: statistic.into(),
        metric: metric.into(),
        value,
    };
    for (c, e) in &dataset.entries {
        let count = e.iteration_count.map(|n| n.to_string()).unwrap_or_default();
        out.push(row(c, "count", "iterations", count));
        for m in MetricId::STORED {
            if let Some(v) = e.medians.get(m) {
                out.push(row(c, "median", m.name(), v.to_string()));
            }
        }
        if let Some(first) = &e.first_iteration {
            for m in MetricId::STORED {
                if let Some(v) = first.get(m) {
                    out.push(row(c, "first", m.name(), v.to_string()));
                }
            }
        }
    }
    for (c, reason) in &dataset.excluded {
        out.push(row(c, "excluded", "reason", reason.clone()));
    }
    for ((model, q), pct) in dataset.accuracy_table.iter().flatten() {
        out.push(Row {
            device: String::new(),
            power_model: String::new(),
            model: model.clone(),
            quantization: q.to_string(),
            statistic: "accuracy".into(),
            metric: MetricId::Accuracy.name().into(),
            value: pct.to_string(),
        });
    }
    out
}

pub fn write_dataset(dataset: &Dataset, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = String::new();
            for line in MANIFEST {
                let _ = writeln!(out, "# {line}");
            }
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(Vec::new());
            w.write_record(HEADER).expect("in-memory write");
            for r in rows(dataset) {
                w.serialize(r).expect("in-memory write");
            }
            out.push_str(
                &String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 fields"),
            );
            out
        }
        Format::JsonLines => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "{}",
                json!({ "manifest": MANIFEST[0], "units": MANIFEST[1] })
            );
            for r in rows(dataset) {
                let value = match r.statistic.as_str() {
                    "median" | "first" | "accuracy" => {
                        json!(r.value.parse::<f64>().expect("written from f64"))
                    }
                    "count" if r.value.is_empty() => Value::Null,
                    "count" => json!(r.value.parse::<u32>().expect("written from u32")),
                    _ => json!(r.value),
                };
                let mut obj = serde_json::to_value(&r).expect("rows serialize");
                obj["value"] = value;
                let _ = writeln!(out, "{obj}");
            }
            out
        }
    }
}

fn parse_value(line: usize, raw: &str) -> Result<f64, DatasetFileError> {
    let v: f64 = raw.trim().parse().map_err(|_| DatasetFileError::Row {
        line,
        reason: format!("value '{raw}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(DatasetFileError::Row {
            line,
            reason: format!("value '{raw}' is not finite"),
        });
    }
    Ok(v)
}

fn apply(dataset: &mut Dataset, line: usize, r: Row) -> Result<(), DatasetFileError> {
    let bad = |reason: String| DatasetFileError::Row { line, reason };
    let merge = |source| DatasetFileError::Merge { line, source };
    let quantization: Quantization = r
        .quantization
        .parse()
        .map_err(|e: crate::model::ParseQuantizationError| bad(e.to_string()))?;
    if r.statistic == "accuracy" {
        if r.metric != MetricId::Accuracy.name() {
            return Err(bad(format!(
                "accuracy rows need metric 'accuracy', got '{}'",
                r.metric
            )));
        }
        let pct = parse_value(line, &r.value)?;
        return dataset
            .set_accuracy(&r.model, quantization, pct)
            .map_err(merge);
    }
    if r.device.is_empty() || r.power_model.is_empty() || r.model.is_empty() {
        return Err(bad("device, power_model and model are required".into()));
    }
    let config = ConfigPoint {
        device: r.device,
        power_model: r.power_model,
        model: r.model,
        quantization,
    };
    let stored_metric = |name: &str| -> Result<MetricId, DatasetFileError> {
        let m: MetricId = name
            .parse()
            .map_err(|e: crate::metrics::UnknownMetric| bad(e.to_string()))?;
        if MetricId::STORED.contains(&m) {
            Ok(m)
        } else {
            Err(bad(format!("metric '{m}' is derived and cannot be stored")))
        }
    };
    let mut entry = ConfigMetrics::new(config.clone());
    match r.statistic.as_str() {
        "excluded" => return dataset.exclude(config, &r.value).map_err(merge),
        "count" => {
            if !r.value.trim().is_empty() {
                let n: u32 =
                    r.value.trim().parse().map_err(|_| {
                        bad(format!("iteration count '{}' is not an integer", r.value))
                    })?;
                entry.iteration_count = Some(n);
            }
        }
        "median" => {
            entry.medians.set(
                stored_metric(&r.metric)?,
                Some(parse_value(line, &r.value)?),
            );
        }
        "first" => {
            let mut first = MetricValues::default();
            first.set(
                stored_metric(&r.metric)?,
                Some(parse_value(line, &r.value)?),
            );
            entry.first_iteration = Some(first);
        }
        other => return Err(bad(format!("unknown statistic '{other}'"))),
    }
    dataset.merge(entry).map_err(merge)
}

pub fn read_dataset(text: &str) -> Result<Dataset, DatasetFileError> {
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'));
    if first.is_some_and(|l| l.starts_with('{')) {
        read_json_lines(text)
    } else {
        read_csv(text)
    }
}

fn read_csv(text: &str) -> Result<Dataset, DatasetFileError> {
    // manifest lines only at the top; later '#' belongs to data
    let mut skipped = 0;
    let mut body = text;
    while let Some(rest) = body.strip_prefix('#') {
        body = rest.split_once('\n').map_or("", |(_, after)| after);
        skipped += 1;
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let header = reader.headers().map_err(|_| DatasetFileError::Header)?;
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(DatasetFileError::Header);
    }
    let mut dataset = Dataset::new();
    for record in reader.records() {
        let record = record.map_err(|e| DatasetFileError::Row {
            line: e.position().map_or(0, |p| p.line() as usize + skipped),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize) + skipped;
        let row: Row = record
            .deserialize(Some(&csv::StringRecord::from(&HEADER[..])))
            .map_err(|e| DatasetFileError::Row {
                line,
                reason: e.to_string(),
            })?;
        apply(&mut dataset, line, row)?;
    }
    Ok(dataset)
}

fn read_json_lines(text: &str) -> Result<Dataset, DatasetFileError> {
    let mut dataset = Dataset::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let bad = |reason: String| DatasetFileError::Row { line, reason };
        let mut obj: Value = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
        if obj.get("manifest").is_some() {
            continue;
        }
        let value = match obj.get("value") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => {
                let v = n.as_f64().ok_or_else(|| bad("value out of range".into()))?;
                if n.is_f64() {
                    v.to_string()
                } else {
                    n.to_string()
                }
            }
            Some(Value::Null) | None => String::new(),
            Some(other) => return Err(bad(format!("unsupported value {other}"))),
        };
        obj["value"] = Value::String(value);
        let row: Row = serde_json::from_value(obj).map_err(|e| bad(e.to_string()))?;
        apply(&mut dataset, line, row)?;
    }
    Ok(dataset)
}
