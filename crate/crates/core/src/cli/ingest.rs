//! Hand-transcribed result tables.
//!
//! Latency tables have the header `device,power_model,model,quantization,value`;
//! accuracy tables `model,quantization,value`. A `-` value marks a
//! configuration that failed, which becomes an excluded entry. Model labels
//! may be any alias known to the plan.

use thiserror::Error;

use super::dataset_io::{read_dataset, DatasetFileError};
use crate::analysis::ConfigMetrics;
use crate::metrics::MetricId;
use crate::model::{validate_config, ConfigPoint, Quantization, SweepPlan};
use crate::recommender::{Dataset, DatasetError};

pub const MISSING_CELL: &str = "-";
pub const MISSING_REASON: &str = "no result in source table";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    LoadLatency,
    GenLatency,
    Accuracy,
    Full,
}

impl Schema {
    fn header(self) -> &'static [&'static str] {
        match self {
            Schema::LoadLatency | Schema::GenLatency => {
                &["device", "power_model", "model", "quantization", "value"]
            }
            Schema::Accuracy => &["model", "quantization", "value"],
            Schema::Full => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
    #[error("expected header {expected}")]
    Header { expected: String },
    #[error("line {line}: {source}")]
    Conflict { line: usize, source: DatasetError },
    #[error(transparent)]
    Dataset(#[from] DatasetFileError),
}

/// Parses `text` as `schema`, validating labels against `plan`.
pub fn ingest(text: &str, schema: Schema, plan: &SweepPlan) -> Result<Dataset, IngestError> {
    if schema == Schema::Full {
        return Ok(read_dataset(text)?);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let expected = schema.header();
    let header = reader.headers().map_err(|e| IngestError::Row {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(IngestError::Header {
            expected: expected.join(","),
        });
    }
    let mut dataset = Dataset::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Row {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |reason: String| IngestError::Row { line, reason };
        if record.len() != expected.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                expected.len(),
                record.len()
            )));
        }
        let field = |i: usize| &record[i];
        let (model_label, quant, value) = match schema {
            Schema::Accuracy => (field(0), field(1), field(2)),
            _ => (field(2), field(3), field(4)),
        };
        let model = plan
            .resolve_model(model_label)
            .ok_or_else(|| bad(format!("unknown model '{model_label}'")))?
            .id
            .clone();
        let quantization: Quantization = quant
            .parse()
            .map_err(|e: crate::model::ParseQuantizationError| bad(e.to_string()))?;
        if !plan.quantizations.contains(&quantization) {
            return Err(bad(format!(
                "quantization '{quantization}' is not part of the plan"
            )));
        }
        let number = || -> Result<f64, IngestError> {
            match value.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
                _ => Err(bad(format!("value '{value}' is not a non-negative number"))),
            }
        };
        let conflict = |source| IngestError::Conflict { line, source };
        if schema == Schema::Accuracy {
            dataset
                .set_accuracy(&model, quantization, number()?)
                .map_err(conflict)?;
            continue;
        }
        let config = ConfigPoint {
            device: field(0).to_string(),
            power_model: field(1).to_string(),
            model,
            quantization,
        };
        validate_config(&config, plan).map_err(|e| bad(e.to_string()))?;
        if value == MISSING_CELL {
            dataset.exclude(config, MISSING_REASON).map_err(conflict)?;
            continue;
        }
        let metric = match schema {
            Schema::LoadLatency => MetricId::LoadLatency,
            _ => MetricId::GenLatency,
        };
        let mut entry = ConfigMetrics::new(config);
        entry.medians.set(metric, Some(number()?));
        dataset.merge(entry).map_err(conflict)?;
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference_plan;

    const HEAD: &str = "device,power_model,model,quantization,value\n";

    #[test]
    fn latency_rows() {
        let text = format!(
            "# Table\n{HEAD}AGX Orin Devkit,MAXN,70m,int4,2.280\nOrin Nano 4GB,10W,1.4b,none,-\n"
        );
        let d = ingest(&text, Schema::LoadLatency, &reference_plan()).unwrap();
        let key = ConfigPoint::new(
            "AGX Orin Devkit",
            "MAXN",
            "pythia-70m-deduped",
            Quantization::Int4,
        );
        assert_eq!(d.entries[&key].medians.load_latency_s, Some(2.28));
        assert_eq!(d.entries[&key].medians.gen_latency_s, None);
        let gone = ConfigPoint::new(
            "Orin Nano 4GB",
            "10W",
            "pythia-1.4b-deduped",
            Quantization::None,
        );
        assert!(d.excluded.contains_key(&gone));
        assert!(!d.entries.contains_key(&gone));
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let plan = reference_plan();
        let cases = [
            ("AGX Orin Devkit,MAXN,70m,int4,fast\n", 3),
            ("AGX Orin Devkit,60W,70m,int4,1.0\n", 3),
            ("AGX Orin Devkit,MAXN,7b,int4,1.0\n", 3),
            ("AGX Orin Devkit,MAXN,70m,int8,1.0\n", 3),
            ("AGX Orin Devkit,MAXN,70m,int4\n", 3),
            ("AGX Orin Devkit,MAXN,70m,int4,-1\n", 3),
        ];
        for (row, line) in cases {
            let text = format!("{HEAD}AGX Orin Devkit,MAXN,70m,none,2.0\n{row}");
            match ingest(&text, Schema::GenLatency, &plan) {
                Err(IngestError::Row { line: l, .. }) => assert_eq!(l, line, "{row}"),
                other => panic!("{row}: {other:?}"),
            }
        }
        let dup = format!("{HEAD}AGX Orin Devkit,MAXN,70m,none,2.0\nAGX Orin Devkit,MAXN,pythia-70m-deduped,none,2.1\n");
        assert!(matches!(
            ingest(&dup, Schema::GenLatency, &plan),
            Err(IngestError::Conflict { line: 3, .. })
        ));
        assert!(matches!(
            ingest("a,b\n", Schema::GenLatency, &plan),
            Err(IngestError::Header { .. })
        ));
    }

    #[test]
    fn accuracy_rows() {
        let text = "model,quantization,value\n70m,none,30\n1.4b,int4,51\n";
        let d = ingest(text, Schema::Accuracy, &reference_plan()).unwrap();
        assert_eq!(
            d.accuracy("pythia-70m-deduped", Quantization::None),
            Some(30.0)
        );
        assert_eq!(
            d.accuracy("pythia-1.4b-deduped", Quantization::Int4),
            Some(51.0)
        );
        assert!(d.is_empty());
    }
}
