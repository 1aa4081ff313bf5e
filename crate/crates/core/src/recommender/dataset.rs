use std::collections::BTreeMap;

use indexmap::IndexMap;
use thiserror::Error;

use crate::analysis::ConfigMetrics;
use crate::metrics::MetricId;
use crate::model::{ConfigPoint, Quantization, SweepOrder};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("conflicting {metric} for {config}: {existing} vs {new}")]
    Conflict {
        config: ConfigPoint,
        metric: MetricId,
        existing: f64,
        new: f64,
    },
    #[error("conflicting iteration count for {0}")]
    IterationConflict(ConfigPoint),
    #[error("{0} is both excluded and measured")]
    ExcludedAndMeasured(ConfigPoint),
    #[error("conflicting accuracy for {model} ({quantization}): {existing} vs {new}")]
    AccuracyConflict {
        model: String,
        quantization: Quantization,
        existing: f64,
        new: f64,
    },
    #[error("non-finite {metric} value for {config}")]
    NonFinite {
        config: ConfigPoint,
        metric: MetricId,
    },
}

/// Aggregated metrics keyed by configuration point, in insertion order.
///
/// Excluded configurations are tracked separately and never appear among
/// the entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub entries: IndexMap<ConfigPoint, ConfigMetrics>,
    /// Accuracy in percent keyed by (model id, quantization).
    pub accuracy_table: Option<BTreeMap<(String, Quantization), f64>>,
    /// Excluded configurations with the reason recorded for each.
    pub excluded: IndexMap<ConfigPoint, String>,
}

fn merge_value(
    config: &ConfigPoint,
    metric: MetricId,
    existing: Option<f64>,
    new: Option<f64>,
) -> Result<Option<f64>, DatasetError> {
    if let Some(v) = new {
        if !v.is_finite() {
            return Err(DatasetError::NonFinite {
                config: config.clone(),
                metric,
            });
        }
    }
    match (existing, new) {
        (Some(a), Some(b)) if a != b => Err(DatasetError::Conflict {
            config: config.clone(),
            metric,
            existing: a,
            new: b,
        }),
        (a, b) => Ok(a.or(b)),
    }
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds or merges an entry. Metrics already present must agree exactly.
    pub fn merge(&mut self, entry: ConfigMetrics) -> Result<(), DatasetError> {
        if self.excluded.contains_key(&entry.config) {
            return Err(DatasetError::ExcludedAndMeasured(entry.config));
        }
        let config = entry.config.clone();
        let Some(current) = self.entries.get(&config) else {
            for metric in MetricId::STORED {
                merge_value(&config, metric, None, entry.medians.get(metric))?;
            }
            self.entries.insert(config, entry);
            return Ok(());
        };
        let mut merged = current.clone();
        for metric in MetricId::STORED {
            let v = merge_value(
                &config,
                metric,
                current.medians.get(metric),
                entry.medians.get(metric),
            )?;
            merged.medians.set(metric, v);
        }
        merged.iteration_count = match (current.iteration_count, entry.iteration_count) {
            (Some(a), Some(b)) if a != b => return Err(DatasetError::IterationConflict(config)),
            (a, b) => a.or(b),
        };
        merged.first_iteration = match (current.first_iteration, entry.first_iteration) {
            (Some(a), Some(b)) => {
                let mut f = a;
                for metric in MetricId::STORED {
                    f.set(
                        metric,
                        merge_value(&config, metric, a.get(metric), b.get(metric))?,
                    );
                }
                Some(f)
            }
            (a, b) => a.or(b),
        };
        self.entries.insert(config, merged);
        Ok(())
    }

    /// Marks `config` excluded. Repeating an exclusion keeps the first reason.
    pub fn exclude(&mut self, config: ConfigPoint, reason: &str) -> Result<(), DatasetError> {
        if self.entries.contains_key(&config) {
            return Err(DatasetError::ExcludedAndMeasured(config));
        }
        self.excluded
            .entry(config)
            .or_insert_with(|| reason.to_string());
        Ok(())
    }

    pub fn set_accuracy(
        &mut self,
        model: &str,
        quantization: Quantization,
        pct: f64,
    ) -> Result<(), DatasetError> {
        let table = self.accuracy_table.get_or_insert_with(BTreeMap::new);
        let key = (model.to_string(), quantization);
        match table.get(&key) {
            Some(&existing) if existing != pct => Err(DatasetError::AccuracyConflict {
                model: key.0,
                quantization,
                existing,
                new: pct,
            }),
            _ => {
                table.insert(key, pct);
                Ok(())
            }
        }
    }

    /// Merges every entry, exclusion and accuracy value of `other`.
    pub fn merge_dataset(&mut self, other: Dataset) -> Result<(), DatasetError> {
        for (config, reason) in other.excluded {
            self.exclude(config, &reason)?;
        }
        for (_, entry) in other.entries {
            self.merge(entry)?;
        }
        if let Some(table) = other.accuracy_table {
            for ((model, q), pct) in table {
                self.set_accuracy(&model, q, pct)?;
            }
        }
        Ok(())
    }

    pub fn accuracy(&self, model: &str, quantization: Quantization) -> Option<f64> {
        self.accuracy_table
            .as_ref()?
            .get(&(model.to_string(), quantization))
            .copied()
    }

    /// Value of `metric` for `entry`, joining accuracy from the table.
    pub fn value(&self, entry: &ConfigMetrics, metric: MetricId) -> Option<f64> {
        match metric {
            MetricId::Accuracy => self.accuracy(&entry.config.model, entry.config.quantization),
            m => entry.get(m),
        }
    }

    /// True when at least one entry carries `metric`.
    pub fn has_metric(&self, metric: MetricId) -> bool {
        self.entries
            .values()
            .any(|e| self.value(e, metric).is_some())
    }

    /// Reorders entries and exclusions into sweep order; points outside the
    /// plan go last in lexical order.
    pub fn sort(&mut self, order: &SweepOrder) {
        self.entries
            .sort_by(|a, _, b, _| order.sort_key(a).cmp(&order.sort_key(b)));
        self.excluded
            .sort_by(|a, _, b, _| order.sort_key(a).cmp(&order.sort_key(b)));
    }
}
