use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::Deserialize;

use super::config::load_config;
use super::dataset_io::{read_dataset, write_dataset, Format};
use super::ingest::{ingest, Schema};
use super::logfile::{log_file_name, parse_jsonl, to_jsonl, PlanEcho};
use super::report::{figure_series, Figure};
use super::CliError;
use crate::analysis::{aggregate, phase_latency, Aggregate};
use crate::model::{reference_plan, ConfigPoint, SweepOrder, SweepPlan};
use crate::orchestrator::{run_sweep, Phase, RunLog, SweepError, SweepObserver};
use crate::recommender::{use_case_report, Constraint, Dataset, Direction, Query, Selection};

fn runtime(context: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| runtime(path.display(), e))
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| runtime(path.display(), e))
}

fn ensure_writable_dir(dir: &Path) -> Result<(), CliError> {
    let fail = |e: io::Error| {
        CliError::Runtime(format!(
            "output directory {} is not writable: {e}",
            dir.display()
        ))
    };
    fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(format!(".edgebench-probe-{}", std::process::id()));
    fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&probe)
        .map_err(fail)?;
    fs::remove_file(&probe).map_err(fail)
}

fn sweep_order(plan: Option<&SweepPlan>) -> SweepOrder {
    let plan = plan.cloned().unwrap_or_else(reference_plan);
    SweepOrder::new(&plan).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepSummary {
    pub runs: usize,
    pub failed: usize,
}

struct LogWriter<'a> {
    dir: &'a Path,
    echo: PlanEcho,
    out: &'a mut dyn Write,
    done: usize,
    total: usize,
}

impl SweepObserver for LogWriter<'_> {
    fn finished(&mut self, log: &RunLog) -> io::Result<()> {
        let path = self.dir.join(log_file_name(&log.config, log.iteration));
        write_file(&path, &to_jsonl(log, Some(self.echo)))
            .map_err(|e| io::Error::other(e.to_string()))?;
        self.done += 1;
        let mut line = format!(
            "[{}/{}] {} iter {}: {}",
            self.done, self.total, log.config, log.iteration, log.status
        );
        if log.status.is_completed() {
            if let (Ok(load), Ok(gen)) = (
                phase_latency(log, Phase::ModelLoad),
                phase_latency(log, Phase::Generate),
            ) {
                line += &format!(
                    ", load {load:.3} s, gen {gen:.3} s, {} tokens",
                    log.tokens_generated
                );
            }
        }
        writeln!(self.out, "{line}")
    }
}

/// Runs the sweep described by the configuration file, writing one log
/// file per run into `out_dir`.
pub fn cmd_sweep(
    config_path: &Path,
    out_dir: &Path,
    out: &mut dyn Write,
) -> Result<SweepSummary, CliError> {
    let config = load_config(config_path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", config_path.display())))?;
    let template = config
        .workload()
        .map_err(|e| CliError::Validation(format!("{}: {e}", config_path.display())))?
        .clone();
    ensure_writable_dir(out_dir)?;

    let points = crate::model::enumerate_sweep(&config.plan)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let mut writer = LogWriter {
        dir: out_dir,
        echo: PlanEcho {
            iterations: config.plan.iterations,
            token_target: config.plan.token_target,
            idle_seconds: config.plan.idle_seconds,
            interval_s: config.sampler.interval_s,
        },
        out,
        done: 0,
        total: points.len() * config.plan.iterations as usize,
    };
    match run_sweep(
        &config.plan,
        &template,
        &config.sampler,
        config.timeout,
        &mut writer,
    ) {
        Ok(logs) => Ok(SweepSummary {
            runs: logs.len(),
            failed: logs.iter().filter(|l| !l.status.is_completed()).count(),
        }),
        Err(SweepError::Plan(e)) => Err(CliError::Validation(e.to_string())),
        Err(e) => Err(CliError::Runtime(e.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalyzeSummary {
    pub parsed: usize,
    pub skipped: usize,
    pub entries: usize,
    pub excluded: usize,
}

/// Path of the exclusion report written next to a dataset file.
pub fn sidecar_path(dataset: &Path) -> PathBuf {
    let stem = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset.with_file_name(format!("{stem}.excluded.csv"))
}

/// Aggregates every `*.jsonl` log in `log_dir` into a dataset at
/// `out_path`, plus an exclusion report beside it.
pub fn cmd_analyze(
    log_dir: &Path,
    out_path: &Path,
    format: Format,
    plan: Option<&SweepPlan>,
    out: &mut dyn Write,
) -> Result<AnalyzeSummary, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(log_dir)
        .map_err(|e| runtime(log_dir.display(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();

    let mut skipped = 0;
    let mut groups: IndexMap<ConfigPoint, Vec<RunLog>> = IndexMap::new();
    for path in &files {
        match read_file(path).and_then(|t| parse_jsonl(&t).map_err(|e| runtime(path.display(), e)))
        {
            Ok((log, _)) => groups.entry(log.config.clone()).or_default().push(log),
            Err(e) => {
                eprintln!("warning: skipping {e}");
                skipped += 1;
            }
        }
    }
    let parsed = files.len() - skipped;
    if parsed == 0 {
        return Err(CliError::Runtime(format!(
            "no parseable logs in {}",
            log_dir.display()
        )));
    }

    let mut dataset = Dataset::new();
    let mut failures: Vec<(ConfigPoint, u32, String)> = Vec::new();
    for (config, logs) in &groups {
        match aggregate(logs) {
            Ok(Aggregate::Included(metrics)) => dataset
                .merge(metrics)
                .map_err(|e| CliError::Runtime(e.to_string()))?,
            Ok(Aggregate::Excluded {
                config,
                failures: f,
            }) => {
                let reason = f
                    .iter()
                    .map(|(i, r)| format!("iter {i}: {r}"))
                    .collect::<Vec<_>>()
                    .join("; ");
                dataset
                    .exclude(config.clone(), &reason)
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                failures.extend(f.into_iter().map(|(i, r)| (config.clone(), i, r)));
            }
            Err(e) => {
                eprintln!("warning: skipping {config}: {e}");
                skipped += logs.len();
            }
        }
    }
    let order = sweep_order(plan);
    dataset.sort(&order);
    failures.sort_by(|a, b| {
        order
            .sort_key(&a.0)
            .cmp(&order.sort_key(&b.0))
            .then(a.1.cmp(&b.1))
    });

    write_file(out_path, &write_dataset(&dataset, format))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "device",
        "power_model",
        "model",
        "quantization",
        "iteration",
        "reason",
    ])
    .map_err(|e| runtime("exclusion report", e))?;
    for (c, i, r) in &failures {
        w.write_record([
            &c.device,
            &c.power_model,
            &c.model,
            c.quantization.as_str(),
            &i.to_string(),
            r,
        ])
        .map_err(|e| runtime("exclusion report", e))?;
    }
    let sidecar = String::from_utf8(w.into_inner().map_err(|e| runtime("exclusion report", e))?)
        .expect("utf-8");
    write_file(&sidecar_path(out_path), &sidecar)?;

    let summary = AnalyzeSummary {
        parsed,
        skipped,
        entries: dataset.len(),
        excluded: dataset.excluded.len(),
    };
    writeln!(
        out,
        "{} log(s) parsed, {} skipped; {} configuration(s) written to {}, {} excluded",
        summary.parsed,
        summary.skipped,
        summary.entries,
        out_path.display(),
        summary.excluded
    )
    .map_err(|e| runtime("stdout", e))?;
    Ok(summary)
}

/// Ingests a table into the dataset at `out_path`, merging with what the
/// file already holds.
pub fn cmd_ingest(
    table: &Path,
    schema: Schema,
    out_path: &Path,
    format: Format,
    plan: Option<&SweepPlan>,
    out: &mut dyn Write,
) -> Result<Dataset, CliError> {
    let reference = reference_plan();
    let plan_ref = plan.unwrap_or(&reference);
    let text = read_file(table)?;
    let fresh = ingest(&text, schema, plan_ref)
        .map_err(|e| CliError::Validation(format!("{}: {e}", table.display())))?;
    let mut dataset = if out_path.exists() {
        let existing = read_file(out_path)?;
        read_dataset(&existing)
            .map_err(|e| CliError::Validation(format!("{}: {e}", out_path.display())))?
    } else {
        Dataset::new()
    };
    dataset.merge_dataset(fresh).map_err(|e| {
        CliError::Validation(format!(
            "merging {} into {}: {e}",
            table.display(),
            out_path.display()
        ))
    })?;
    dataset.sort(&sweep_order(Some(plan_ref)));
    write_file(out_path, &write_dataset(&dataset, format))?;
    writeln!(
        out,
        "{}: {} configuration(s), {} excluded",
        out_path.display(),
        dataset.len(),
        dataset.excluded.len()
    )
    .map_err(|e| runtime("stdout", e))?;
    Ok(dataset)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryFile {
    #[serde(default)]
    query: Vec<RawQuery>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuery {
    #[serde(default)]
    constraints: Vec<String>,
    objective: String,
    direction: String,
}

/// Parses a query file:
///
/// ```toml
/// [[query]]
/// constraints = ["peak_power_gen<=45", "total_latency<=40"]
/// objective = "accuracy"
/// direction = "max"
/// ```
pub fn parse_queries(text: &str) -> Result<Vec<Query>, CliError> {
    let file: QueryFile = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
    file.query
        .into_iter()
        .enumerate()
        .map(|(i, q)| {
            let ctx = |e: &dyn std::fmt::Display| CliError::Validation(format!("query[{i}]: {e}"));
            Ok(Query {
                constraints: q
                    .constraints
                    .iter()
                    .map(|c| c.parse::<Constraint>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| ctx(&e))?,
                objective: q.objective.parse().map_err(|e| ctx(&e))?,
                direction: q.direction.parse::<Direction>().map_err(|e| ctx(&e))?,
            })
        })
        .collect()
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = read_file(path)?;
    read_dataset(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Prints the use-case table for `queries`; optionally writes the full
/// ranking heads as CSV.
pub fn cmd_recommend(
    dataset_path: &Path,
    queries: &[Query],
    csv_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let dataset = load_dataset(dataset_path)?;
    let report =
        use_case_report(&dataset, queries).map_err(|e| CliError::Validation(e.to_string()))?;
    write!(out, "{report}").map_err(|e| runtime("stdout", e))?;
    if let Some(path) = csv_out {
        let mut w = csv::Writer::from_writer(Vec::new());
        let ok = "in-memory write";
        w.write_record([
            "query",
            "constraints",
            "objective",
            "direction",
            "rank",
            "device",
            "power_model",
            "model",
            "quantization",
            "value",
        ])
        .expect(ok);
        for (i, row) in report.rows.iter().enumerate() {
            let q = &row.query;
            let constraints = q
                .constraints
                .iter()
                .map(Constraint::to_string)
                .collect::<Vec<_>>()
                .join(" ");
            let dir = match q.direction {
                Direction::Minimize => "min",
                Direction::Maximize => "max",
            };
            let head = [
                i.to_string(),
                constraints,
                q.objective.to_string(),
                dir.to_string(),
            ];
            match &row.selection {
                Selection::Infeasible => {
                    let mut r = head.to_vec();
                    r.extend([
                        "".into(),
                        "infeasible".into(),
                        "".into(),
                        "".into(),
                        "".into(),
                        "".into(),
                    ]);
                    w.write_record(&r).expect(ok);
                }
                Selection::Feasible { .. } => {
                    for t in row.selection.ties() {
                        let c = &t.entry.config;
                        let mut r = head.to_vec();
                        r.extend([
                            "1".into(),
                            c.device.clone(),
                            c.power_model.clone(),
                            c.model.clone(),
                            c.quantization.to_string(),
                            t.value.to_string(),
                        ]);
                        w.write_record(&r).expect(ok);
                    }
                }
            }
        }
        write_file(
            path,
            &String::from_utf8(w.into_inner().expect(ok)).expect("utf-8"),
        )?;
    }
    Ok(())
}

/// Writes `<out_dir>/<figure>.csv` for each requested figure.
pub fn cmd_report(
    dataset_path: &Path,
    figures: &[Figure],
    out_dir: &Path,
    plan: Option<&SweepPlan>,
    token_target: u32,
    out: &mut dyn Write,
) -> Result<Vec<PathBuf>, CliError> {
    let dataset = load_dataset(dataset_path)?;
    let reference = reference_plan();
    let plan = plan.unwrap_or(&reference);
    let series = figures
        .iter()
        .map(|&f| figure_series(&dataset, f, plan, token_target).map(|s| (f, s)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    ensure_writable_dir(out_dir)?;
    let mut written = Vec::new();
    for (figure, text) in series {
        let path = out_dir.join(format!("{figure}.csv"));
        write_file(&path, &text)?;
        writeln!(out, "{}", path.display()).map_err(|e| runtime("stdout", e))?;
        written.push(path);
    }
    Ok(written)
}
