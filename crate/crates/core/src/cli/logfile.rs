//! Line-delimited JSON run logs: one meta record, then events and samples,
//! then one final record.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ConfigPoint;
use crate::orchestrator::{PhaseEvent, RunLog, RunStatus};
use crate::sampler::TelemetrySample;

/// Sweep settings echoed into every log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEcho {
    pub iterations: u32,
    pub token_target: u32,
    pub idle_seconds: f64,
    pub interval_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Meta {
        config: ConfigPoint,
        iteration: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        plan: Option<PlanEcho>,
    },
    Event(PhaseEvent),
    Sample(TelemetrySample),
    Final {
        tokens_generated: u64,
        status: RunStatus,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("log is truncated: no final record")]
    Truncated,
    #[error("log is empty")]
    Empty,
    #[error("inconsistent log: {0}")]
    Invalid(String),
}

pub fn to_jsonl(log: &RunLog, plan: Option<PlanEcho>) -> String {
    let mut out = String::new();
    let mut push = |record: &LogRecord| {
        let line = serde_json::to_string(record).expect("log records serialize");
        let _ = writeln!(out, "{line}");
    };
    push(&LogRecord::Meta {
        config: log.config.clone(),
        iteration: log.iteration,
        plan,
    });
    for e in &log.events {
        push(&LogRecord::Event(*e));
    }
    for s in &log.samples {
        push(&LogRecord::Sample(*s));
    }
    push(&LogRecord::Final {
        tokens_generated: log.tokens_generated,
        status: log.status.clone(),
    });
    out
}

/// Parses a complete log. Blank lines are ignored.
pub fn parse_jsonl(text: &str) -> Result<(RunLog, Option<PlanEcho>), LogError> {
    let mut head: Option<(ConfigPoint, u32, Option<PlanEcho>)> = None;
    let mut events = Vec::new();
    let mut samples = Vec::new();
    let mut tail: Option<(u64, RunStatus)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |reason: String| LogError::Line { line, reason };
        let record: LogRecord = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if tail.is_some() {
            return Err(err("record after the final record".into()));
        }
        match record {
            LogRecord::Meta {
                config,
                iteration,
                plan,
            } => {
                if head.is_some() {
                    return Err(err("second meta record".into()));
                }
                head = Some((config, iteration, plan));
                continue;
            }
            _ if head.is_none() => return Err(err("first record must be meta".into())),
            LogRecord::Event(e) => events.push(e),
            LogRecord::Sample(s) => samples.push(s),
            LogRecord::Final {
                tokens_generated,
                status,
            } => tail = Some((tokens_generated, status)),
        }
    }
    let (config, iteration, plan) = head.ok_or(LogError::Empty)?;
    let (tokens_generated, status) = tail.ok_or(LogError::Truncated)?;
    let log = RunLog {
        config,
        iteration,
        events,
        samples,
        tokens_generated,
        status,
    };
    log.check().map_err(LogError::Invalid)?;
    Ok((log, plan))
}

/// Percent-encodes every byte outside `[A-Za-z0-9.-]`, so `_` can separate
/// fields unambiguously.
fn encode_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b == b'.' || b == b'-' {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out
}

/// `<device>_<powermodel>_<model>_<quant>_iter<k>.jsonl`, injective over
/// configuration point and iteration.
pub fn log_file_name(config: &ConfigPoint, iteration: u32) -> String {
    format!(
        "{}_{}_{}_{}_iter{iteration}.jsonl",
        encode_component(&config.device),
        encode_component(&config.power_model),
        encode_component(&config.model),
        config.quantization,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Quantization;
    use crate::orchestrator::{Boundary, Phase, EVENT_SEQUENCE};
    use proptest::prelude::*;

    fn arb_log() -> impl Strategy<Value = RunLog> {
        (
            "[ -~]{0,12}",
            "[ -~]{0,6}",
            "[ -~]{0,10}",
            any::<bool>(),
            any::<u32>(),
            0usize..=6,
            prop::collection::vec((1e-6f64..10.0, 0f64..80.0, 0f64..1e5, 0f64..1e5), 0..20),
            1u64..100_000,
            prop::option::of("[a-z]{1,10}"),
            any::<bool>(),
        )
            .prop_map(
                |(d, p, m, q, iteration, n_events, raw_samples, tokens, failed, receipt_only)| {
                    let quant = if q {
                        Quantization::Int4
                    } else {
                        Quantization::None
                    };
                    let mut t = 0.0;
                    let events = EVENT_SEQUENCE[..n_events]
                        .iter()
                        .enumerate()
                        .map(|(i, &(phase, boundary))| PhaseEvent {
                            phase,
                            boundary,
                            t_workload: (!receipt_only).then_some(1234.5 + i as f64 * 0.1),
                            t_receipt: i as f64 / 3.0,
                        })
                        .collect();
                    let samples = raw_samples
                        .into_iter()
                        .map(|(dt, power_w, gpu_mem_mb, ram_mb)| {
                            t += dt;
                            TelemetrySample {
                                t,
                                power_w,
                                gpu_mem_mb,
                                ram_mb,
                            }
                        })
                        .collect();
                    let status = match failed {
                        None if n_events == 6 => RunStatus::Completed,
                        reason => RunStatus::Failed(reason.unwrap_or_else(|| "protocol".into())),
                    };
                    RunLog {
                        config: ConfigPoint::new(&d, &p, &m, quant),
                        iteration,
                        events,
                        samples,
                        tokens_generated: tokens,
                        status,
                    }
                },
            )
    }

    proptest! {
        #[test]
        fn round_trip(log in arb_log(), echo in any::<bool>()) {
            let plan = echo.then_some(PlanEcho { iterations: 5, token_target: 512, idle_seconds: 15.0, interval_s: 0.25 });
            let text = to_jsonl(&log, plan);
            let (back, plan_back) = parse_jsonl(&text).unwrap();
            prop_assert_eq!(back, log);
            prop_assert_eq!(plan_back, plan);
        }

        #[test]
        fn file_names_are_injective(
            a in ("[ -~]{0,8}", "[ -~]{0,4}", "[ -~]{0,6}", any::<bool>(), 0u32..20),
            b in ("[ -~]{0,8}", "[ -~]{0,4}", "[ -~]{0,6}", any::<bool>(), 0u32..20),
        ) {
            let point = |x: &(String, String, String, bool, u32)| {
                let q = if x.3 { Quantization::Int4 } else { Quantization::None };
                (ConfigPoint::new(&x.0, &x.1, &x.2, q), x.4)
            };
            let (pa, ia) = point(&a);
            let (pb, ib) = point(&b);
            prop_assert_eq!(log_file_name(&pa, ia) == log_file_name(&pb, ib), (pa, ia) == (pb, ib));
        }

        #[test]
        fn parse_never_panics(text in "\\PC{0,200}") {
            let _ = parse_jsonl(&text);
        }
    }

    #[test]
    fn file_name_shape() {
        let c = ConfigPoint::new(
            "AGX Orin Devkit",
            "MAXN",
            "pythia-70m-deduped",
            Quantization::Int4,
        );
        assert_eq!(
            log_file_name(&c, 3),
            "AGX%20Orin%20Devkit_MAXN_pythia-70m-deduped_int4_iter3.jsonl"
        );
        let odd = ConfigPoint::new("a_b", "7W-AI", "x/y", Quantization::None);
        assert_eq!(log_file_name(&odd, 0), "a%5Fb_7W-AI_x%2Fy_none_iter0.jsonl");
    }

    #[test]
    fn structural_errors() {
        let c = ConfigPoint::new("d", "p", "m", Quantization::None);
        let log = RunLog {
            config: c,
            iteration: 0,
            events: vec![PhaseEvent {
                phase: Phase::Idle,
                boundary: Boundary::Start,
                t_workload: Some(0.0),
                t_receipt: 0.0,
            }],
            samples: vec![],
            tokens_generated: 0,
            status: RunStatus::Failed("crash".into()),
        };
        let text = to_jsonl(&log, None);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            parse_jsonl(&lines[..2].join("\n")),
            Err(LogError::Truncated)
        );
        assert_eq!(parse_jsonl(""), Err(LogError::Empty));
        assert!(matches!(
            parse_jsonl(&lines[1..].join("\n")),
            Err(LogError::Line { line: 1, .. })
        ));
        let doubled = format!("{text}{}", lines[2]);
        assert!(matches!(
            parse_jsonl(&doubled),
            Err(LogError::Line { line: 4, .. })
        ));
        let garbage = text.replace("\"event\"", "\"evnt\"");
        assert!(matches!(
            parse_jsonl(&garbage),
            Err(LogError::Line { line: 2, .. })
        ));
    }
}
