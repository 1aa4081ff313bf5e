//! The line protocol a workload uses to announce phase boundaries.
//!
//! ```text
//! @@BENCH <PHASE>_<BOUNDARY> <t>    PHASE ∈ {IDLE, MODEL_LOAD, GENERATE}, BOUNDARY ∈ {START, END}
//! @@BENCH TOKENS <n>
//! ```
//!
//! `t` is decimal seconds with at least six fractional digits. Lines that do
//! not start with the prefix are workload chatter.

use std::fmt;

use thiserror::Error;

use super::{Boundary, Phase};

pub const MARKER_PREFIX: &str = "@@BENCH ";
const MIN_FRACTION_DIGITS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marker {
    Event {
        phase: Phase,
        boundary: Boundary,
        t: f64,
    },
    Tokens(u64),
    Chatter,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed marker {line:?}: {reason}")]
pub struct MarkerError {
    pub line: String,
    pub reason: String,
}

pub fn parse_marker_line(line: &str) -> Result<Marker, MarkerError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let Some(body) = line.strip_prefix(MARKER_PREFIX) else {
        return Ok(Marker::Chatter);
    };
    let fail = |reason: &str| MarkerError {
        line: line.to_string(),
        reason: reason.to_string(),
    };
    let (name, value) = body
        .split_once(' ')
        .ok_or_else(|| fail("expected '<NAME> <value>'"))?;
    if value.contains(' ') {
        return Err(fail("trailing fields"));
    }
    if name == "TOKENS" {
        if value.is_empty() || !value.bytes().all(|b| b.is_ascii_digit()) {
            return Err(fail("token count must be a decimal integer"));
        }
        return value
            .parse()
            .map(Marker::Tokens)
            .map_err(|_| fail("token count out of range"));
    }
    let (phase_name, boundary_name) = name
        .rsplit_once('_')
        .ok_or_else(|| fail("unknown marker name"))?;
    let phase = match phase_name {
        "IDLE" => Phase::Idle,
        "MODEL_LOAD" => Phase::ModelLoad,
        "GENERATE" => Phase::Generate,
        _ => return Err(fail("unknown phase")),
    };
    let boundary = match boundary_name {
        "START" => Boundary::Start,
        "END" => Boundary::End,
        _ => return Err(fail("unknown boundary")),
    };
    let t = parse_timestamp(value).ok_or_else(|| {
        fail("timestamp must be decimal seconds with at least 6 fractional digits")
    })?;
    Ok(Marker::Event { phase, boundary, t })
}

fn parse_timestamp(s: &str) -> Option<f64> {
    let (int, frac) = s.split_once('.')?;
    let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || !digits(frac) || frac.len() < MIN_FRACTION_DIGITS {
        return None;
    }
    let t: f64 = s.parse().ok()?;
    t.is_finite().then_some(t)
}

/// Formats an event marker line (without newline).
pub fn format_event(phase: Phase, boundary: Boundary, t: f64) -> String {
    format!(
        "{MARKER_PREFIX}{}_{} {t:.6}",
        phase.marker_name(),
        boundary.marker_name()
    )
}

pub fn format_tokens(n: u64) -> String {
    format!("{MARKER_PREFIX}TOKENS {n}")
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Marker::Event { phase, boundary, t } => f.write_str(&format_event(phase, boundary, t)),
            Marker::Tokens(n) => f.write_str(&format_tokens(n)),
            Marker::Chatter => f.write_str("<chatter>"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn event_marker() {
        assert_eq!(
            parse_marker_line("@@BENCH GENERATE_END 123.456789"),
            Ok(Marker::Event {
                phase: Phase::Generate,
                boundary: Boundary::End,
                t: 123.456789
            })
        );
        assert_eq!(
            parse_marker_line("@@BENCH MODEL_LOAD_START 0.0000001\r\n"),
            Ok(Marker::Event {
                phase: Phase::ModelLoad,
                boundary: Boundary::Start,
                t: 1e-7
            })
        );
    }

    #[test]
    fn tokens_marker() {
        assert_eq!(
            parse_marker_line("@@BENCH TOKENS 512"),
            Ok(Marker::Tokens(512))
        );
    }

    #[test]
    fn chatter() {
        assert_eq!(parse_marker_line("loading weights..."), Ok(Marker::Chatter));
        assert_eq!(parse_marker_line(""), Ok(Marker::Chatter));
        assert_eq!(parse_marker_line("@@BENCHMARK 1"), Ok(Marker::Chatter));
        assert_eq!(parse_marker_line(" @@BENCH TOKENS 1"), Ok(Marker::Chatter));
    }

    #[test]
    fn malformed_markers() {
        for bad in [
            "@@BENCH ",
            "@@BENCH TOKENS",
            "@@BENCH TOKENS -1",
            "@@BENCH TOKENS 1.0",
            "@@BENCH TOKENS 99999999999999999999999",
            "@@BENCH IDLE_START 1.5",
            "@@BENCH IDLE_START 1.12345",
            "@@BENCH IDLE_START .123456",
            "@@BENCH IDLE_START -1.123456",
            "@@BENCH IDLE_MIDDLE 1.123456",
            "@@BENCH WARMUP_START 1.123456",
            "@@BENCH IDLE_START 1.123456 extra",
            "@@BENCH IDLE_START  1.123456",
            "@@BENCH idle_start 1.123456",
        ] {
            assert!(
                parse_marker_line(bad).is_err(),
                "{bad:?} should be rejected"
            );
        }
    }

    proptest! {
        #[test]
        fn formatted_markers_parse_back(
            phase in prop::sample::select(vec![Phase::Idle, Phase::ModelLoad, Phase::Generate]),
            start in any::<bool>(),
            micros in 0u64..10_000_000_000_000,
            n in any::<u64>(),
        ) {
            let boundary = if start { Boundary::Start } else { Boundary::End };
            let t = micros as f64 / 1e6;
            match parse_marker_line(&format_event(phase, boundary, t)).unwrap() {
                Marker::Event { phase: p, boundary: b, t: parsed } => {
                    prop_assert_eq!(p, phase);
                    prop_assert_eq!(b, boundary);
                    prop_assert!((parsed - t).abs() <= 5e-7);
                }
                other => prop_assert!(false, "{:?}", other),
            }
            prop_assert_eq!(parse_marker_line(&format_tokens(n)).unwrap(), Marker::Tokens(n));
        }

        #[test]
        fn never_panics(line in ".*") {
            let _ = parse_marker_line(&line);
            let _ = parse_marker_line(&format!("{MARKER_PREFIX}{line}"));
        }
    }
}
