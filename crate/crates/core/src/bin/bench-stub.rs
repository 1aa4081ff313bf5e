//! Scripted workload speaking the phase-marker protocol. Stands in for a
//! real model runner in tests and demos.

use std::io::{self, Write};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use clap::{Parser, ValueEnum};
use edgebench::orchestrator::{format_event, format_tokens, Boundary, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FailPoint {
    /// Exit nonzero after MODEL_LOAD_START.
    Load,
    /// Exit nonzero after GENERATE_START.
    Gen,
    /// Stop emitting after GENERATE_START and never exit.
    Hang,
}

#[derive(Debug, Parser)]
#[command(version, about = "Phase-marked workload stub")]
struct Args {
    /// Idle period in seconds.
    #[arg(long, default_value_t = 0.0)]
    idle: f64,
    /// Model load period in seconds.
    #[arg(long, default_value_t = 0.0)]
    load: f64,
    /// Generation period in seconds.
    #[arg(long, default_value_t = 0.0)]
    gen: f64,
    #[arg(long, default_value_t = 16)]
    tokens: u64,
    #[arg(long, value_enum)]
    fail: Option<FailPoint>,
    /// Only fail when --iteration equals this value.
    #[arg(long)]
    fail_iteration: Option<u32>,
    #[arg(long, default_value_t = 0)]
    iteration: u32,
    /// Report scripted timestamps starting at zero instead of sleeping.
    #[arg(long = "virtual")]
    virtual_time: bool,
}

struct Script {
    out: io::Stdout,
    origin: Instant,
    virtual_time: bool,
    t: f64,
}

impl Script {
    fn now(&self) -> f64 {
        if self.virtual_time {
            self.t
        } else {
            self.origin.elapsed().as_secs_f64()
        }
    }

    fn emit(&mut self, line: &str) {
        // flush per line so receipt times track emission
        let mut out = self.out.lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }

    fn mark(&mut self, phase: Phase, boundary: Boundary) {
        let line = format_event(phase, boundary, self.now());
        self.emit(&line);
    }

    fn spend(&mut self, seconds: f64) {
        if self.virtual_time {
            self.t += seconds;
        } else if seconds > 0.0 {
            thread::sleep(Duration::from_secs_f64(seconds));
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    for (name, v) in [("idle", args.idle), ("load", args.load), ("gen", args.gen)] {
        if !(v.is_finite() && v >= 0.0) {
            eprintln!("--{name} must be a finite non-negative number of seconds");
            return ExitCode::from(2);
        }
    }
    let fail = args
        .fail
        .filter(|_| args.fail_iteration.is_none_or(|k| k == args.iteration));
    let mut s = Script {
        out: io::stdout(),
        origin: Instant::now(),
        virtual_time: args.virtual_time,
        t: 0.0,
    };

    s.emit("stub: starting");
    s.mark(Phase::Idle, Boundary::Start);
    s.spend(args.idle);
    s.mark(Phase::Idle, Boundary::End);

    s.mark(Phase::ModelLoad, Boundary::Start);
    if fail == Some(FailPoint::Load) {
        eprintln!("stub: simulated load failure");
        return ExitCode::from(3);
    }
    s.emit("stub: loading weights");
    s.spend(args.load);
    s.mark(Phase::ModelLoad, Boundary::End);

    s.mark(Phase::Generate, Boundary::Start);
    match fail {
        Some(FailPoint::Gen) => {
            eprintln!("stub: simulated generation failure");
            return ExitCode::from(3);
        }
        Some(FailPoint::Hang) => loop {
            thread::sleep(Duration::from_secs(3600));
        },
        _ => {}
    }
    s.spend(args.gen);
    s.mark(Phase::Generate, Boundary::End);
    let line = format_tokens(args.tokens);
    s.emit(&line);
    ExitCode::SUCCESS
}
