use std::io::{self, BufRead, BufReader};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{failure, parse_marker_line, Marker, PhaseEvent, RunLog, RunStatus, EVENT_SEQUENCE};
use super::{RunParams, WorkloadTemplate};
use crate::clock::Clock;
use crate::model::{enumerate_sweep, ConfigPoint, PlanError, SweepPlan};
use crate::sampler::{start_sampling, SamplerError, SamplerSpec};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);
const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub token_target: u32,
    pub idle_seconds: f64,
    pub timeout: Duration,
}

impl RunSettings {
    pub fn from_plan(plan: &SweepPlan, timeout: Duration) -> Self {
        Self {
            token_target: plan.token_target,
            idle_seconds: plan.idle_seconds,
            timeout,
        }
    }
}

/// Hooks into a sweep's process lifecycle. `finished` is where logs get
/// persisted; an error there aborts the sweep.
pub trait SweepObserver {
    fn spawned(&mut self, _config: &ConfigPoint, _iteration: u32, _pid: u32) {}
    fn exited(&mut self, _pid: u32) {}
    fn finished(&mut self, _log: &RunLog) -> io::Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl SweepObserver for NoopObserver {}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("sweep aborted after {} run(s): {source}", logs.len())]
    Sampler {
        source: SamplerError,
        logs: Vec<RunLog>,
    },
    #[error("could not persist run log: {source}")]
    Persist {
        source: io::Error,
        logs: Vec<RunLog>,
    },
}

/// Runs every configuration point of `plan` for `plan.iterations`
/// back-to-back iterations, one workload process at a time.
///
/// A failed run never stops the sweep; a sampler failure does, after the
/// affected log has been handed to the observer.
pub fn run_sweep(
    plan: &SweepPlan,
    template: &WorkloadTemplate,
    sampler: &SamplerSpec,
    timeout: Duration,
    observer: &mut dyn SweepObserver,
) -> Result<Vec<RunLog>, SweepError> {
    if plan.devices.is_empty() || plan.models.is_empty() {
        return Ok(Vec::new());
    }
    let points = enumerate_sweep(plan)?;
    if let Err(source) = sampler.validate() {
        return Err(SweepError::Sampler {
            source,
            logs: Vec::new(),
        });
    }
    let settings = RunSettings::from_plan(plan, timeout);
    let mut logs = Vec::with_capacity(points.len() * plan.iterations as usize);
    for point in &points {
        for iteration in 0..plan.iterations {
            let (log, sampler_failure) =
                match execute(point, iteration, &settings, template, sampler, observer) {
                    Ok(done) => done,
                    Err(source) => return Err(SweepError::Sampler { source, logs }),
                };
            let persisted = observer.finished(&log);
            logs.push(log);
            if let Err(source) = persisted {
                return Err(SweepError::Persist { source, logs });
            }
            if let Some(source) = sampler_failure {
                return Err(SweepError::Sampler { source, logs });
            }
        }
    }
    Ok(logs)
}

/// Runs one iteration of `config`. Only a sampler that cannot start is an
/// error; every other problem is recorded in the log's status.
pub fn run_single(
    config: &ConfigPoint,
    iteration: u32,
    settings: &RunSettings,
    template: &WorkloadTemplate,
    sampler: &SamplerSpec,
) -> Result<RunLog, SamplerError> {
    run_single_observed(
        config,
        iteration,
        settings,
        template,
        sampler,
        &mut NoopObserver,
    )
}

pub fn run_single_observed(
    config: &ConfigPoint,
    iteration: u32,
    settings: &RunSettings,
    template: &WorkloadTemplate,
    sampler: &SamplerSpec,
    observer: &mut dyn SweepObserver,
) -> Result<RunLog, SamplerError> {
    execute(config, iteration, settings, template, sampler, observer).map(|(log, _)| log)
}

/// Tracks the marker stream against the expected sequence.
struct Protocol {
    next: usize,
    tokens: Option<u64>,
    first_t: Option<f64>,
    last_t: f64,
}

impl Protocol {
    fn new() -> Self {
        Self {
            next: 0,
            tokens: None,
            first_t: None,
            last_t: f64::NEG_INFINITY,
        }
    }

    fn complete(&self) -> bool {
        self.next == EVENT_SEQUENCE.len() && self.tokens.is_some()
    }

    fn accept(&mut self, line: &str, t_read: f64, clock: &Clock) -> Result<Option<PhaseEvent>, ()> {
        match parse_marker_line(line).map_err(|_| ())? {
            Marker::Chatter => Ok(None),
            Marker::Tokens(n) => {
                if self.next != EVENT_SEQUENCE.len() || self.tokens.is_some() || n == 0 {
                    return Err(());
                }
                self.tokens = Some(n);
                Ok(None)
            }
            Marker::Event { phase, boundary, t } => {
                if self.tokens.is_some()
                    || EVENT_SEQUENCE.get(self.next) != Some(&(phase, boundary))
                {
                    return Err(());
                }
                if t < self.last_t {
                    return Err(());
                }
                self.last_t = t;
                self.next += 1;
                // On a virtual clock the receipt time is the workload time,
                // rebased so the first marker arrives at zero.
                let t_receipt = if clock.is_virtual() {
                    let base = *self.first_t.get_or_insert(t);
                    clock.advance_to(t - base)
                } else {
                    t_read
                };
                Ok(Some(PhaseEvent {
                    phase,
                    boundary,
                    t_workload: Some(t),
                    t_receipt,
                }))
            }
        }
    }
}

fn execute(
    config: &ConfigPoint,
    iteration: u32,
    settings: &RunSettings,
    template: &WorkloadTemplate,
    sampler_spec: &SamplerSpec,
    observer: &mut dyn SweepObserver,
) -> Result<(RunLog, Option<SamplerError>), SamplerError> {
    let clock = sampler_spec.run_clock();
    let mut sampler = start_sampling(sampler_spec, &clock)?;
    let argv = template.render(&RunParams {
        config,
        iteration,
        token_target: settings.token_target,
        idle_seconds: settings.idle_seconds,
    });

    let finish = |events, samples, tokens_generated, status| RunLog {
        config: config.clone(),
        iteration,
        events,
        samples,
        tokens_generated,
        status,
    };

    let spawned = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn();
    let mut child = match spawned {
        Ok(child) => child,
        Err(_) => {
            let samples = sampler.stop();
            let log = finish(
                Vec::new(),
                samples,
                0,
                RunStatus::Failed(failure::SPAWN.into()),
            );
            return Ok((log, sampler.check().err()));
        }
    };
    let pid = child.id();
    observer.spawned(config, iteration, pid);

    let stdout = child.stdout.take().expect("stdout is piped");
    let (tx, rx) = mpsc::channel::<(String, f64)>();
    let reader_clock = clock.clone();
    // Detached: a grandchild holding the pipe open must not block the run.
    thread::spawn(move || {
        let mut reader = BufReader::new(stdout);
        let mut buf = Vec::new();
        loop {
            buf.clear();
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) | Err(_) => break,
                Ok(_) => {
                    let t = reader_clock.now();
                    let line = String::from_utf8_lossy(&buf).into_owned();
                    if tx.send((line, t)).is_err() {
                        break;
                    }
                }
            }
        }
    });

    let deadline = Instant::now() + settings.timeout;
    let mut protocol = Protocol::new();
    let mut events = Vec::new();
    let mut failed: Option<&str> = None;
    let mut sampler_error = None;
    let mut stream_open = true;
    let mut exit: Option<ExitStatus> = None;

    loop {
        if let Err(e) = sampler.check() {
            sampler_error = Some(e);
            failed = Some(failure::SAMPLER);
            break;
        }
        if Instant::now() >= deadline {
            failed = Some(failure::TIMEOUT);
            break;
        }
        if stream_open {
            match rx.recv_timeout(POLL) {
                Ok((line, t_read)) => match protocol.accept(&line, t_read, &clock) {
                    Ok(Some(event)) => events.push(event),
                    Ok(None) => {}
                    Err(()) => {
                        failed = Some(failure::PROTOCOL);
                        break;
                    }
                },
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => stream_open = false,
            }
        } else {
            match child.try_wait() {
                Ok(Some(status)) => {
                    exit = Some(status);
                    break;
                }
                Ok(None) => thread::sleep(POLL),
                Err(_) => {
                    failed = Some(failure::CRASH);
                    break;
                }
            }
        }
    }
    if exit.is_none() {
        let _ = child.kill();
        let _ = child.wait();
    }
    observer.exited(pid);

    let samples = sampler.stop();
    if failed.is_none() {
        if let Err(e) = sampler.check() {
            sampler_error = Some(e);
            failed = Some(failure::SAMPLER);
        }
    }
    let status = match (failed, exit) {
        (Some(reason), _) => RunStatus::Failed(reason.into()),
        (None, Some(status)) if !status.success() => RunStatus::Failed(failure::CRASH.into()),
        (None, _) if !protocol.complete() => RunStatus::Failed(failure::PROTOCOL.into()),
        (None, _) => RunStatus::Completed,
    };
    let tokens = protocol.tokens.unwrap_or(0);
    Ok((finish(events, samples, tokens, status), sampler_error))
}
