//! Interval-driven telemetry collection.
//!
//! A sampler polls a backend every `interval_s` seconds on the run's shared
//! [`Clock`] and hands samples back through a channel. Two backends exist:
//! a piecewise-linear mock trace (optionally on a virtual clock, which makes
//! runs fully deterministic) and an external adapter trait for real devices.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;

pub const DEFAULT_INTERVAL_S: f64 = 0.25;
/// Fastest polling rate the telemetry daemon supports.
pub const MIN_INTERVAL_S: f64 = 0.1;
/// A backend silent for this many intervals is considered stalled.
pub const STALL_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    /// Seconds on the run clock.
    pub t: f64,
    /// Total board power.
    pub power_w: f64,
    pub gpu_mem_mb: f64,
    pub ram_mb: f64,
}

/// One backend reading, without a timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub power_w: f64,
    pub gpu_mem_mb: f64,
    pub ram_mb: f64,
}

impl Reading {
    fn at(self, t: f64) -> TelemetrySample {
        TelemetrySample {
            t,
            power_w: self.power_w,
            gpu_mem_mb: self.gpu_mem_mb,
            ram_mb: self.ram_mb,
        }
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct AdapterError(pub String);

/// Interface a real telemetry source (e.g. a device stats daemon) must
/// implement. Memory values are attributed to the single workload process.
pub trait TelemetryAdapter: Send {
    fn poll(&mut self) -> Result<Reading, AdapterError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakpoint {
    pub t: f64,
    pub power_w: f64,
    pub gpu_mem_mb: f64,
    pub ram_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("trace has no breakpoints")]
    Empty,
}

/// Piecewise-linear telemetry script: breakpoints at strictly increasing
/// times, linear in between, held constant outside the covered range.
#[derive(Debug, Clone, PartialEq)]
pub struct MockTrace {
    points: Vec<Breakpoint>,
}

impl MockTrace {
    pub fn new(points: Vec<Breakpoint>) -> Result<Self, TraceError> {
        if points.is_empty() {
            return Err(TraceError::Empty);
        }
        for (i, p) in points.iter().enumerate() {
            let line = i + 1;
            check_breakpoint(p).map_err(|reason| TraceError::Line { line, reason })?;
            if i > 0 && p.t <= points[i - 1].t {
                return Err(TraceError::Line {
                    line,
                    reason: format!("time {} does not increase", p.t),
                });
            }
        }
        Ok(Self { points })
    }

    pub fn constant(power_w: f64, gpu_mem_mb: f64, ram_mb: f64) -> Self {
        Self {
            points: vec![Breakpoint {
                t: 0.0,
                power_w,
                gpu_mem_mb,
                ram_mb,
            }],
        }
    }

    /// Parses the `<t> <power_w> <gpu_mem_mb> <ram_mb>` text format. Blank
    /// lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut points = Vec::new();
        let mut prev_t: Option<f64> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(TraceError::Line {
                    line,
                    reason: format!("expected 4 fields, found {}", fields.len()),
                });
            }
            let mut vals = [0.0; 4];
            for (slot, field) in vals.iter_mut().zip(&fields) {
                *slot = field.parse().map_err(|_| TraceError::Line {
                    line,
                    reason: format!("'{field}' is not a number"),
                })?;
            }
            let bp = Breakpoint {
                t: vals[0],
                power_w: vals[1],
                gpu_mem_mb: vals[2],
                ram_mb: vals[3],
            };
            check_breakpoint(&bp).map_err(|reason| TraceError::Line { line, reason })?;
            if prev_t.is_some_and(|p| bp.t <= p) {
                return Err(TraceError::Line {
                    line,
                    reason: format!("time {} does not increase", bp.t),
                });
            }
            prev_t = Some(bp.t);
            points.push(bp);
        }
        Self::new(points)
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.points
    }

    pub fn evaluate(&self, t: f64) -> Reading {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        let pick = |b: Breakpoint| Reading {
            power_w: b.power_w,
            gpu_mem_mb: b.gpu_mem_mb,
            ram_mb: b.ram_mb,
        };
        if t <= first.t {
            return pick(first);
        }
        if t >= last.t {
            return pick(last);
        }
        // first index whose time exceeds t; never 0 or len here
        let hi = self.points.partition_point(|b| b.t <= t);
        let (a, b) = (self.points[hi - 1], self.points[hi]);
        let w = (t - a.t) / (b.t - a.t);
        let lerp = |x: f64, y: f64| x + (y - x) * w;
        Reading {
            power_w: lerp(a.power_w, b.power_w),
            gpu_mem_mb: lerp(a.gpu_mem_mb, b.gpu_mem_mb),
            ram_mb: lerp(a.ram_mb, b.ram_mb),
        }
    }
}

fn check_breakpoint(b: &Breakpoint) -> Result<(), String> {
    if !b.t.is_finite() {
        return Err("time must be finite".into());
    }
    for (name, v) in [
        ("power_w", b.power_w),
        ("gpu_mem_mb", b.gpu_mem_mb),
        ("ram_mb", b.ram_mb),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(format!("{name} must be finite and non-negative, got {v}"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    /// Scripted trace. With a seed the sampler runs on a virtual clock and
    /// sample times are reproducible; without one it samples in real time.
    Mock {
        trace: MockTrace,
        virtual_seed: Option<u64>,
    },
    /// A named device adapter. None ship with this crate; use
    /// [`start_with_adapter`] to plug one in.
    External(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    pub interval_s: f64,
    pub backend: Backend,
}

impl SamplerSpec {
    pub fn mock(trace: MockTrace) -> Self {
        Self {
            interval_s: DEFAULT_INTERVAL_S,
            backend: Backend::Mock {
                trace,
                virtual_seed: None,
            },
        }
    }

    pub fn with_interval(mut self, interval_s: f64) -> Self {
        self.interval_s = interval_s;
        self
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        validate_interval(self.interval_s)
    }

    /// The clock a run using this spec should be timed with.
    pub fn run_clock(&self) -> Clock {
        match self.backend {
            Backend::Mock {
                virtual_seed: Some(_),
                ..
            } => Clock::virtual_at(0.0),
            _ => Clock::monotonic(),
        }
    }
}

fn validate_interval(interval_s: f64) -> Result<(), SamplerError> {
    if interval_s.is_finite() && interval_s >= MIN_INTERVAL_S {
        Ok(())
    } else {
        Err(SamplerError::Interval(interval_s))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("sampling interval {0} s is below the {MIN_INTERVAL_S} s floor")]
    Interval(f64),
    #[error("telemetry backend '{0}' is not available")]
    BackendUnavailable(String),
    #[error("telemetry backend stalled: no sample for {silent_s:.3} s (limit {limit_s:.3} s)")]
    Stalled { silent_s: f64, limit_s: f64 },
    #[error("telemetry backend failed: {0}")]
    Backend(String),
}

enum Message {
    Sample(TelemetrySample),
    Failed(String),
}

struct Worker {
    stop: Arc<AtomicBool>,
    heartbeat: Arc<AtomicU64>,
    rx: Receiver<Message>,
    join: Option<JoinHandle<()>>,
}

enum Mode {
    Threaded(Worker),
    Virtual { trace: MockTrace, rng: ChaCha8Rng },
}

/// A running sampler. Stopping is idempotent.
pub struct SamplerHandle {
    mode: Mode,
    clock: Clock,
    interval_s: f64,
    start_t: f64,
    collected: Vec<TelemetrySample>,
    failure: Option<SamplerError>,
    stopped: bool,
}

impl fmt::Debug for SamplerHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SamplerHandle")
            .field("interval_s", &self.interval_s)
            .field("start_t", &self.start_t)
            .field("samples", &self.collected.len())
            .field("stopped", &self.stopped)
            .finish()
    }
}

/// Starts sampling on `clock` according to `spec`.
pub fn start_sampling(spec: &SamplerSpec, clock: &Clock) -> Result<SamplerHandle, SamplerError> {
    spec.validate()?;
    match &spec.backend {
        Backend::External(name) => Err(SamplerError::BackendUnavailable(name.clone())),
        Backend::Mock {
            trace,
            virtual_seed: Some(seed),
        } => {
            if !clock.is_virtual() {
                return Err(SamplerError::Backend(
                    "a seeded mock backend needs a virtual clock".into(),
                ));
            }
            Ok(SamplerHandle::new(
                Mode::Virtual {
                    trace: trace.clone(),
                    rng: ChaCha8Rng::seed_from_u64(*seed),
                },
                clock,
                spec.interval_s,
            ))
        }
        Backend::Mock {
            trace,
            virtual_seed: None,
        } => {
            let trace = trace.clone();
            let origin = clock.now();
            spawn_worker(spec.interval_s, clock, move |t| {
                Ok(trace.evaluate(t - origin))
            })
        }
    }
}

/// Starts real-time sampling from a caller-supplied adapter.
pub fn start_with_adapter(
    interval_s: f64,
    mut adapter: Box<dyn TelemetryAdapter>,
    clock: &Clock,
) -> Result<SamplerHandle, SamplerError> {
    validate_interval(interval_s)?;
    spawn_worker(interval_s, clock, move |_| {
        adapter.poll().map_err(|e| e.to_string())
    })
}

fn spawn_worker<F>(
    interval_s: f64,
    clock: &Clock,
    mut poll: F,
) -> Result<SamplerHandle, SamplerError>
where
    F: FnMut(f64) -> Result<Reading, String> + Send + 'static,
{
    if clock.is_virtual() {
        return Err(SamplerError::Backend(
            "real-time sampling needs a monotonic clock".into(),
        ));
    }
    let stop = Arc::new(AtomicBool::new(false));
    let start_t = clock.now();
    let heartbeat = Arc::new(AtomicU64::new(start_t.to_bits()));
    let (tx, rx) = mpsc::channel();
    let join = {
        let stop = Arc::clone(&stop);
        let heartbeat = Arc::clone(&heartbeat);
        let clock = clock.clone();
        thread::Builder::new()
            .name("telemetry-sampler".into())
            .spawn(move || {
                sample_loop(
                    interval_s, start_t, &clock, &stop, &heartbeat, &tx, &mut poll,
                )
            })
            .map_err(|e| SamplerError::Backend(format!("cannot start sampler thread: {e}")))?
    };
    let worker = Worker {
        stop,
        heartbeat,
        rx,
        join: Some(join),
    };
    let mut handle = SamplerHandle::new(Mode::Threaded(worker), clock, interval_s);
    handle.start_t = start_t;
    Ok(handle)
}

fn sample_loop<F>(
    interval_s: f64,
    start_t: f64,
    clock: &Clock,
    stop: &AtomicBool,
    heartbeat: &AtomicU64,
    tx: &Sender<Message>,
    poll: &mut F,
) where
    F: FnMut(f64) -> Result<Reading, String>,
{
    let mut tick: u64 = 0;
    let mut last_t = f64::NEG_INFINITY;
    loop {
        let target = start_t + tick as f64 * interval_s;
        loop {
            let remaining = target - clock.now();
            if remaining <= 0.0 {
                break;
            }
            thread::sleep(Duration::from_secs_f64(remaining.min(0.005)));
        }
        // A stop request is honored at the next tick, so the final sample
        // lands at or after the request.
        let stopping = stop.load(Ordering::Acquire);
        let t = clock.now();
        tick += 1;
        if t <= last_t {
            continue;
        }
        match poll(t) {
            Ok(reading) => {
                last_t = t;
                heartbeat.store(t.to_bits(), Ordering::Release);
                if tx.send(Message::Sample(reading.at(t))).is_err() {
                    return;
                }
            }
            Err(e) => {
                let _ = tx.send(Message::Failed(e));
                return;
            }
        }
        if stopping {
            return;
        }
        // skip ticks missed while the backend was slow
        let due = ((clock.now() - start_t) / interval_s).floor() as u64;
        tick = tick.max(due);
    }
}

impl SamplerHandle {
    fn new(mode: Mode, clock: &Clock, interval_s: f64) -> Self {
        Self {
            mode,
            clock: clock.clone(),
            interval_s,
            start_t: clock.now(),
            collected: Vec::new(),
            failure: None,
            stopped: false,
        }
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn interval_s(&self) -> f64 {
        self.interval_s
    }

    /// Drains pending samples and reports backend failure or stall.
    pub fn check(&mut self) -> Result<(), SamplerError> {
        if let Some(f) = &self.failure {
            return Err(f.clone());
        }
        if let Mode::Threaded(worker) = &self.mode {
            for msg in worker.rx.try_iter() {
                match msg {
                    Message::Sample(s) => self.collected.push(s),
                    Message::Failed(e) => self.failure = Some(SamplerError::Backend(e)),
                }
            }
            if self.failure.is_none() && !self.stopped {
                let last = f64::from_bits(worker.heartbeat.load(Ordering::Acquire));
                let silent_s = self.clock.now() - last;
                let limit_s = STALL_FACTOR * self.interval_s;
                if silent_s > limit_s {
                    self.failure = Some(SamplerError::Stalled { silent_s, limit_s });
                }
            }
        }
        match &self.failure {
            Some(f) => Err(f.clone()),
            None => Ok(()),
        }
    }

    /// Stops sampling and returns every sample since start, strictly
    /// increasing in time. Later calls return the same list.
    pub fn stop(&mut self) -> Vec<TelemetrySample> {
        if self.stopped {
            return self.collected.clone();
        }
        self.stopped = true;
        let end_t = self.clock.now();
        match &mut self.mode {
            Mode::Threaded(worker) => {
                worker.stop.store(true, Ordering::Release);
                let stalled = matches!(self.failure, Some(SamplerError::Stalled { .. }));
                if let Some(join) = worker.join.take() {
                    // a stalled adapter may never return; leave its thread behind
                    if !stalled {
                        let _ = join.join();
                    }
                }
                for msg in worker.rx.try_iter() {
                    match msg {
                        Message::Sample(s) => self.collected.push(s),
                        Message::Failed(e) => {
                            self.failure.get_or_insert(SamplerError::Backend(e));
                        }
                    }
                }
            }
            Mode::Virtual { trace, rng } => {
                self.collected = virtual_samples(trace, rng, self.start_t, end_t, self.interval_s);
            }
        }
        self.collected.clone()
    }
}

impl Drop for SamplerHandle {
    fn drop(&mut self) {
        if let Mode::Threaded(worker) = &self.mode {
            worker.stop.store(true, Ordering::Release);
        }
    }
}

/// Sample times for a virtual run: the first at `start`, then one per
/// interval with a seeded jitter of up to 20% of the interval, until a
/// sample at or past `end` has been taken.
fn virtual_samples(
    trace: &MockTrace,
    rng: &mut ChaCha8Rng,
    start: f64,
    end: f64,
    interval_s: f64,
) -> Vec<TelemetrySample> {
    let mut out = vec![trace.evaluate(0.0).at(start)];
    let mut k = 1u64;
    while out[out.len() - 1].t < end {
        let jitter = rng.gen_range(-0.2..=0.2) * interval_s;
        let t = start + k as f64 * interval_s + jitter;
        out.push(trace.evaluate(t - start).at(t));
        k += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    fn ramp() -> MockTrace {
        MockTrace::parse("0 5 100 200\n10 15 300 400\n").unwrap()
    }

    #[test]
    fn parse_trace() {
        let trace = MockTrace::parse("# t p g r\n0 5 0 0\n\n2.5 7 1 2 # step\n").unwrap();
        assert_eq!(trace.breakpoints().len(), 2);
        assert!(matches!(
            MockTrace::parse("0 1 2"),
            Err(TraceError::Line { line: 1, .. })
        ));
        assert!(matches!(
            MockTrace::parse("0 1 2 3\n0 1 2 3"),
            Err(TraceError::Line { line: 2, .. })
        ));
        assert!(matches!(
            MockTrace::parse("0 -1 2 3"),
            Err(TraceError::Line { .. })
        ));
        assert_eq!(MockTrace::parse("# nothing\n"), Err(TraceError::Empty));
    }

    #[test]
    fn evaluate_interpolates_and_holds() {
        let trace = ramp();
        assert_eq!(trace.evaluate(-1.0).power_w, 5.0);
        assert_eq!(trace.evaluate(5.0).power_w, 10.0);
        assert_eq!(trace.evaluate(2.5).gpu_mem_mb, 150.0);
        assert_eq!(trace.evaluate(99.0).ram_mb, 400.0);
    }

    #[test]
    fn interval_floor() {
        let spec = SamplerSpec::mock(MockTrace::constant(5.0, 0.0, 0.0)).with_interval(0.05);
        assert_eq!(
            start_sampling(&spec, &Clock::monotonic()).unwrap_err(),
            SamplerError::Interval(0.05)
        );
    }

    #[test]
    fn external_backend_is_unavailable() {
        let spec = SamplerSpec {
            interval_s: 0.25,
            backend: Backend::External("jtop".into()),
        };
        assert_eq!(
            start_sampling(&spec, &Clock::monotonic()).unwrap_err(),
            SamplerError::BackendUnavailable("jtop".into())
        );
    }

    #[test]
    fn constant_trace_realtime() {
        let spec = SamplerSpec::mock(MockTrace::constant(5.0, 10.0, 20.0));
        let clock = Clock::monotonic();
        let mut handle = start_sampling(&spec, &clock).unwrap();
        thread::sleep(Duration::from_millis(2000));
        handle.check().unwrap();
        let samples = handle.stop();
        assert!(
            (8..=10).contains(&samples.len()),
            "{} samples",
            samples.len()
        );
        assert!(samples.iter().all(|s| s.power_w == 5.0 && s.ram_mb == 20.0));
        for w in samples.windows(2) {
            let gap = w[1].t - w[0].t;
            assert!(gap > 0.0);
            assert!((0.5 * 0.25..=10.0 * 0.25).contains(&gap), "gap {gap}");
        }
        assert_eq!(handle.stop(), samples);
    }

    #[test]
    fn immediate_stop_is_valid() {
        let spec = SamplerSpec::mock(MockTrace::constant(5.0, 0.0, 0.0));
        let mut handle = start_sampling(&spec, &Clock::monotonic()).unwrap();
        let samples = handle.stop();
        assert!(samples.len() <= 2);
        assert_eq!(handle.stop(), samples);
    }

    #[test]
    fn ramp_samples_lie_on_the_line() {
        let spec = SamplerSpec::mock(ramp());
        let clock = Clock::monotonic();
        let origin = clock.now();
        let mut handle = start_sampling(&spec, &clock).unwrap();
        thread::sleep(Duration::from_millis(1200));
        let samples = handle.stop();
        assert!(samples.len() >= 4);
        for s in samples {
            // oracle: 5 W + 1 W/s since the sampler started
            let expected = 5.0 + (s.t - origin);
            assert!(
                (s.power_w - expected).abs() < 2e-3,
                "{} vs {}",
                s.power_w,
                expected
            );
        }
    }

    #[test]
    fn virtual_sampler_is_deterministic() {
        let run = |seed| {
            let spec = SamplerSpec {
                interval_s: 0.25,
                backend: Backend::Mock {
                    trace: ramp(),
                    virtual_seed: Some(seed),
                },
            };
            let clock = spec.run_clock();
            let mut handle = start_sampling(&spec, &clock).unwrap();
            clock.advance_to(10.0);
            handle.stop()
        };
        let a = run(7);
        assert_eq!(a, run(7));
        assert_ne!(a, run(8));
        assert_eq!(a[0].t, 0.0);
        assert!(a.last().unwrap().t >= 10.0);
        for w in a.windows(2) {
            let gap = w[1].t - w[0].t;
            assert!((0.125..=2.5).contains(&gap));
        }
        for s in &a {
            let expected = 5.0 + s.t.min(10.0);
            assert!((s.power_w - expected).abs() < 1e-12);
        }
    }

    struct Stuck;
    impl TelemetryAdapter for Stuck {
        fn poll(&mut self) -> Result<Reading, AdapterError> {
            thread::sleep(Duration::from_secs(3600));
            unreachable!()
        }
    }

    struct Broken;
    impl TelemetryAdapter for Broken {
        fn poll(&mut self) -> Result<Reading, AdapterError> {
            Err(AdapterError("rail read failed".into()))
        }
    }

    #[test]
    fn stalled_adapter_is_detected() {
        let clock = Clock::monotonic();
        let mut handle = start_with_adapter(0.1, Box::new(Stuck), &clock).unwrap();
        let begin = Instant::now();
        loop {
            match handle.check() {
                Err(SamplerError::Stalled { .. }) => break,
                Err(e) => panic!("unexpected {e}"),
                Ok(()) => {
                    assert!(begin.elapsed() < Duration::from_secs(5));
                    thread::sleep(Duration::from_millis(20));
                }
            }
        }
        assert!(handle.stop().is_empty());
    }

    #[test]
    fn adapter_error_is_reported() {
        let clock = Clock::monotonic();
        let mut handle = start_with_adapter(0.1, Box::new(Broken), &clock).unwrap();
        thread::sleep(Duration::from_millis(50));
        assert!(matches!(handle.check(), Err(SamplerError::Backend(_))));
    }
}
