use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Time source shared by the orchestrator and the sampler of one run.
///
/// Readings are seconds since the clock was created. A virtual clock only
/// moves when [`Clock::advance_to`] is called, which makes whole runs
/// reproducible.
#[derive(Debug, Clone)]
pub enum Clock {
    Monotonic(Instant),
    Virtual(Arc<AtomicU64>),
}

impl Clock {
    pub fn monotonic() -> Self {
        Clock::Monotonic(Instant::now())
    }

    pub fn virtual_at(t: f64) -> Self {
        Clock::Virtual(Arc::new(AtomicU64::new(t.to_bits())))
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Clock::Virtual(_))
    }

    pub fn now(&self) -> f64 {
        match self {
            Clock::Monotonic(origin) => origin.elapsed().as_secs_f64(),
            Clock::Virtual(bits) => f64::from_bits(bits.load(Ordering::Acquire)),
        }
    }

    /// Moves a virtual clock forward to `t` (never backwards) and returns the
    /// new reading. A monotonic clock ignores `t`.
    pub fn advance_to(&self, t: f64) -> f64 {
        match self {
            Clock::Monotonic(_) => self.now(),
            Clock::Virtual(bits) => {
                let mut current = bits.load(Ordering::Acquire);
                loop {
                    let next = f64::from_bits(current).max(t);
                    match bits.compare_exchange_weak(
                        current,
                        next.to_bits(),
                        Ordering::AcqRel,
                        Ordering::Acquire,
                    ) {
                        Ok(_) => return next,
                        Err(actual) => current = actual,
                    }
                }
            }
        }
    }
}
