#![no_main]

use edgebench::sampler::MockTrace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(trace) = MockTrace::parse(text) {
        for t in [-1.0, 0.0, 0.5, 1e3, f64::MAX] {
            let r = trace.evaluate(t);
            assert!(r.power_w.is_finite() && r.power_w >= 0.0);
        }
    }
});
