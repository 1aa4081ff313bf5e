#![no_main]

use edgebench::orchestrator::{format_event, format_tokens, parse_marker_line, Marker};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    match parse_marker_line(line) {
        Ok(Marker::Event { phase, boundary, t }) => {
            // formatting keeps microseconds
            match parse_marker_line(&format_event(phase, boundary, t)).unwrap() {
                Marker::Event { phase: p, boundary: b, t: t2 } => {
                    assert_eq!((p, b), (phase, boundary));
                    assert!((t2 - t).abs() <= 5e-7 + t * 1e-15);
                }
                other => panic!("reformatted event parsed as {other:?}"),
            }
        }
        Ok(Marker::Tokens(n)) => {
            assert_eq!(parse_marker_line(&format_tokens(n)).unwrap(), Marker::Tokens(n));
        }
        Ok(Marker::Chatter) | Err(_) => {}
    }
});
