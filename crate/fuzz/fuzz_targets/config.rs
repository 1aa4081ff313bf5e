#![no_main]

use std::path::Path;

use edgebench::cli::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_config(text, Path::new("/nonexistent-edgebench-fuzz"));
    }
});
