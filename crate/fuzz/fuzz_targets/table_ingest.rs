#![no_main]

use edgebench::cli::ingest::{ingest, Schema};
use edgebench::model::reference_plan;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&selector, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    let schema = match selector % 4 {
        0 => Schema::LoadLatency,
        1 => Schema::GenLatency,
        2 => Schema::Accuracy,
        _ => Schema::Full,
    };
    let _ = ingest(text, schema, &reference_plan());
});
