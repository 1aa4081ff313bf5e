#![no_main]

use edgebench::cli::logfile::{parse_jsonl, to_jsonl};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((log, plan)) = parse_jsonl(text) {
        let (again, plan_again) = parse_jsonl(&to_jsonl(&log, plan)).unwrap();
        assert_eq!(again, log);
        assert_eq!(plan_again, plan);
    }
});
