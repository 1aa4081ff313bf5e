#![no_main]

use edgebench::cli::parse_queries;
use edgebench::recommender::Constraint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_queries(text);
    for line in text.lines() {
        if let Ok(c) = line.parse::<Constraint>() {
            assert!(c.bound.is_finite());
            assert_eq!(c.to_string().parse::<Constraint>().unwrap(), c);
        }
    }
});
