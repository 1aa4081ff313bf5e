#![no_main]

use edgebench::cli::dataset_io::read_dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = read_dataset(text);
    }
});
