#![no_main]

use std::path::Path;

use gbql::io::{parse_labels, ReadOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for normalize in [false, true] {
        let _ = parse_labels(data, Path::new("fuzz.csv"), ReadOptions { normalize });
    }
});
