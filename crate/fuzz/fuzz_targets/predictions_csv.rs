#![no_main]

use std::path::Path;

use gbql::io::{parse_predictions, ReadOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for normalize in [false, true] {
        if let Ok(table) = parse_predictions(data, Path::new("fuzz.csv"), ReadOptions { normalize }) {
            // Anything accepted must be usable as an unlabeled set.
            let _ = gbql::io::assemble_dataset(&table, None, None);
        }
    }
});
