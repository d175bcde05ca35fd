#![no_main]

use gbql::commands::FitResult;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(result) = FitResult::from_json(text) {
        // Accepted results re-serialize and parse back to the same value.
        let again = result.to_json().expect("accepted result serializes");
        assert_eq!(FitResult::from_json(&again).expect("round trip parses"), result);
    }
});
