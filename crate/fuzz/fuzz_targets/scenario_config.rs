#![no_main]

use gbql::io::from_toml;
use gbql::simulation::SimulationConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = from_toml::<SimulationConfig>(text);
    }
});
