#![no_main]

use std::path::Path;

use flatpwa::scenario::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sc) = Scenario::from_toml_str(text, Path::new(".")) {
        let _ = sc.sample_time();
        let _ = sc.solve_options();
    }
});
