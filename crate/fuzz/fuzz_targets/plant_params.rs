#![no_main]

use flatpwa::plants::PlantParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = PlantParams::from_toml_str(text) {
        let plant = p.build();
        let _ = plant.workspace();
        let _ = plant.brunovsky();
    }
});
