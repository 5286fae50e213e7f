#![no_main]

use flatpwa::sim::Reference;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for (n_z, n_v) in [(2, 1), (4, 2), (3, 2)] {
        if let Ok(r) = Reference::from_csv_str(text, n_z, n_v) {
            let again = Reference::from_csv_str(&r.to_csv_string(), n_z, n_v).expect("written reference parses");
            assert_eq!(again.t.len(), r.t.len());
        }
    }
});
