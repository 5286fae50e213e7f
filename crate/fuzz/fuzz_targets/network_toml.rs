#![no_main]

use flatpwa::relu_pwa::ReluNetwork;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(net) = ReluNetwork::from_toml_str(text) {
        let _ = net.forward(&vec![0.0; net.n0()]);
    }
});
