#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(net) = hybridflow::Network::from_toml_str(text) {
            // Anything accepted must survive a round trip.
            let again = hybridflow::Network::from_toml_str(&net.to_toml_string()).unwrap();
            assert_eq!(net.n_bus(), again.n_bus());
        }
    }
});
