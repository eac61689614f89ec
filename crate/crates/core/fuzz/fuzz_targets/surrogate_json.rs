#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = hybridflow::surrogate::ClusteredSurrogate::from_json(text) {
            let _ = s.predict(&vec![0.0; s.n_inputs]);
        }
    }
});
