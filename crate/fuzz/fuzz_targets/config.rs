#![no_main]

use libfuzzer_sys::fuzz_target;
use reflector_cli::validate_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        match validate_config(text) {
            Ok(c) => assert!(c.epsilon > 0.0 && c.epsilon < 1.0),
            Err(errors) => assert!(!errors.is_empty()),
        }
    }
});
