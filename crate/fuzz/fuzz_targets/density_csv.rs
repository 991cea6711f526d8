#![no_main]

use libfuzzer_sys::fuzz_target;
use reflector_core::density::parse_density_csv;

// First byte picks the expected point count.
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    if let Ok(text) = std::str::from_utf8(rest) {
        if let Ok(d) = parse_density_csv(text, n as usize) {
            assert_eq!(d.values().len(), n as usize);
            assert!(d.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
});
