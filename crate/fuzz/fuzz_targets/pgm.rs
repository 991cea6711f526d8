#![no_main]

use libfuzzer_sys::fuzz_target;
use reflector_core::density::parse_pgm;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = parse_pgm(data) {
        let v = r.sample(0.5, 1.0);
        assert!((0.0..=1.0).contains(&v));
    }
});
