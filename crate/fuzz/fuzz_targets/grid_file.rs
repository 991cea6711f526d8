#![no_main]

use libfuzzer_sys::fuzz_target;
use reflector_core::sphere_grid::parse_grid_file;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(points) = parse_grid_file(text) {
            assert!(points.iter().all(|p| (p.norm() - 1.0).abs() <= 1e-6));
        }
    }
});
