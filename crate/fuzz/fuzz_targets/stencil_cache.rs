#![no_main]

use libfuzzer_sys::fuzz_target;
use reflector_core::stencil::{decode_table, encode_table};

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = decode_table(data) {
        let again = encode_table(&table);
        assert!(decode_table(&again).is_ok());
    }
});
