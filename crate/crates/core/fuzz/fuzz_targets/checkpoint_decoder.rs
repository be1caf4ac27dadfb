#![no_main]

use libfuzzer_sys::fuzz_target;
use seed_core::checkpoint::{decode, load_bytes};

fuzz_target!(|data: &[u8]| {
    if decode(data).is_ok() {
        let _ = load_bytes(data);
    }
});
