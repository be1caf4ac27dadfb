#![no_main]

use libfuzzer_sys::fuzz_target;
use seed_core::data::{parse_registry, Registry};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entries) = parse_registry(text) {
        for e in &entries {
            let ratio = e.split_ratio().expect("validated split");
            let (a, b, c) = ratio.lengths(1000);
            assert_eq!(a + b + c, 1000);
        }
        Registry::builtin().merge(entries);
    }
});
