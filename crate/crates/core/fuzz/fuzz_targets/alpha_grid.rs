#![no_main]

use libfuzzer_sys::fuzz_target;
use seed_core::cli::parse_alpha_grid;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(grid) = parse_alpha_grid(text) {
        assert!(!grid.is_empty());
        assert!(grid.iter().all(|v| v.is_finite()));
    }
});
