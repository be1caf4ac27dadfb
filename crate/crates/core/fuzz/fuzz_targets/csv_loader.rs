#![no_main]

use libfuzzer_sys::fuzz_target;
use seed_core::data::{read_csv, CsvOptions};

fuzz_target!(|data: &[u8]| {
    let Some((&flag, text)) = data.split_first() else { return };
    let options = CsvOptions { date_col: flag & 1 == 1 };
    if let Ok(ds) = read_csv(text, "fuzz", &options) {
        assert_eq!(ds.values().len(), ds.n_rows() * ds.n_vars());
        assert!(ds.values().iter().all(|v| v.is_finite()));
    }
});
