#![no_main]

use std::path::Path;

use copsd::eval::{correlation_report, parse_metrics_csv};
use copsd_cli::report::build_report;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_metrics_csv(text, Path::new("fuzz.csv")) {
        let _ = correlation_report(&records);
        let _ = build_report(&records);
    }
});
