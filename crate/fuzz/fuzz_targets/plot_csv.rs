#![no_main]

use copsd_cli::plot::plot_metrics;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = plot_metrics(text, "fuzz.csv");
});
