#![no_main]

use copsd::corpus::CorpusSpec;
use copsd::distill::DistillConfig;
use copsd::eval::EvalConfig;
use copsd::grpo::GrpoConfig;
use copsd_cli::config::parse_config;
use copsd_cli::pretrain::PretrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = parse_config::<CorpusSpec>(text, "fuzz") {
        let _ = spec.validate();
    }
    if let Ok(c) = parse_config::<PretrainConfig>(text, "fuzz") {
        let _ = c.validate();
    }
    if let Ok(c) = parse_config::<DistillConfig>(text, "fuzz") {
        let _ = c.validate();
    }
    if let Ok(c) = parse_config::<GrpoConfig>(text, "fuzz") {
        let _ = c.validate();
    }
    if let Ok(c) = parse_config::<EvalConfig>(text, "fuzz") {
        let _ = c.validate();
    }
});
