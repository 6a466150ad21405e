#![no_main]

use copsd::corpus::{parse_record, DistillRecord, EvalRecord, PretrainRecord, Vocab};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let vocab = Vocab::new(3);
    for line in text.lines() {
        let _ = parse_record::<PretrainRecord>(line);
        let _ = parse_record::<EvalRecord>(line);
        if let Ok(r) = parse_record::<DistillRecord>(line) {
            let _ = r.student_context(&vocab);
            let _ = r.teacher_context(&vocab);
        }
    }
});
