#![no_main]

use copsd::corpus::{Vocab, VocabFile};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = serde_json::from_slice::<VocabFile>(data) {
        if let Ok(v) = Vocab::from_file(&file) {
            assert_eq!(Vocab::from_file(&v.to_file()).unwrap(), v);
        }
    }
});
