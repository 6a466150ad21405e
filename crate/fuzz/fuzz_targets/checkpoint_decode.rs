#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = copsd::model::decode_checkpoint(data) {
        // anything that decodes must re-encode to a decodable file
        let bytes = copsd::model::encode_checkpoint(&ck.model, ck.step_tag);
        assert!(copsd::model::decode_checkpoint(&bytes).is_ok());
    }
});
