#![no_main]

use copsd::corpus::{parse_rendering, Dialect, Vocab};
use copsd::eval::{extract_boxed, language_consistency, repeat_rate};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let vocab = Vocab::new(3);
    let ids: Vec<u32> = data.iter().map(|&b| b as u32).collect();
    if let Ok(tokens) = vocab.decode_all(&ids) {
        assert_eq!(vocab.encode_all(&tokens).unwrap(), ids);
    }
    let _ = vocab.to_text(&ids);
    let _ = parse_rendering(&vocab, &ids);
    let _ = extract_boxed(&ids);
    let _ = repeat_rate(&ids, 4);
    let _ = language_consistency(&vocab, &ids, Dialect(1));
});
