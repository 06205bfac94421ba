#![no_main]
use bearing_vit::stft::{decode_tfimage, encode_tfimage};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_tfimage(data) {
        assert_eq!(encode_tfimage(&img), data);
    }
});
