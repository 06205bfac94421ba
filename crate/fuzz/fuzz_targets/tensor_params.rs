#![no_main]
use bearing_vit::tensor::{decode_tensors, encode_tensors};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((tensors, used)) = decode_tensors(data) {
        assert_eq!(encode_tensors(&tensors), &data[..used]);
    }
});
