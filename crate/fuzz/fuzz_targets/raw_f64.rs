#![no_main]
use bearing_vit::signal_io::{decode_raw_f64le, encode_raw_f64le};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = decode_raw_f64le(data) {
        assert_eq!(encode_raw_f64le(&samples), data);
    }
});
