#![no_main]
use bearing_vit::signal_io::{decode_csv, encode_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = decode_csv(data) {
        assert_eq!(decode_csv(encode_csv(&samples).as_bytes()).unwrap(), samples);
    }
});
