#![no_main]
use bearing_vit::trainer::decode_training_checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = decode_training_checkpoint(data);
});
