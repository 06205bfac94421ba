#![no_main]
use bearing_vit::evaluator::{decode_confusion_csv, encode_confusion_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cm) = decode_confusion_csv(text) {
        assert_eq!(decode_confusion_csv(&encode_confusion_csv(&cm)).unwrap(), cm);
    }
});
