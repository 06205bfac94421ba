#![no_main]
use bearing_vit::trainer::TrainHistory;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = TrainHistory::from_csv(text);
});
