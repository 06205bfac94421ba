#![no_main]
use bearing_vit::vit::ViTConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = ViTConfig::from_text(text);
});
