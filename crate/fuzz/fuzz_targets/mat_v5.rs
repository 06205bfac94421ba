#![no_main]
use bearing_vit::signal_io::{decode_signal, mat, LoadOptions, SignalFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = mat::parse_header(data);
    if let Ok(file) = mat::parse_mat(data) {
        let _ = file.names();
        let _ = file.select(None);
        let _ = file.select(Some("DE_time"));
    }
    let _ = decode_signal(data, SignalFormat::MatV5, "fuzz".into(), &LoadOptions::default());
});
