#![no_main]
use bearing_vit::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_text(text) {
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }
});
