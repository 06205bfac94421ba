#![no_main]
use bearing_vit::cli::prepared::SplitIndex;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(index) = SplitIndex::parse(text) {
        assert_eq!(SplitIndex::parse(&index.to_text()).unwrap(), index);
    }
});
