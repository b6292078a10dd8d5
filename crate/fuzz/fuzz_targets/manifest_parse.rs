#![no_main]

use libfuzzer_sys::fuzz_target;
use minsemi_cli::manifest::RunManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = RunManifest::parse(text) {
        let back = RunManifest::parse(&m.to_text()).expect("re-parse");
        assert_eq!(back.outputs, m.outputs);
    }
});
