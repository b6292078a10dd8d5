#![no_main]

use libfuzzer_sys::fuzz_target;
use minsemi::stationary::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = Checkpoint::from_text(text) {
        assert_eq!(Checkpoint::from_text(&c.to_text()).expect("re-parse"), c);
    }
});
