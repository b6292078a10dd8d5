#![no_main]

use libfuzzer_sys::fuzz_target;
use minsemi::semigroup::parse_kernel_meta;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = parse_kernel_meta(text) {
        let again = parse_kernel_meta(&serde_json::to_string(&m).unwrap()).expect("re-parse");
        assert_eq!(again, m);
    }
});
