#![no_main]

use libfuzzer_sys::fuzz_target;
use minsemi::config::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = Config::parse(text) {
        let _ = Config::parse(&c.to_toml());
        let _ = c.model();
    }
});
