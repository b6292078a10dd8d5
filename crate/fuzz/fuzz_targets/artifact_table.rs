#![no_main]

use libfuzzer_sys::fuzz_target;
use minsemi_cli::plot::read_table;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = read_table(text);
});
