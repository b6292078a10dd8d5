#![no_main]

use libfuzzer_sys::fuzz_target;
use minsemi::linalg::CsrMatrix;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = CsrMatrix::from_triplet_text(text) {
        let back = CsrMatrix::from_triplet_text(&m.to_triplet_text()).expect("re-parse");
        assert_eq!(back.nnz(), m.nnz());
    }
});
