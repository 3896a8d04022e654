#![no_main]

use libfuzzer_sys::fuzz_target;
use steam::banks::parse_bank_dump;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(banks) = parse_bank_dump(text) {
            for (_, snap) in &banks {
                assert_eq!(snap.to_tensor().map_or(0, |t| t.len()), snap.rows() * snap.dim());
            }
        }
    }
});
