#![no_main]

use libfuzzer_sys::fuzz_target;
use steam::config::{parse_config, to_text};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_config(text) {
            let again = parse_config(&to_text(&cfg)).expect("echoed configuration parses");
            assert_eq!(again, cfg);
        }
    }
});
