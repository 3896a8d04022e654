#![no_main]

use libfuzzer_sys::fuzz_target;
use steam::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ckpt) = Checkpoint::parse(text) {
            let again = Checkpoint::parse(&ckpt.to_text()).expect("rewritten checkpoint parses");
            assert_eq!(again, ckpt);
            let _ = ckpt.encoder();
            let _ = ckpt.memory();
        }
    }
});
