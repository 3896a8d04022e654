#![no_main]

use libfuzzer_sys::fuzz_target;
use steam::data::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = Dataset::read_csv(data) {
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).expect("write to memory");
        assert_eq!(Dataset::read_csv(&buf[..]).expect("rewritten dataset parses"), ds);
    }
});
