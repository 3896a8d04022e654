//! Replays the fuzz corpus seeds and a few hostile inputs through each
//! parser, with the same round-trip assertions as the fuzz targets.

use std::fs;
use std::path::PathBuf;

use steam::banks::parse_bank_dump;
use steam::checkpoint::Checkpoint;
use steam::config::{parse_config, to_text};
use steam::data::Dataset;

fn corpus(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds for {target}");
    files.into_iter().map(|p| fs::read(p).unwrap()).collect()
}

const HOSTILE: &[&[u8]] = &[
    b"",
    b"\xff\xfe\x00",
    b"=\n=\n",
    b"# steam-checkpoint v1\narray a 1 1\nNaN\n",
    b"# steam-checkpoint v1\narray a 99999999999 99999999999\n",
    b"# steam-bank-dump v1\nbank x 18446744073709551615 1\n",
    b"# steam-dataset v1\nx0,y,d\n1,,99999999999999999999\n",
    b"# steam-dataset v1\nx0,y,d\n1,2\n",
    b"tau = inf\n",
    b"hidden = 1,,2\n",
];

fn inputs(target: &str) -> Vec<Vec<u8>> {
    let mut all = corpus(target);
    all.extend(HOSTILE.iter().map(|b| b.to_vec()));
    all
}

#[test]
fn config_seeds() {
    let mut accepted = 0;
    for data in inputs("config_parse") {
        if let Ok(cfg) = std::str::from_utf8(&data).map_err(|_| ()).and_then(|t| parse_config(t).map_err(|_| ())) {
            accepted += 1;
            assert_eq!(parse_config(&to_text(&cfg)).unwrap(), cfg);
        }
    }
    assert!(accepted >= 3);
}

#[test]
fn dataset_seeds() {
    let mut accepted = 0;
    for data in inputs("dataset_read_csv") {
        if let Ok(ds) = Dataset::read_csv(&data[..]) {
            accepted += 1;
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).unwrap();
            assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), ds);
        }
    }
    assert!(accepted >= 2);
}

#[test]
fn checkpoint_seeds() {
    let mut accepted = 0;
    for data in inputs("checkpoint_parse") {
        let Ok(text) = std::str::from_utf8(&data) else { continue };
        if let Ok(c) = Checkpoint::parse(text) {
            accepted += 1;
            assert_eq!(Checkpoint::parse(&c.to_text()).unwrap(), c);
            let _ = c.encoder();
            let _ = c.memory();
        }
    }
    assert!(accepted >= 1);
}

#[test]
fn bank_dump_seeds() {
    let mut accepted = 0;
    for data in inputs("bank_dump_parse") {
        let Ok(text) = std::str::from_utf8(&data) else { continue };
        if let Ok(banks) = parse_bank_dump(text) {
            accepted += 1;
            for (_, s) in &banks {
                assert_eq!(s.to_tensor().map_or(0, |t| t.len()), s.rows() * s.dim());
            }
        }
    }
    assert!(accepted >= 2);
}
