#![no_main]

use libfuzzer_sys::fuzz_target;
use sobolev::data::{parse_csv, write_csv_to};

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = parse_csv(data) {
        // accepted data must survive a write/read cycle unchanged
        let mut out = Vec::new();
        write_csv_to(&d, &mut out).unwrap();
        assert_eq!(parse_csv(out.as_slice()).unwrap(), d);
    }
});
