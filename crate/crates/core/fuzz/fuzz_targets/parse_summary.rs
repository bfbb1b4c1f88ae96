#![no_main]

use libfuzzer_sys::fuzz_target;
use sobolev::experiment::parse_summary;

fuzz_target!(|data: &[u8]| {
    let _ = parse_summary(data);
});
