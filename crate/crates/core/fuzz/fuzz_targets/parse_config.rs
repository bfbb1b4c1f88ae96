#![no_main]

use libfuzzer_sys::fuzz_target;
use sobolev::config::{resolve, Overrides};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(o) = Overrides::parse(text) {
            let _ = resolve(&o);
        }
    }
});
